#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "dud/error.hpp"
#include "dud/noise_model.hpp"
#include "dud/nn/graph.hpp"
#include "dud/nn/layers.hpp"
#include "dud/nn/ops.hpp"
#include "dud/nn/optim.hpp"
#include "dud/vae.hpp"
#include "helpers.hpp"

using namespace dud;
using namespace dud::nn;
using testutil::random_tensor;

namespace {

using Builder = std::function<Var(Graph&, std::vector<Var>&)>;

// Largest |fd - analytic| / (1 + |fd|) for loss = sum(out * proj), over all inputs.
double fd_error(std::vector<Tensor> inputs, const Builder& build, float h = 1e-3f) {
  Rng prng(9);
  Tensor proj;
  auto eval = [&](std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Graph g;
    ParameterStore store;
    std::vector<Var> vars;
    for (auto& x : xs) vars.push_back(g.parameter(store, store.add("p", x)));
    const Var y = build(g, vars);
    const Tensor& yv = g.value(y);
    if (proj.data.empty()) proj = random_tensor(yv.n, yv.h, yv.w, yv.c, prng);
    double s = 0.0;
    for (std::size_t i = 0; i < yv.data.size(); ++i) s += static_cast<double>(yv.data[i]) * proj.data[i];
    if (grads) {
      g.backward(y, proj);
      for (std::size_t k = 0; k < xs.size(); ++k) grads->push_back(store[k].grad);
    }
    return s;
  };
  std::vector<Tensor> grads;
  eval(inputs, &grads);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
      const float o = inputs[k].data[i];
      inputs[k].data[i] = o + h;
      const double a = eval(inputs, nullptr);
      inputs[k].data[i] = o - h;
      const double b = eval(inputs, nullptr);
      inputs[k].data[i] = o;
      const double fd = (a - b) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - grads[k].data[i]) / (1.0 + std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("noise_model") {

TEST_CASE("Gaussian log-likelihood closed forms") {
  const GaussianNoiseModel m(1.0);
  const std::vector<double> x{0.25}, s{0.25}, s2{2.25};
  CHECK(m.log_likelihood(x, s) == doctest::Approx(-0.918939).epsilon(1e-6));
  CHECK(m.log_likelihood(x, s2) == doctest::Approx(-2.918939).epsilon(1e-6));

  const ImagePlane a(1, 1, 3.0f), b(1, 1, 3.0f);
  CHECK(m.log_likelihood(a, b) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)));

  const GaussianNoiseModel m2(0.5);
  const std::vector<double> x3{1.0, 2.0, 3.0}, s3{1.5, 2.0, 2.0};
  const double expected = 3 * -0.5 * std::log(2 * std::numbers::pi * 0.25) - (0.25 + 0.0 + 1.0) / (2 * 0.25);
  CHECK(m2.log_likelihood(x3, s3) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("log-likelihood peaks at s = x") {
  const GaussianNoiseModel m(0.7);
  const std::vector<double> x{0.3};
  const double at_x = m.log_likelihood(x, x);
  for (double d = -2.0; d <= 2.0; d += 0.05) {
    if (std::abs(d) < 1e-12) continue;
    const std::vector<double> s{0.3 + d};
    CHECK(m.log_likelihood(x, s) < at_x);
  }
}

TEST_CASE("log-likelihood depends only on the residual") {
  Rng rng(2);
  const GaussianNoiseModel m(0.4);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(7), s(7);
    for (auto& v : x) v = rng.normal();
    for (auto& v : s) v = rng.normal();
    const double c = 10.0 * rng.normal();
    std::vector<double> xc = x, sc = s;
    for (auto& v : xc) v += c;
    for (auto& v : sc) v += c;
    CHECK(m.log_likelihood(xc, sc) == doctest::Approx(m.log_likelihood(x, s)).epsilon(1e-10));
  }
}

TEST_CASE("negative log-likelihood gradient matches finite differences") {
  Rng rng(3);
  for (double sigma : {0.1, 1.0, 3.0}) {
    const GaussianNoiseModel m(sigma);
    std::vector<double> x(16), s(16), g(16);
    for (auto& v : x) v = rng.normal();
    for (auto& v : s) v = rng.normal();
    m.neg_log_likelihood_grad(x, s, g);
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(g[i] == doctest::Approx((s[i] - x[i]) / (sigma * sigma)).epsilon(1e-12));
      const double h = 1e-5 * std::max(1.0, std::abs(s[i]));
      std::vector<double> sp = s, sm = s;
      sp[i] += h;
      sm[i] -= h;
      const double fd = (-m.log_likelihood(x, sp) + m.log_likelihood(x, sm)) / (2 * h);
      CHECK(std::abs(fd - g[i]) <= 1e-4 * std::max(1.0, std::abs(g[i])));
    }
  }
}

TEST_CASE("invalid sigma and shape mismatch") {
  CHECK_THROWS_AS(GaussianNoiseModel(0.0), ConfigError);
  CHECK_THROWS_AS(GaussianNoiseModel(-1.0), ConfigError);
  CHECK_THROWS_AS(GaussianNoiseModel(std::nan("")), ConfigError);
  const GaussianNoiseModel m(1.0);
  CHECK_THROWS_AS(m.log_likelihood(ImagePlane(2, 2), ImagePlane(2, 3)), ShapeError);
  CHECK(m.rescaled(2.0).sigma() == doctest::Approx(0.5));
}

}  // TEST_SUITE

TEST_SUITE("nn") {

TEST_CASE("op gradients match finite differences") {
  Rng r(1);
  const double tol = 5e-3;
  CHECK(fd_error({random_tensor(2, 5, 6, 3, r), random_tensor(3, 3, 3, 4, r), random_tensor(1, 1, 1, 4, r)},
                 [](Graph& g, std::vector<Var>& v) { return conv2d(g, v[0], v[1], v[2], 1); }) < tol);
  CHECK(fd_error({random_tensor(2, 6, 6, 3, r), random_tensor(3, 3, 3, 4, r), random_tensor(1, 1, 1, 4, r)},
                 [](Graph& g, std::vector<Var>& v) { return conv2d(g, v[0], v[1], v[2], 2); }) < tol);
  CHECK(fd_error({random_tensor(2, 5, 6, 3, r), random_tensor(1, 1, 3, 4, r), random_tensor(1, 1, 1, 4, r)},
                 [](Graph& g, std::vector<Var>& v) { return conv2d(g, v[0], v[1], v[2], 1); }) < tol);
  CHECK(fd_error({random_tensor(2, 5, 6, 3, r)}, [](Graph& g, std::vector<Var>& v) { return relu(g, v[0]); }) < tol);
  CHECK(fd_error({random_tensor(2, 3, 4, 3, r)}, [](Graph& g, std::vector<Var>& v) { return upsample2x(g, v[0]); }) <
        tol);
  CHECK(fd_error({random_tensor(2, 3, 4, 3, r), random_tensor(2, 3, 4, 2, r)},
                 [](Graph& g, std::vector<Var>& v) { return concat(g, v[0], v[1]); }) < tol);
  CHECK(fd_error({random_tensor(2, 3, 4, 5, r)},
                 [](Graph& g, std::vector<Var>& v) { return slice_channels(g, v[0], 1, 3); }) < tol);
  CHECK(fd_error({random_tensor(2, 3, 4, 5, r)}, [](Graph& g, std::vector<Var>& v) { return add(g, v[0], v[0]); }) <
        tol);
  CHECK(fd_error({random_tensor(2, 3, 4, 5, r)}, [](Graph& g, std::vector<Var>& v) { return scale(g, v[0], -1.5f); }) <
        tol);
  CHECK(fd_error({random_tensor(2, 3, 4, 5, r), random_tensor(2, 3, 4, 5, r)},
                 [](Graph& g, std::vector<Var>& v) { return kl_standard_normal(g, v[0], v[1], 7.0); }) < tol);
  const Tensor eps = random_tensor(2, 3, 4, 5, r);
  CHECK(fd_error({random_tensor(2, 3, 4, 5, r), random_tensor(2, 3, 4, 5, r)},
                 [eps](Graph& g, std::vector<Var>& v) { return reparameterize(g, v[0], v[1], eps); }) < tol);
  const Tensor target = random_tensor(2, 3, 4, 1, r);
  CHECK(fd_error({random_tensor(2, 3, 4, 1, r)},
                 [target](Graph& g, std::vector<Var>& v) { return gaussian_nll_mean(g, v[0], target, 0.7); }) < tol);
  CHECK(fd_error({random_tensor(2, 3, 4, 1, r)},
                 [target](Graph& g, std::vector<Var>& v) { return l2_mean(g, v[0], target); }) < tol);
  CHECK(fd_error({random_tensor(2, 3, 4, 1, r)},
                 [target](Graph& g, std::vector<Var>& v) { return l1_mean(g, v[0], target); }) < tol);
}

TEST_CASE("residual block gradient") {
  ParameterStore ps;
  Rng init(4);
  const ResBlock rb = ResBlock::create(ps, "rb", 3, 4, 3, init);
  Rng r(5);
  double worst = 0.0;
  for (int t = 0; t < 3; ++t) {
    Tensor x = random_tensor(1, 4, 4, 3, r);
    worst = std::max(worst, fd_error({x}, [&](Graph& g, std::vector<Var>& v) { return rb(g, ps, v[0]); }, 1e-3f));
  }
  CHECK(worst < 5e-2);
}

TEST_CASE("a reused node accumulates gradient from every consumer") {
  Graph g;
  ParameterStore store;
  Tensor x(1, 1, 1, 1, 3.0f);
  const Var v = g.parameter(store, store.add("x", x));
  const Var y = add(g, scale(g, v, 2.0f), add(g, v, v));
  g.backward(y);
  CHECK(store[0].grad.data[0] == doctest::Approx(4.0));
}

TEST_CASE("non-recording graph refuses mutable use and builds no backward") {
  ParameterStore store;
  store.add("w", Tensor(1, 1, 1, 1, 1.0f));
  Graph rec;
  const ParameterStore& cs = store;
  CHECK_THROWS_AS(rec.parameter(cs, 0), Error);
  Graph inf(false);
  const Var v = inf.parameter(cs, 0);
  CHECK_FALSE(inf.requires_grad(v));
}

TEST_CASE("closed-form KL") {
  const std::vector<float> one{1.0f}, zero{0.0f};
  CHECK(kl_divergence(one, zero) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(kl_divergence(zero, zero) == 0.0);
  // 0.5 (mu^2 + sigma^2 - 1 - ln sigma^2) with mu = -2, sigma^2 = e
  const std::vector<float> mu{-2.0f}, lv{1.0f};
  CHECK(kl_divergence(mu, lv) == doctest::Approx(0.5 * (4.0 + std::exp(1.0) - 1.0 - 1.0)).epsilon(1e-6));
}

TEST_CASE("KL is non-negative for random encoder outputs") {
  Rng rng(6);
  for (int t = 0; t < 1000; ++t) {
    std::vector<float> mu(8), lv(8);
    for (auto& v : mu) v = 3.0f * rng.normal();
    for (auto& v : lv) v = static_cast<float>(rng.uniform() * 20.0 - 10.0);
    CHECK(kl_divergence(mu, lv) >= 0.0);
  }
  // zero only at the prior
  const std::vector<float> small{1e-3f};
  const std::vector<float> z{0.0f};
  CHECK(kl_divergence(small, z) > 0.0);
  CHECK(kl_divergence(z, small) > 0.0);
}

TEST_CASE("latent sampling") {
  PosteriorParams p;
  p.mean.push_back(Tensor(1, 2, 2, 3, 0.7f));
  p.logvar.push_back(Tensor(1, 2, 2, 3, -1e30f));
  Rng rng(1);
  SUBCASE("zero variance returns the mean") {
    const auto z = sample_latent(p, rng);
    for (float v : z[0].data) CHECK(v == 0.7f);
  }
  SUBCASE("standard normal moments over 1e5 draws") {
    PosteriorParams q;
    q.mean.push_back(Tensor(1, 1, 1, 100000, 0.0f));
    q.logvar.push_back(Tensor(1, 1, 1, 100000, 0.0f));
    const auto z = sample_latent(q, rng);
    double s = 0, s2 = 0;
    for (float v : z[0].data) {
      s += v;
      s2 += static_cast<double>(v) * v;
    }
    const double mean = s / 1e5;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(s2 / 1e5 - mean * mean - 1.0) < 0.02);
  }
  SUBCASE("different streams give different draws") {
    PosteriorParams q;
    q.mean.push_back(Tensor(1, 2, 2, 2, 0.0f));
    q.logvar.push_back(Tensor(1, 2, 2, 2, 0.0f));
    Rng a(1), b(2);
    CHECK(sample_latent(q, a)[0].data != sample_latent(q, b)[0].data);
  }
}

TEST_CASE("reparameterized loss gradient w.r.t. the mean matches Monte-Carlo finite differences") {
  // One-pixel toy: loss(mu) = E_eps[(mu + sigma*eps - 2)^2]; d/dmu = 2 (mu - 2).
  const float mu0 = 0.3f, lv0 = std::log(0.25f);
  Rng rng(7);
  const int draws = 10000;
  double grad_sum = 0.0, fd_sum = 0.0;
  const double h = 1e-2;
  const Tensor target(1, 1, 1, 1, 2.0f);
  for (int i = 0; i < draws; ++i) {
    const Tensor eps(1, 1, 1, 1, rng.normal());
    Graph g;
    ParameterStore store;
    const Var mu = g.parameter(store, store.add("mu", Tensor(1, 1, 1, 1, mu0)));
    const Var lv = g.parameter(store, store.add("lv", Tensor(1, 1, 1, 1, lv0)));
    const Var loss = l2_mean(g, reparameterize(g, mu, lv, eps), target);
    g.backward(loss);
    grad_sum += store[0].grad.data[0];
    const double sd = std::exp(0.5 * lv0);
    const double e = eps.data[0];
    const double lp = std::pow(mu0 + h + sd * e - 2.0, 2.0);
    const double lm = std::pow(mu0 - h + sd * e - 2.0, 2.0);
    fd_sum += (lp - lm) / (2 * h);
  }
  const double grad = grad_sum / draws;
  const double fd = fd_sum / draws;
  CHECK(std::abs(grad - fd) <= 5e-2 * std::abs(fd));
  CHECK(std::abs(grad - 2.0 * (mu0 - 2.0)) <= 5e-2 * std::abs(2.0 * (mu0 - 2.0)));
}

TEST_CASE("Adamax step by hand") {
  ParameterStore store;
  store.add("p", Tensor(1, 1, 1, 2, 1.0f));
  OptimizerState opt = OptimizerState::for_store(store, 0.1);
  store[0].grad = Tensor(1, 1, 1, 2);
  store[0].grad.data = {0.5f, -2.0f};
  adamax_step(store, opt);
  // m = 0.1 g, u = |g|, step = lr / (1 - 0.9) -> update = lr * sign(g)
  CHECK(store[0].value.data[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(store[0].value.data[1] == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(opt.step == 1);
  store[0].grad.data = {0.0f, 0.0f};
  adamax_step(store, opt);
  // m = 0.09 g1, u = 0.999 |g1|, step = 0.1 / (1 - 0.81)
  const double upd = 0.1 / 0.19 * 0.045 / (0.999 * 0.5);
  CHECK(store[0].value.data[0] == doctest::Approx(0.9 - upd).epsilon(1e-5));
}

TEST_CASE("gradient clipping by global norm") {
  ParameterStore store;
  store.add("a", Tensor(1, 1, 1, 1));
  store.add("b", Tensor(1, 1, 1, 1));
  store[0].grad = Tensor(1, 1, 1, 1, 3.0f);
  store[1].grad = Tensor(1, 1, 1, 1, 4.0f);
  CHECK(clip_grad_norm(store, 10.0) == doctest::Approx(5.0));
  CHECK(store[0].grad.data[0] == 3.0f);
  CHECK(clip_grad_norm(store, 1.0) == doctest::Approx(5.0));
  CHECK(store[0].grad.data[0] == doctest::Approx(0.6));
  CHECK(store[1].grad.data[0] == doctest::Approx(0.8));
}

TEST_CASE("plateau schedule traces") {
  ParameterStore store;
  PlateauSchedule sched;
  sched.patience = 3;
  OptimizerState opt = OptimizerState::for_store(store, 3e-4, sched);

  SUBCASE("strictly decreasing history keeps the rate") {
    std::vector<double> h;
    for (int i = 0; i < 20; ++i) {
      h.push_back(10.0 - i);
      opt = lr_plateau_update(opt, h);
    }
    CHECK(opt.lr == 3e-4);
  }
  SUBCASE("flat history of length patience + 1 halves once") {
    const std::vector<double> h(4, 1.0);
    const OptimizerState out = lr_plateau_update(opt, h);
    CHECK(out.lr == doctest::Approx(1.5e-4));
    CHECK(out.bad_validations == 0);
    const std::vector<double> shorter(3, 1.0);
    CHECK(lr_plateau_update(opt, shorter).lr == 3e-4);
  }
  SUBCASE("improvement below the threshold counts as a plateau") {
    const std::vector<double> h{1.0, 1.0 - 1e-7, 1.0 - 2e-7, 1.0 - 3e-7};
    CHECK(lr_plateau_update(opt, h).lr == doctest::Approx(1.5e-4));
  }
  SUBCASE("repeated plateaus approach the floor") {
    std::vector<double> h;
    for (int k = 1; k <= 12; ++k) {
      for (int i = 0; i < 3; ++i) h.push_back(1.0);
      if (k == 1) h.push_back(1.0);
      opt = lr_plateau_update(opt, h);
      CHECK(opt.lr == doctest::Approx(std::max(3e-4 * std::pow(0.5, k), 1e-6)));
    }
    CHECK(opt.lr == 1e-6);
  }
  SUBCASE("incremental and batch consumption agree") {
    std::vector<double> h{5, 4, 4, 4, 4, 3, 3, 3, 3, 3, 2};
    OptimizerState inc = opt;
    std::vector<double> prefix;
    for (double v : h) {
      prefix.push_back(v);
      inc = lr_plateau_update(inc, prefix);
    }
    CHECK(inc == lr_plateau_update(opt, h));
  }
}

}  // TEST_SUITE
