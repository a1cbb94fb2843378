#include <doctest.h>

#include <cmath>

#include "dud/direct.hpp"
#include "dud/error.hpp"
#include "dud/nn/graph.hpp"
#include "dud/nn/ops.hpp"
#include "dud/nn/optim.hpp"
#include "dud/vae.hpp"
#include "helpers.hpp"

using namespace dud;
using namespace dud::nn;
using testutil::random_tensor;

namespace {

VaeSpec tiny_vae() {
  VaeSpec s;
  s.channels = 8;
  s.latent_channels = 2;
  return s;
}

UNetSpec tiny_unet() {
  UNetSpec s;
  s.base_filters = 4;
  return s;
}

double brute_force_minimizer(const std::vector<double>& samples, LossKind kind) {
  double best_c = 0.0, best = 1e300;
  for (int i = 0; i <= 120000; ++i) {
    const double c = i * 0.001;
    std::vector<double> y(samples.size(), c);
    const double l = direct_loss(kind, y, samples);
    if (l < best) {
      best = l;
      best_c = c;
    }
  }
  return best_c;
}

}  // namespace

TEST_SUITE("vae") {

TEST_CASE("encoder is deterministic and batch-independent") {
  const DenoisingVAE vae(tiny_vae(), 1);
  Rng r(2);
  const Tensor x = random_tensor(3, 8, 8, 1, r);
  const PosteriorParams a = vae.encode(x);
  const PosteriorParams b = vae.encode(x);
  REQUIRE(a.mean.size() == 2);
  for (std::size_t l = 0; l < a.mean.size(); ++l) {
    CHECK(a.mean[l].data == b.mean[l].data);
    CHECK(a.logvar[l].all_finite());
    for (float v : a.logvar[l].data) CHECK(std::abs(v) <= 10.0f);
  }
  // Swap samples 0 and 2: outputs swap too.
  Tensor swapped = x;
  std::copy(x.sample(2), x.sample(2) + x.plane(), swapped.sample(0));
  std::copy(x.sample(0), x.sample(0) + x.plane(), swapped.sample(2));
  const PosteriorParams c = vae.encode(swapped);
  for (std::size_t l = 0; l < a.mean.size(); ++l) {
    const std::size_t per = a.mean[l].data.size() / 3;
    for (std::size_t i = 0; i < per; ++i) {
      CHECK(c.mean[l].data[i] == a.mean[l].data[2 * per + i]);
      CHECK(c.mean[l].data[per + i] == a.mean[l].data[per + i]);
    }
  }
}

TEST_CASE("decoder shape contract and determinism") {
  const DenoisingVAE vae(tiny_vae(), 3);
  for (int size : {32, 64}) {
    auto z = vae.latent_shapes(2, size, size);
    Rng r(4);
    for (auto& t : z)
      for (float& v : t.data) v = r.normal();
    const Tensor s1 = vae.decode(z);
    const Tensor s2 = vae.decode(z);
    CHECK(s1.n == 2);
    CHECK(s1.h == size);
    CHECK(s1.w == size);
    CHECK(s1.c == 1);
    CHECK(s1.data == s2.data);
    CHECK(s1.all_finite());
  }
}

TEST_CASE("inputs must be single-channel and divisible by the level stride") {
  const DenoisingVAE vae(tiny_vae(), 3);
  CHECK_THROWS_AS(vae.encode(Tensor(1, 6, 8, 1)), ShapeError);
  CHECK_THROWS_AS(vae.encode(Tensor(1, 8, 8, 2)), ShapeError);
  CHECK_NOTHROW(vae.encode(Tensor(1, 4, 12, 1)));
}

TEST_CASE("samples are diverse and finite") {
  const DenoisingVAE vae(tiny_vae(), 5);
  Rng r(6);
  const Tensor x = random_tensor(1, 16, 16, 1, r);
  Rng a(1), b(2);
  const Tensor s1 = vae.sample(x, a);
  const Tensor s2 = vae.sample(x, b);
  CHECK(s1.all_finite());
  CHECK(s2.all_finite());
  double maxdiff = 0.0;
  for (std::size_t i = 0; i < s1.data.size(); ++i) maxdiff = std::max(maxdiff, double(std::abs(s1.data[i] - s2.data[i])));
  CHECK(maxdiff > 0.0);
}

TEST_CASE("loss breakdown is consistent") {
  DenoisingVAE vae(tiny_vae(), 7);
  Rng r(8);
  const Tensor x = random_tensor(2, 8, 8, 1, r);
  const GaussianNoiseModel noise(0.5);
  Rng a(3), b(3);
  Graph g;
  const VaeForward f = vae.loss(g, x, noise, a, 0.25);
  const VaeLossBreakdown e = vae.evaluate_loss(x, noise, b, 0.25);
  CHECK(f.breakdown.kl >= 0.0);
  CHECK(f.breakdown.total == doctest::Approx(f.breakdown.reconstruction + 0.25 * f.breakdown.kl));
  CHECK(e.reconstruction == doctest::Approx(f.breakdown.reconstruction).epsilon(1e-6));
  CHECK(e.kl == doctest::Approx(f.breakdown.kl).epsilon(1e-6));
  CHECK(g.value(f.signal).h == 8);

  // Reconstruction term when the signal equals x with sigma 1 is 0.5 ln(2 pi) per pixel.
  Graph h;
  const Var xs = h.constant(x);
  const Var nll = gaussian_nll_mean(h, xs, x, 1.0);
  CHECK(h.value(nll).data[0] == doctest::Approx(0.918939).epsilon(1e-6));
}

TEST_CASE("a short training run lowers the validation loss") {
  // Conjugate-like data: i.i.d. N(0,1) signal plus N(0, 0.5^2) noise, normalized units.
  DenoisingVAE vae(tiny_vae(), 11);
  OptimizerState opt = OptimizerState::for_store(vae.params(), 1e-3);
  const GaussianNoiseModel noise(0.5);
  Rng data(12);
  auto batch = [&] {
    Tensor x(4, 8, 8, 1);
    for (float& v : x.data) v = data.normal() + 0.5f * data.normal();
    return x;
  };
  const Tensor val = batch();
  auto val_loss = [&] {
    double s = 0;
    for (int i = 0; i < 8; ++i) {
      Rng rr(100 + i);
      s += vae.evaluate_loss(val, noise, rr).total;
    }
    return s / 8;
  };
  Rng train(14);
  double at100 = 0.0;
  for (int step = 1; step <= 600; ++step) {
    vae.params().zero_grad();
    Graph g;
    const VaeForward f = vae.loss(g, batch(), noise, train, std::min(1.0, step / 100.0));
    g.backward(f.total);
    clip_grad_norm(vae.params(), 5.0);
    adamax_step(vae.params(), opt);
    if (step == 100) at100 = val_loss();
  }
  CHECK(val_loss() < at100);
}

}  // TEST_SUITE

TEST_SUITE("direct") {

TEST_CASE("loss values") {
  const std::vector<double> y{3.0}, s{1.0};
  CHECK(direct_loss(LossKind::l1, y, s) == 2.0);
  CHECK(direct_loss(LossKind::l2, y, s) == 4.0);
  CHECK(direct_loss(LossKind::l1, s, s) == 0.0);
  CHECK(direct_loss(LossKind::l2, s, s) == 0.0);
  Tensor a(1, 2, 2, 1, 1.0f), b(1, 2, 2, 1, 3.0f);
  CHECK(l1_loss(a, b) == 2.0);
  CHECK(l2_loss(a, b) == 4.0);
  CHECK_THROWS_AS(l1_loss(a, Tensor(1, 2, 3, 1)), ShapeError);
}

TEST_CASE("empirical minimizers are the median and the mean") {
  const std::vector<double> samples{1.0, 2.0, 100.0};
  CHECK(brute_force_minimizer(samples, LossKind::l1) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(brute_force_minimizer(samples, LossKind::l2) == doctest::Approx(34.333).epsilon(1e-4));
}

TEST_CASE("per-pixel minimizers on random sample sets") {
  Rng rng(21);
  for (int t = 0; t < 5; ++t) {
    std::vector<double> s(5);
    for (auto& v : s) v = 10.0 + 20.0 * rng.uniform();
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    double mean = 0;
    for (double v : s) mean += v;
    mean /= 5;
    CHECK(brute_force_minimizer(s, LossKind::l1) == doctest::Approx(sorted[2]).epsilon(2e-4));
    CHECK(brute_force_minimizer(s, LossKind::l2) == doctest::Approx(mean).epsilon(2e-4));
  }
}

TEST_CASE("loss gradients match 64-bit finite differences") {
  Rng rng(22);
  for (LossKind kind : {LossKind::l1, LossKind::l2}) {
    std::vector<double> y(12), s(12);
    for (auto& v : y) v = rng.normal();
    for (auto& v : s) v = rng.normal();
    const auto g = direct_loss_grad(kind, y, s);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double h = 1e-6;
      std::vector<double> yp = y, ym = y;
      yp[i] += h;
      ym[i] -= h;
      const double fd = (direct_loss(kind, yp, s) - direct_loss(kind, ym, s)) / (2 * h);
      CHECK(std::abs(fd - g[i]) <= 1e-4 * std::abs(fd));
    }
  }
  const std::vector<double> same{1.5};
  CHECK(direct_loss_grad(LossKind::l1, same, same)[0] == 0.0);
}

TEST_CASE("UNet shape contract") {
  const DirectDenoiser dd{UNet(tiny_unet(), 1), LossKind::l2};
  Rng r(3);
  SUBCASE("64x64 batch") {
    const Tensor x = random_tensor(2, 64, 64, 1, r);
    const Tensor y = dd.forward(x);
    CHECK(y.n == 2);
    CHECK(y.h == 64);
    CHECK(y.w == 64);
    CHECK(y.c == 1);
    CHECK(dd.forward(x).data == y.data);
  }
  SUBCASE("100x100 goes through 112x112 and back") {
    const ImagePlane x = testutil::random_image(100, 100, r);
    CHECK(pad_to_multiple(x, 16).height() == 112);
    const ImagePlane y = dd.forward(x);
    CHECK(y.height() == 100);
    CHECK(y.width() == 100);
    CHECK(y == dd.forward(x));
  }
  SUBCASE("random sizes") {
    for (int t = 0; t < 8; ++t) {
      const ImagePlane x = testutil::random_image(r.uniform_int(16, 50), r.uniform_int(16, 50), r);
      const ImagePlane y = dd.forward(x);
      CHECK(y.height() == x.height());
      CHECK(y.width() == x.width());
      CHECK(y.all_finite());
    }
  }
  CHECK_THROWS_AS(dd.forward(Tensor(1, 24, 32, 1)), ShapeError);
}

TEST_CASE("spec validation") {
  UNetSpec s = tiny_unet();
  s.depth = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = tiny_unet();
  s.upsample = "transposed_conv";
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(loss_kind_from_string("L1") == LossKind::l1);
  CHECK(to_string(LossKind::l2) == "L2");
  CHECK_THROWS_AS(loss_kind_from_string("huber"), ConfigError);
  VaeSpec v = tiny_vae();
  v.levels = 0;
  CHECK_THROWS_AS(v.validate(), ConfigError);
}

}  // TEST_SUITE
