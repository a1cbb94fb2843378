#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "dud/error.hpp"
#include "dud/training.hpp"
#include "helpers.hpp"

using namespace dud;
using nn::Tensor;

namespace {

RunConfig tiny_config(const std::string& out) {
  RunConfig c;
  c.dataset.height = c.dataset.width = 16;
  c.dataset.count_train = 8;
  c.dataset.count_val = 2;
  c.dataset.count_test = 2;
  c.dataset.seed = 3;
  c.vae.channels = 8;
  c.vae.latent_channels = 2;
  c.unet.base_filters = 4;
  c.loss_kinds = {LossKind::l1, LossKind::l2};
  c.training.batch_size = 4;
  c.training.patch_size = 16;
  c.training.total_steps = 12;
  c.training.validation_interval = 4;
  c.training.lr_vae = 1e-3;
  c.training.lr_direct = 1e-3;
  c.output_dir = out;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Tensor normalized_batch(const TrainState& st, const Dataset& d, std::uint64_t seed) {
  std::vector<ImagePlane> imgs;
  for (const auto& p : d.train) imgs.push_back(st.normalization.apply(p.noisy));
  Rng rng(seed);
  return nn::stack_images(sample_patch_batch(imgs, 4, 16, rng).patches);
}

bool params_equal(const nn::ParameterStore& a, const nn::ParameterStore& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].value.data != b[k].value.data) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("normalization") {
  SUBCASE("two single-pixel images {0, 2}") {
    const Normalization n = normalize_fit({ImagePlane(1, 1, 0.0f), ImagePlane(1, 1, 2.0f)});
    CHECK(n.mean == 1.0);
    CHECK(n.std == 1.0);
    CHECK(n.apply(0.0f) == -1.0f);
    CHECK(n.apply(2.0f) == 1.0f);
  }
  SUBCASE("noise sigma scales with the std") {
    const Normalization n{0.3, 2.0};
    CHECK(n.noise_model(0.2).sigma() == doctest::Approx(0.1));
  }
  SUBCASE("round trip") {
    Rng rng(1);
    std::vector<ImagePlane> imgs;
    for (int i = 0; i < 4; ++i) {
      ImagePlane img = testutil::random_image(9, 7, rng);
      for (float& v : img.pixels()) v = 3.0f + 0.5f * v;
      imgs.push_back(img);
    }
    const Normalization n = normalize_fit(imgs);
    double sum = 0, sq = 0;
    std::size_t count = 0;
    for (const auto& img : imgs) {
      const ImagePlane z = n.apply(img);
      const ImagePlane back = n.invert(z);
      for (std::size_t i = 0; i < img.size(); ++i) {
        CHECK(std::abs(back.pixels()[i] - img.pixels()[i]) < 1e-5);
        sum += z.pixels()[i];
        sq += double(z.pixels()[i]) * z.pixels()[i];
        ++count;
      }
    }
    CHECK(std::abs(sum / count) < 1e-5);
    CHECK(std::abs(sq / count - 1.0) < 1e-4);
  }
  SUBCASE("constant set is rejected") {
    CHECK_THROWS_AS(normalize_fit({ImagePlane(2, 2, 1.0f), ImagePlane(3, 3, 1.0f)}), NumericError);
    CHECK_THROWS_AS(normalize_fit({}), ConfigError);
  }
}

TEST_CASE("co-training step contracts") {
  const RunConfig cfg = tiny_config("unused");
  const Dataset data = generate_dataset(cfg.dataset);
  const TrainState initial = init_train_state(cfg, noisy_images(data.train));
  const Tensor batch = normalized_batch(initial, data, 5);
  const StepOptions options{cfg.training.grad_clip, 1.0};

  SUBCASE("one step changes every network") {
    TrainState s = initial;
    const StepMetrics m = co_train_step(s, batch, options);
    CHECK(m.step == 1);
    CHECK(s.step == 1);
    CHECK(m.direct.size() == 2);
    CHECK_FALSE(params_equal(s.vae.params(), initial.vae.params()));
    for (std::size_t k = 0; k < s.heads.size(); ++k) {
      CHECK_FALSE(params_equal(s.heads[k].dd.net.params(), initial.heads[k].dd.net.params()));
      CHECK(s.heads[k].opt.step == 1);
    }
    CHECK(s.vae_opt.step == 1);
  }

  SUBCASE("a frozen VAE stays bit-identical while the heads train") {
    TrainState s = initial;
    s.vae_opt.lr = 0.0;
    for (int i = 0; i < 3; ++i) co_train_step(s, batch, options);
    CHECK(params_equal(s.vae.params(), initial.vae.params()));
    CHECK_FALSE(params_equal(s.heads[0].dd.net.params(), initial.heads[0].dd.net.params()));
  }

  SUBCASE("direct targets are the sample drawn before the VAE update") {
    TrainState s = initial;
    TrainState replay = initial;
    const StepMetrics m = co_train_step(s, batch, options);
    nn::Graph g;
    const VaeForward f = replay.vae.loss(g, batch, replay.noise_model(), replay.rng, 1.0);
    CHECK(g.value(f.signal).data == m.targets.data);
    // Same noise through the updated parameters gives a different sample.
    Rng again = initial.rng;
    nn::Graph g2;
    const VaeForward post = s.vae.loss(g2, batch, s.noise_model(), again, 1.0);
    CHECK(g2.value(post.signal).data != m.targets.data);
  }

  SUBCASE("the direct loss never reaches the VAE") {
    TrainState s = initial;
    s.vae.params().zero_grad();
    DirectHead& head = s.heads[1];
    Tensor targets = batch;
    for (float& v : targets.data) v *= 0.5f;
    direct_update(head, batch, targets, 5.0);
    for (std::size_t k = 0; k < s.vae.params().size(); ++k) {
      for (float g : s.vae.params()[k].grad.data) REQUIRE(g == 0.0f);
    }
    CHECK(params_equal(s.vae.params(), initial.vae.params()));

    // VAE update is the same with or without any Direct Denoiser attached.
    TrainState with = initial;
    TrainState without = initial;
    without.heads.clear();
    co_train_step(with, batch, options);
    co_train_step(without, batch, options);
    CHECK(params_equal(with.vae.params(), without.vae.params()));
  }

  SUBCASE("optimizers do not share state") {
    TrainState s = initial;
    co_train_step(s, batch, options);
    CHECK(s.vae_opt.first_moment.size() == s.vae.params().size());
    CHECK(s.heads[0].opt.first_moment.size() == s.heads[0].dd.net.params().size());
    CHECK(s.heads[0].opt.first_moment != s.heads[1].opt.first_moment);
  }
}

TEST_CASE("L2 head converges to the mean of noisy stub targets") {
  // Stub sampler: s_hat = x + eps, eps ~ N(0, 0.1^2). Inputs are constant images.
  UNetSpec spec;
  spec.depth = 2;
  spec.base_filters = 4;
  DirectHead head;
  head.dd = DirectDenoiser{UNet(spec, 3), LossKind::l2};
  head.opt = nn::OptimizerState::for_store(head.dd.net.params(), 3e-3);
  Rng rng(4);
  for (int step = 0; step < 1500; ++step) {
    Tensor x(8, 8, 8, 1);
    for (int n = 0; n < 8; ++n) {
      const float c = static_cast<float>(rng.uniform() * 2.0 - 1.0);
      std::fill(x.sample(n), x.sample(n) + x.plane(), c);
    }
    Tensor target = x;
    for (float& v : target.data) v += 0.1f * rng.normal();
    direct_update(head, x, target, 5.0);
  }
  for (float c : {-0.6f, 0.0f, 0.35f, 0.8f}) {
    const Tensor y = head.dd.forward(Tensor(1, 8, 8, 1, c));
    double mean = 0.0;
    for (float v : y.data) mean += v;
    mean /= static_cast<double>(y.data.size());
    CHECK(std::abs(mean - c) < 0.02);
  }
}

TEST_CASE("validation") {
  const RunConfig cfg = tiny_config("unused");
  const Dataset data = generate_dataset(cfg.dataset);
  const TrainState st = init_train_state(cfg, noisy_images(data.train));
  const Tensor val = prepare_validation_batch(st, noisy_images(data.val));
  CHECK(val.h % 16 == 0);

  const ValidationResult a = validate(st, val, 77);
  const ValidationResult b = validate(st, val, 77);
  CHECK(a.vae.total == b.vae.total);
  CHECK(a.direct == b.direct);
  CHECK(a.vae.kl >= 0.0);
  CHECK(a.direct.size() == 2);

  const PredictFn copy = [](const Tensor& x) { return x; };
  const SampleFn exact = [](const Tensor& x, Rng&) { return x; };
  CHECK(direct_validation_loss(copy, exact, val, LossKind::l2, 1) == 0.0);
  CHECK(direct_validation_loss(copy, exact, val, LossKind::l1, 1) == 0.0);
}

TEST_CASE("patience conversion") {
  RunConfig c = tiny_config("unused");
  c.dataset.count_train = 100;
  c.training.batch_size = 64;  // 2 steps per epoch
  c.training.patience_epochs = 10;
  c.training.validation_interval = 5;
  CHECK(patience_in_validations(c) == 4);
  c.training.validation_interval = 1000;
  CHECK(patience_in_validations(c) == 1);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = testutil::temp_dir("ckpt");
  const RunConfig cfg = tiny_config((dir / "run").string());
  const Dataset data = generate_dataset(cfg.dataset);
  TrainState st = init_train_state(cfg, noisy_images(data.train));
  const Tensor batch = normalized_batch(st, data, 8);
  const StepOptions options{5.0, 1.0};
  co_train_step(st, batch, options);
  st.vae_val_history = {1.5, 1.4};
  st.best_vae_val = 1.4;
  st.heads[0].val_history = {0.3};
  st.heads[0].best_val = 0.3;

  save_checkpoint(st, dir / "a.dudc");
  TrainState back = load_checkpoint(dir / "a.dudc");
  CHECK(back.step == st.step);
  CHECK(back.rng == st.rng);
  CHECK(back.normalization == st.normalization);
  CHECK(back.noise_sigma == st.noise_sigma);
  CHECK(back.vae_opt == st.vae_opt);
  CHECK(back.vae_val_history == st.vae_val_history);
  CHECK(back.heads.size() == 2);
  CHECK(back.heads[0].opt == st.heads[0].opt);
  CHECK(back.heads[1].opt == st.heads[1].opt);
  CHECK(back.heads[0].best_val == 0.3);
  CHECK(std::isinf(back.heads[1].best_val));
  CHECK(params_equal(back.vae.params(), st.vae.params()));
  CHECK(params_equal(back.heads[1].dd.net.params(), st.heads[1].dd.net.params()));

  const StepMetrics m1 = co_train_step(st, batch, options);
  const StepMetrics m2 = co_train_step(back, batch, options);
  CHECK(m1.vae.total == m2.vae.total);
  CHECK(m1.direct == m2.direct);
  CHECK(m1.targets.data == m2.targets.data);

  SUBCASE("corruption and version errors") {
    std::string bytes = slurp(dir / "a.dudc");
    {
      std::ofstream os(dir / "trunc.dudc", std::ios::binary);
      os << bytes.substr(0, bytes.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "trunc.dudc"), FormatError);
    std::string wrong = bytes;
    wrong[4] = 9;
    {
      std::ofstream os(dir / "ver.dudc", std::ios::binary);
      os << wrong;
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "ver.dudc"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "none.dudc"), IoError);
  }
  SUBCASE("architecture mismatch is detected") {
    RunConfig other = cfg;
    other.unet.base_filters = 8;
    CHECK_THROWS_AS(check_compatible(back, other), SpecMismatchError);
    CHECK_NOTHROW(check_compatible(back, cfg));
  }
}

TEST_CASE("training runs are reproducible and resumable") {
  const auto dir = testutil::temp_dir("runs");
  RunConfig cfg = tiny_config((dir / "a").string());
  const Dataset data = generate_dataset(cfg.dataset);
  const TrainResult a = run_training(cfg, data);
  cfg.output_dir = (dir / "b").string();
  run_training(cfg, data);
  const std::string log_a = slurp(dir / "a" / "metrics.csv");
  CHECK(log_a == slurp(dir / "b" / "metrics.csv"));
  CHECK(a.validations.size() == 3);

  std::istringstream lines(log_a);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "step,vae_recon,vae_kl,direct_l1,direct_l2,lr_vae,lr_dd");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 3);

  for (const char* f : {"final.dudc", "best_vae.dudc", "best_direct.dudc", "ckpt_00000004.dudc", "ckpt_00000012.dudc"}) {
    CHECK(std::filesystem::exists(dir / "a" / "checkpoints" / f));
  }
  CHECK(std::filesystem::exists(dir / "a" / "config.resolved.json"));

  // Stop at 8, resume to 12: same log as the uninterrupted run.
  RunConfig part = tiny_config((dir / "c").string());
  part.training.total_steps = 8;
  run_training(part, data);
  TrainState mid = load_checkpoint(dir / "c" / "checkpoints" / "ckpt_00000008.dudc");
  CHECK(mid.step == 8);
  RunConfig rest = tiny_config((dir / "c").string());
  const TrainResult resumed = run_training(rest, data, std::move(mid));
  CHECK(resumed.state.step == 12);
  CHECK(slurp(dir / "c" / "metrics.csv") == log_a);
  CHECK(params_equal(resumed.state.vae.params(), a.state.vae.params()));
}

TEST_CASE("learning rates never increase over a run") {
  const auto dir = testutil::temp_dir("lr");
  RunConfig cfg = tiny_config(dir.string());
  cfg.training.total_steps = 24;
  cfg.training.validation_interval = 2;
  cfg.training.patience_epochs = 0.5;
  cfg.training.lr_vae = 1.0e-6 * 8;
  std::vector<double> lrs;
  run_training(cfg, generate_dataset(cfg.dataset), std::nullopt,
               [&](const TrainState& s, const ValidationResult&) { lrs.push_back(s.vae_opt.lr); });
  REQUIRE(lrs.size() == 12);
  for (std::size_t i = 1; i < lrs.size(); ++i) CHECK(lrs[i] <= lrs[i - 1]);
  for (double lr : lrs) CHECK(lr >= cfg.training.min_lr);
}

}  // TEST_SUITE
