#include "dud/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dud/nn/graph.hpp"
#include "dud/nn/ops.hpp"

namespace dud {

using nn::Graph;
using nn::Tensor;

ImagePlane Normalization::apply(const ImagePlane& image) const {
  ImagePlane out = image;
  for (float& v : out.pixels()) v = apply(v);
  return out;
}

ImagePlane Normalization::invert(const ImagePlane& image) const {
  ImagePlane out = image;
  for (float& v : out.pixels()) v = invert(v);
  return out;
}

Tensor Normalization::apply(const Tensor& t) const {
  Tensor out = t;
  for (float& v : out.data) v = apply(v);
  return out;
}

Tensor Normalization::invert(const Tensor& t) const {
  Tensor out = t;
  for (float& v : out.data) v = invert(v);
  return out;
}

Normalization normalize_fit(const std::vector<ImagePlane>& train_images) {
  if (train_images.empty()) throw ConfigError("dataset.count_train", "normalization needs at least one image");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& img : train_images) {
    for (float v : img.pixels()) sum += v;
    count += img.size();
  }
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (const auto& img : train_images) {
    for (float v : img.pixels()) sq += (v - mean) * (v - mean);
  }
  const double std = std::sqrt(sq / static_cast<double>(count));
  if (!(std > 0.0)) throw NumericError("normalize_fit: training set is constant (std = 0)");
  return {mean, std};
}

const DirectHead* TrainState::head(LossKind kind) const {
  for (const auto& h : heads) {
    if (h.dd.loss_kind == kind) return &h;
  }
  return nullptr;
}

int patience_in_validations(const RunConfig& cfg) {
  const double steps_per_epoch =
      std::ceil(static_cast<double>(cfg.dataset.count_train) / static_cast<double>(cfg.training.batch_size));
  const double v = std::ceil(cfg.training.patience_epochs * steps_per_epoch /
                             static_cast<double>(cfg.training.validation_interval));
  return std::max(1, static_cast<int>(v));
}

TrainState init_train_state(const RunConfig& cfg, const std::vector<ImagePlane>& train_noisy) {
  cfg.validate();
  TrainState s;
  const nn::PlateauSchedule schedule{cfg.training.lr_factor, patience_in_validations(cfg),
                                     cfg.training.plateau_threshold, cfg.training.min_lr};
  s.vae = DenoisingVAE(cfg.vae, derive_seed(cfg.seeds.init, 0));
  s.vae_opt = nn::OptimizerState::for_store(s.vae.params(), cfg.training.lr_vae, schedule);
  for (std::size_t k = 0; k < cfg.loss_kinds.size(); ++k) {
    DirectHead head;
    head.dd = DirectDenoiser{UNet(cfg.unet, derive_seed(cfg.seeds.init, 1 + k)), cfg.loss_kinds[k]};
    head.opt = nn::OptimizerState::for_store(head.dd.net.params(), cfg.training.lr_direct, schedule);
    s.heads.push_back(std::move(head));
  }
  s.rng = Rng(cfg.seeds.train);
  s.normalization = normalize_fit(train_noisy);
  s.noise_sigma = cfg.raw_noise_sigma() / s.normalization.std;
  return s;
}

namespace {

std::string describe(const VaeLossBreakdown& b) {
  std::ostringstream os;
  os << "reconstruction=" << b.reconstruction << " kl=" << b.kl << " total=" << b.total;
  return os.str();
}

}  // namespace

std::pair<VaeLossBreakdown, Tensor> vae_update(TrainState& state, const Tensor& batch, const StepOptions& options) {
  Graph g;
  VaeForward fwd;
  try {
    fwd = state.vae.loss(g, batch, state.noise_model(), state.rng, options.kl_weight);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(state.step + 1) + ": " + e.what());
  }
  // Copying the sample out of the graph detaches it: nothing computed from it can
  // reach the VAE parameters.
  Tensor targets = g.value(fwd.signal);
  state.vae.params().zero_grad();
  g.backward(fwd.total);
  const double norm = nn::clip_grad_norm(state.vae.params(), options.grad_clip);
  if (!std::isfinite(norm)) {
    throw NumericError("step " + std::to_string(state.step + 1) + ": non-finite VAE gradient (" + describe(fwd.breakdown) + ")");
  }
  nn::adamax_step(state.vae.params(), state.vae_opt);
  return {fwd.breakdown, std::move(targets)};
}

double direct_update(DirectHead& head, const Tensor& batch, const Tensor& targets, double grad_clip) {
  auto& params = head.dd.net.params();
  Graph g;
  nn::Var y = head.dd.net.forward(g, params, g.constant(batch));
  nn::Var loss = head.dd.loss_kind == LossKind::l1 ? nn::l1_mean(g, y, targets) : nn::l2_mean(g, y, targets);
  const double value = g.value(loss).data[0];
  if (!std::isfinite(value)) throw NumericError("direct " + to_string(head.dd.loss_kind) + ": non-finite loss");
  params.zero_grad();
  g.backward(loss);
  nn::clip_grad_norm(params, grad_clip);
  nn::adamax_step(params, head.opt);
  return value;
}

StepMetrics co_train_step(TrainState& state, const Tensor& batch, const StepOptions& options) {
  StepMetrics m;
  auto [breakdown, targets] = vae_update(state, batch, options);
  m.vae = breakdown;
  for (auto& head : state.heads) {
    try {
      m.direct.push_back(direct_update(head, batch, targets, options.grad_clip));
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(state.step + 1) + ": " + e.what() + " (vae " + describe(breakdown) + ")");
    }
  }
  m.targets = std::move(targets);
  m.step = ++state.step;
  return m;
}

double direct_validation_loss(const PredictFn& predict, const SampleFn& sampler, const Tensor& x, LossKind kind,
                              std::uint64_t seed) {
  Rng rng(seed);
  const Tensor target = sampler(x, rng);
  return direct_loss(kind, predict(x), target);
}

Tensor prepare_validation_batch(const TrainState& state, const std::vector<ImagePlane>& val_images) {
  if (val_images.empty()) throw ConfigError("dataset.count_val", "validation set is empty");
  int m = state.vae.spec().size_multiple();
  for (const auto& h : state.heads) m = std::max(m, h.dd.net.spec().size_multiple());
  std::vector<ImagePlane> prepared;
  for (const auto& img : val_images) {
    ImagePlane v = state.normalization.apply(img);
    const int h = img.height() / m * m;
    const int w = img.width() / m * m;
    v = (h == 0 || w == 0) ? pad_to_multiple(v, m) : center_crop(v, h, w);
    prepared.push_back(std::move(v));
  }
  return nn::stack_images(prepared);
}

ValidationResult validate(const TrainState& state, const Tensor& val_batch, std::uint64_t seed) {
  ValidationResult r;
  Rng vae_rng(derive_seed(seed, 0));
  r.vae = state.vae.evaluate_loss(val_batch, state.noise_model(), vae_rng);
  const SampleFn sampler = [&state](const Tensor& x, Rng& rng) { return state.vae.sample(x, rng); };
  for (const auto& head : state.heads) {
    const PredictFn predict = [&head](const Tensor& x) { return head.dd.forward(x); };
    r.direct.push_back(direct_validation_loss(predict, sampler, val_batch, head.dd.loss_kind, derive_seed(seed, 1)));
  }
  return r;
}

void record_validation(TrainState& state, const ValidationResult& result) {
  state.vae_val_history.push_back(result.vae.total);
  state.vae_opt = nn::lr_plateau_update(std::move(state.vae_opt), state.vae_val_history);
  state.best_vae_val = std::min(state.best_vae_val, result.vae.total);
  for (std::size_t k = 0; k < state.heads.size(); ++k) {
    auto& head = state.heads[k];
    head.val_history.push_back(result.direct.at(k));
    head.opt = nn::lr_plateau_update(std::move(head.opt), head.val_history);
    head.best_val = std::min(head.best_val, result.direct[k]);
  }
}

namespace {

void write_metrics_header(std::ostream& os) { os << "step,vae_recon,vae_kl,direct_l1,direct_l2,lr_vae,lr_dd\n"; }

void write_metrics_row(std::ostream& os, const TrainState& s, const ValidationResult& r) {
  os << std::setprecision(10) << s.step << ',' << r.vae.reconstruction << ',' << r.vae.kl << ',';
  for (LossKind kind : {LossKind::l1, LossKind::l2}) {
    for (std::size_t k = 0; k < s.heads.size(); ++k) {
      if (s.heads[k].dd.loss_kind == kind) os << r.direct[k];
    }
    os << ',';
  }
  os << s.vae_opt.lr << ',';
  if (!s.heads.empty()) os << s.heads.front().opt.lr;
  os << '\n';
}

std::filesystem::path numbered_checkpoint(const std::filesystem::path& dir, std::int64_t step) {
  char name[48];
  std::snprintf(name, sizeof(name), "ckpt_%08lld.dudc", static_cast<long long>(step));
  return dir / name;
}

}  // namespace

TrainResult run_training(const RunConfig& cfg, const Dataset& data, std::optional<TrainState> resume,
                         const ValidationHook& hook) {
  namespace fs = std::filesystem;
  cfg.validate();
  const fs::path out_dir = cfg.output_dir;
  const fs::path ckpt_dir = out_dir / "checkpoints";
  std::error_code ec;
  fs::create_directories(ckpt_dir, ec);
  if (ec) throw IoError("cannot create " + ckpt_dir.string() + ": " + ec.message());
  {
    std::ofstream os(out_dir / "config.resolved.json");
    if (!os) throw IoError("cannot write resolved config to " + out_dir.string());
    os << nlohmann::json(cfg).dump(2) << '\n';
  }

  const auto train_noisy = noisy_images(data.train);
  TrainResult result{resume ? std::move(*resume) : init_train_state(cfg, train_noisy), {}, {}};
  TrainState& state = result.state;
  if (resume) check_compatible(state, cfg);

  std::vector<ImagePlane> train_norm;
  train_norm.reserve(train_noisy.size());
  for (const auto& img : train_noisy) train_norm.push_back(state.normalization.apply(img));
  const Tensor val_batch = prepare_validation_batch(state, noisy_images(data.val));

  const fs::path metrics_path = out_dir / "metrics.csv";
  const bool fresh_log = !resume || !fs::exists(metrics_path);
  std::ofstream metrics(metrics_path, fresh_log ? std::ios::trunc : std::ios::app);
  if (!metrics) throw IoError("cannot write " + metrics_path.string());
  if (fresh_log) write_metrics_header(metrics);

  const auto& t = cfg.training;
  const double warmup_steps = t.kl_warmup_fraction * static_cast<double>(t.total_steps);
  while (state.step < t.total_steps) {
    StepOptions options{t.grad_clip, t.kl_weight};
    if (warmup_steps > 0.0) {
      options.kl_weight *= std::min(1.0, static_cast<double>(state.step + 1) / warmup_steps);
    }
    const PatchBatch batch = sample_patch_batch(train_norm, t.batch_size, t.patch_size, state.rng);
    co_train_step(state, nn::stack_images(batch.patches), options);

    if (state.step % t.validation_interval == 0 || state.step == t.total_steps) {
      const double prev_best_vae = state.best_vae_val;
      const double prev_best_direct = state.heads.empty() ? 0.0 : state.heads.front().best_val;
      const ValidationResult r = validate(state, val_batch, cfg.seeds.validation);
      record_validation(state, r);
      result.validations.push_back(r);
      write_metrics_row(metrics, state, r);
      metrics.flush();

      const fs::path ckpt = numbered_checkpoint(ckpt_dir, state.step);
      save_checkpoint(state, ckpt);
      if (state.best_vae_val < prev_best_vae) fs::copy_file(ckpt, ckpt_dir / "best_vae.dudc", fs::copy_options::overwrite_existing);
      if (!state.heads.empty() && state.heads.front().best_val < prev_best_direct) {
        fs::copy_file(ckpt, ckpt_dir / "best_direct.dudc", fs::copy_options::overwrite_existing);
      }
      if (hook) hook(state, r);
    }
  }
  result.final_checkpoint = ckpt_dir / "final.dudc";
  save_checkpoint(state, result.final_checkpoint);
  return result;
}

}  // namespace dud
