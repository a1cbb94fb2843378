#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dud/config.hpp"
#include "dud/dataset.hpp"
#include "dud/direct.hpp"
#include "dud/nn/optim.hpp"
#include "dud/noise_model.hpp"
#include "dud/vae.hpp"

namespace dud {

/// Affine pixel normalization fitted on the noisy training images.
struct Normalization {
  double mean = 0.0;
  double std = 1.0;

  float apply(float v) const { return static_cast<float>((v - mean) / std); }
  float invert(float v) const { return static_cast<float>(v * std + mean); }
  ImagePlane apply(const ImagePlane& image) const;
  ImagePlane invert(const ImagePlane& image) const;
  nn::Tensor apply(const nn::Tensor& t) const;
  nn::Tensor invert(const nn::Tensor& t) const;
  /// The noise model in normalized units (sigma / std).
  GaussianNoiseModel noise_model(double raw_sigma) const { return GaussianNoiseModel(raw_sigma).rescaled(std); }

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Mean and population std over all pixels; throws NumericError for a constant set.
Normalization normalize_fit(const std::vector<ImagePlane>& train_images);

/// One Direct Denoiser with its own optimizer and validation history.
struct DirectHead {
  DirectDenoiser dd;
  nn::OptimizerState opt;
  std::vector<double> val_history;
  double best_val = std::numeric_limits<double>::infinity();
};

struct TrainState {
  DenoisingVAE vae;
  nn::OptimizerState vae_opt;
  std::vector<DirectHead> heads;
  std::int64_t step = 0;
  Rng rng;
  Normalization normalization;
  /// Noise std in normalized units.
  double noise_sigma = 1.0;
  std::vector<double> vae_val_history;
  double best_vae_val = std::numeric_limits<double>::infinity();

  GaussianNoiseModel noise_model() const { return GaussianNoiseModel(noise_sigma); }
  const DirectHead* head(LossKind kind) const;
};

/// Fresh state: initialized networks, optimizers, normalization fitted on `train_noisy`.
TrainState init_train_state(const RunConfig& cfg, const std::vector<ImagePlane>& train_noisy);

struct StepOptions {
  double grad_clip = 5.0;
  double kl_weight = 1.0;
};

struct StepMetrics {
  std::int64_t step = 0;
  VaeLossBreakdown vae;
  std::vector<double> direct;  // one per head, in head order
  /// The sampled solutions used as the Direct Denoiser targets this step.
  nn::Tensor targets;
};

/// One simultaneous update: (1) VAE forward and sample s_hat, (2) VAE update on the
/// ELBO, (3) Direct Denoiser forward on the same batch, (4) Direct Denoiser update
/// towards s_hat held constant. `batch` is normalized, [N,H,W,1].
StepMetrics co_train_step(TrainState& state, const nn::Tensor& batch, const StepOptions& options);

/// Steps (3) and (4) alone for one head; returns the loss before the update.
double direct_update(DirectHead& head, const nn::Tensor& batch, const nn::Tensor& targets, double grad_clip);

/// VAE update on the ELBO; returns the loss breakdown and the sample drawn before the update.
std::pair<VaeLossBreakdown, nn::Tensor> vae_update(TrainState& state, const nn::Tensor& batch, const StepOptions& options);

struct ValidationResult {
  VaeLossBreakdown vae;
  std::vector<double> direct;  // one per head
};

using PredictFn = std::function<nn::Tensor(const nn::Tensor&)>;
using SampleFn = std::function<nn::Tensor(const nn::Tensor&, Rng&)>;

/// Loss of `predict(x)` against one sample of `sampler(x)` per image, drawn with Rng(seed).
double direct_validation_loss(const PredictFn& predict, const SampleFn& sampler, const nn::Tensor& x, LossKind kind,
                              std::uint64_t seed);

/// Validation images (raw units) center-cropped to a size both networks accept, normalized, stacked.
nn::Tensor prepare_validation_batch(const TrainState& state, const std::vector<ImagePlane>& val_images);

/// Deterministic for fixed state and seed: VAE ELBO with one fixed-seed sample per image,
/// and each head's loss against fresh VAE samples.
ValidationResult validate(const TrainState& state, const nn::Tensor& val_batch, std::uint64_t seed);

/// Records a validation result and applies the plateau rule to every optimizer.
void record_validation(TrainState& state, const ValidationResult& result);

/// Consecutive validations that make up `patience_epochs` epochs.
int patience_in_validations(const RunConfig& cfg);

class SpecMismatchError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
/// Throws SpecMismatchError if the checkpoint was built with a different architecture.
void check_compatible(const TrainState& state, const RunConfig& cfg);

struct TrainResult {
  TrainState state;
  std::vector<ValidationResult> validations;
  std::filesystem::path final_checkpoint;
};

/// Hook invoked after every validation; used for progress output.
using ValidationHook = std::function<void(const TrainState&, const ValidationResult&)>;

/// Runs co-training until cfg.training.total_steps, writing metrics.csv and checkpoints
/// under cfg.output_dir. Continues from `resume` when given.
TrainResult run_training(const RunConfig& cfg, const Dataset& data, std::optional<TrainState> resume = std::nullopt,
                         const ValidationHook& hook = {});

}  // namespace dud
