#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dud/dataset.hpp"
#include "dud/direct.hpp"
#include "dud/vae.hpp"

namespace dud {

struct TrainingConfig {
  int batch_size = 64;
  int patch_size = 64;
  std::int64_t total_steps = 10000;
  std::int64_t validation_interval = 250;
  double lr_vae = 3e-4;
  double lr_direct = 3e-4;
  double lr_factor = 0.5;
  /// Plateau patience in epochs; an epoch is ceil(count_train / batch_size) steps.
  double patience_epochs = 10.0;
  double plateau_threshold = 1e-6;
  double min_lr = 1e-6;
  double grad_clip = 5.0;
  double kl_weight = 1.0;
  /// Linear KL warm-up over this fraction of total_steps; 0 disables it.
  double kl_warmup_fraction = 0.0;
};

struct SeedConfig {
  std::uint64_t init = 1;
  std::uint64_t train = 2;
  std::uint64_t validation = 3;
  std::uint64_t inference = 4;
};

struct InferenceConfig {
  int n_samples = 100;
  std::string aggregator = "mean";
  /// Exact medians keep the full sample stack while it fits in this budget.
  std::size_t median_memory_budget_mb = 1024;
};

struct BenchConfig {
  std::vector<int> n_list = {1, 10, 100};
  bool include_1000 = false;
};

struct RunConfig {
  DatasetSpec dataset;
  /// Existing dataset directory; when empty the dataset is synthesized from `dataset`.
  std::string dataset_path;
  /// Noise std in raw pixel units; defaults to dataset.noise_sigma.
  std::optional<double> noise_sigma;
  VaeSpec vae;
  UNetSpec unet;
  std::vector<LossKind> loss_kinds = {LossKind::l2};
  TrainingConfig training;
  SeedConfig seeds;
  InferenceConfig inference;
  BenchConfig bench;
  std::string output_dir = "run";

  double raw_noise_sigma() const { return noise_sigma.value_or(dataset.noise_sigma); }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& cfg);
/// Missing keys keep their defaults.
RunConfig config_from_json(const nlohmann::json& j);

/// Applies `key.path=value` overrides; `value` is parsed as JSON, falling back to a string.
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& assignments);

/// Replaces every seed with `value` (the DUD_SEED_OVERRIDE contract).
void override_seeds(RunConfig& cfg, std::uint64_t value);

/// Reads a config file (defaults when `path` is empty), applies overrides and DUD_SEED_OVERRIDE, validates.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace dud
