#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "dud/nn/tensor.hpp"

namespace dud::nn {

struct PlateauSchedule {
  double factor = 0.5;
  /// Consecutive validations without improvement before the LR is reduced.
  int patience = 10;
  double threshold = 1e-6;
  double min_lr = 1e-6;

  friend bool operator==(const PlateauSchedule&, const PlateauSchedule&) = default;
};

/// Adamax moments plus learning-rate schedule bookkeeping for one network.
struct OptimizerState {
  double lr = 3e-4;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> inf_norm;

  PlateauSchedule schedule;
  double best_val = 0.0;
  bool has_best = false;
  int bad_validations = 0;
  /// Number of validation-history entries already consumed by lr_plateau_update.
  std::size_t seen = 0;

  static OptimizerState for_store(const ParameterStore& store, double lr, PlateauSchedule schedule = {});

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

void to_json(nlohmann::json& j, const OptimizerState& s);

/// Scales all gradients so their global L2 norm is at most `max_norm`. Returns the pre-clip norm.
double clip_grad_norm(ParameterStore& store, double max_norm);

/// One Adamax update from the gradients currently held in `store`.
void adamax_step(ParameterStore& store, OptimizerState& opt);

/// Consumes the unseen tail of `val_history`; halves the LR (floored at min_lr) after
/// `patience` consecutive validations that fail to beat the best by `threshold`.
OptimizerState lr_plateau_update(OptimizerState opt, std::span<const double> val_history);

}  // namespace dud::nn
