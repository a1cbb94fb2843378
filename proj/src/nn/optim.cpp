#include "dud/nn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace dud::nn {

OptimizerState OptimizerState::for_store(const ParameterStore& store, double lr, PlateauSchedule schedule) {
  OptimizerState s;
  s.lr = lr;
  s.schedule = schedule;
  for (const auto& p : store) {
    s.first_moment.emplace_back(p.value.size(), 0.0f);
    s.inf_norm.emplace_back(p.value.size(), 0.0f);
  }
  return s;
}

void to_json(nlohmann::json& j, const OptimizerState& s) {
  j = {{"lr", s.lr},
       {"step", s.step},
       {"beta1", s.beta1},
       {"beta2", s.beta2},
       {"eps", s.eps},
       {"schedule",
        {{"factor", s.schedule.factor},
         {"patience", s.schedule.patience},
         {"threshold", s.schedule.threshold},
         {"min_lr", s.schedule.min_lr}}},
       {"best_val", s.best_val},
       {"has_best", s.has_best},
       {"bad_validations", s.bad_validations},
       {"seen", s.seen}};
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  const double norm = store.grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const auto k = static_cast<float>(max_norm / norm);
    for (auto& p : store) {
      for (float& g : p.grad.data) g *= k;
    }
  }
  return norm;
}

void adamax_step(ParameterStore& store, OptimizerState& opt) {
  if (opt.first_moment.size() != store.size()) throw Error("adamax_step: optimizer state does not match parameters");
  ++opt.step;
  const auto b1 = static_cast<float>(opt.beta1);
  const auto b2 = static_cast<float>(opt.beta2);
  const auto eps = static_cast<float>(opt.eps);
  const auto step_size = static_cast<float>(opt.lr / (1.0 - std::pow(opt.beta1, static_cast<double>(opt.step))));
  for (std::size_t k = 0; k < store.size(); ++k) {
    auto& value = store[k].value.data;
    const auto& grad = store[k].grad.data;
    auto& m = opt.first_moment[k];
    auto& u = opt.inf_norm[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * grad[i];
      u[i] = std::max(b2 * u[i], std::abs(grad[i]) + eps);
      value[i] -= step_size * m[i] / u[i];
    }
  }
}

OptimizerState lr_plateau_update(OptimizerState opt, std::span<const double> val_history) {
  for (std::size_t i = opt.seen; i < val_history.size(); ++i) {
    const double v = val_history[i];
    if (!opt.has_best || v < opt.best_val - opt.schedule.threshold) {
      opt.best_val = v;
      opt.has_best = true;
      opt.bad_validations = 0;
      continue;
    }
    if (++opt.bad_validations >= opt.schedule.patience) {
      opt.lr = std::max(opt.lr * opt.schedule.factor, opt.schedule.min_lr);
      opt.bad_validations = 0;
    }
  }
  opt.seen = std::max(opt.seen, val_history.size());
  return opt;
}

}  // namespace dud::nn
