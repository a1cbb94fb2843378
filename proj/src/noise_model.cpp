#include "dud/noise_model.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace dud {

GaussianNoiseModel::GaussianNoiseModel(double sigma) : sigma_(sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("noise_model.sigma", "must be finite and > 0, got " + std::to_string(sigma));
  }
}

namespace {

template <class T>
double gaussian_ll(double sigma, std::span<const T> x, std::span<const T> s) {
  if (x.size() != s.size()) throw ShapeError("log_likelihood: shape mismatch");
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma);
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(s[i]);
    sum_sq += d * d;
  }
  return static_cast<double>(x.size()) * log_norm - sum_sq * inv_two_var;
}

template <class T>
void gaussian_grad(double sigma, std::span<const T> x, std::span<const T> s, std::span<T> grad) {
  if (x.size() != s.size() || grad.size() != s.size()) throw ShapeError("neg_log_likelihood_grad: shape mismatch");
  const double inv_var = 1.0 / (sigma * sigma);
  for (std::size_t i = 0; i < s.size(); ++i) {
    grad[i] = static_cast<T>((static_cast<double>(s[i]) - static_cast<double>(x[i])) * inv_var);
  }
}

}  // namespace

double GaussianNoiseModel::log_likelihood(std::span<const float> x, std::span<const float> s) const {
  return gaussian_ll<float>(sigma_, x, s);
}

void GaussianNoiseModel::neg_log_likelihood_grad(std::span<const float> x, std::span<const float> s,
                                                 std::span<float> grad) const {
  gaussian_grad<float>(sigma_, x, s, grad);
}

double GaussianNoiseModel::log_likelihood(std::span<const double> x, std::span<const double> s) const {
  return gaussian_ll<double>(sigma_, x, s);
}

void GaussianNoiseModel::neg_log_likelihood_grad(std::span<const double> x, std::span<const double> s,
                                                 std::span<double> grad) const {
  gaussian_grad<double>(sigma_, x, s, grad);
}

}  // namespace dud
