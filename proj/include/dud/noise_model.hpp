#pragma once

#include <span>

#include "dud/image.hpp"

namespace dud {

/// Observation likelihood p(x | s) over per-pixel independent noise.
class NoiseModel {
 public:
  virtual ~NoiseModel() = default;
  /// Sum over pixels of log p(x_i | s_i).
  virtual double log_likelihood(std::span<const float> x, std::span<const float> s) const = 0;
  /// d(-log p(x_i | s_i)) / d s_i, written into `grad`.
  virtual void neg_log_likelihood_grad(std::span<const float> x, std::span<const float> s,
                                       std::span<float> grad) const = 0;

  double log_likelihood(const ImagePlane& x, const ImagePlane& s) const {
    require_same_shape(x, s, "log_likelihood");
    return log_likelihood(x.pixels(), s.pixels());
  }
};

/// Zero-mean Gaussian noise with known standard deviation.
class GaussianNoiseModel final : public NoiseModel {
 public:
  explicit GaussianNoiseModel(double sigma);

  double sigma() const noexcept { return sigma_; }

  using NoiseModel::log_likelihood;
  double log_likelihood(std::span<const float> x, std::span<const float> s) const override;
  void neg_log_likelihood_grad(std::span<const float> x, std::span<const float> s,
                               std::span<float> grad) const override;
  // 64-bit variants.
  double log_likelihood(std::span<const double> x, std::span<const double> s) const;
  void neg_log_likelihood_grad(std::span<const double> x, std::span<const double> s, std::span<double> grad) const;

  /// The same model expressed in units where pixels were divided by `scale`.
  GaussianNoiseModel rescaled(double scale) const { return GaussianNoiseModel(sigma_ / scale); }

 private:
  double sigma_;
};

}  // namespace dud
