#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dud/error.hpp"
#include "dud/image.hpp"

namespace dud::nn {

/// Dense float tensor in channels-last (NHWC) layout: data[((n*h + y)*w + x)*c + ch].
/// Single-channel batches therefore share their memory layout with stacked ImagePlanes.
struct Tensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int h_, int w_, int c_, float fill = 0.0f)
      : n(n_), h(h_), w(w_), c(c_), data(static_cast<std::size_t>(n_) * h_ * w_ * c_, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t pixels() const noexcept { return static_cast<std::size_t>(n) * h * w; }
  bool same_shape(const Tensor& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_string() const;

  float* sample(int i) { return data.data() + static_cast<std::size_t>(i) * c * plane(); }
  const float* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * c * plane(); }

  void zero() { std::fill(data.begin(), data.end(), 0.0f); }
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

/// Stack equally sized images into an [N,H,W,1] tensor.
Tensor stack_images(const std::vector<ImagePlane>& images);
/// Split an [N,H,W,1] tensor back into images.
std::vector<ImagePlane> unstack_images(const Tensor& t);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Owns the parameters of one network. Layers refer to entries by index so the
/// owning network stays copyable.
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t scalar_count() const;
  double grad_norm() const;

 private:
  std::vector<Parameter> params_;
};

}  // namespace dud::nn
