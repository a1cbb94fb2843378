#include "dud/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace dud::nn {

std::string Tensor::shape_string() const {
  return "[" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
         std::to_string(c) + "]";
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

Tensor stack_images(const std::vector<ImagePlane>& images) {
  if (images.empty()) throw ShapeError("stack_images: empty batch");
  const int h = images.front().height();
  const int w = images.front().width();
  Tensor t(static_cast<int>(images.size()), h, w, 1);
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_shape(images[i], images.front(), "stack_images");
    std::copy(images[i].pixels().begin(), images[i].pixels().end(), t.sample(static_cast<int>(i)));
  }
  return t;
}

std::vector<ImagePlane> unstack_images(const Tensor& t) {
  if (t.c != 1) throw ShapeError("unstack_images: expected one channel, got " + t.shape_string());
  std::vector<ImagePlane> out;
  out.reserve(t.n);
  for (int i = 0; i < t.n; ++i) {
    out.emplace_back(t.h, t.w, std::vector<float>(t.sample(i), t.sample(i) + t.plane()));
  }
  return out;
}

std::size_t ParameterStore::add(std::string name, Tensor value) {
  Tensor grad(value.n, value.h, value.w, value.c);
  params_.push_back({std::move(name), std::move(value), std::move(grad)});
  return params_.size() - 1;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.zero();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (float g : p.grad.data) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

}  // namespace dud::nn
