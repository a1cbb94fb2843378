#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dud/image.hpp"
#include "dud/nn/layers.hpp"
#include "dud/nn/tensor.hpp"

namespace dud {

enum class LossKind { l1, l2 };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& text);

struct UNetSpec {
  int depth = 4;
  int base_filters = 16;
  int kernel_size = 3;
  // Topology descriptors. Only the listed values are implemented; they are
  // stored so checkpoints and configs are self-describing.
  std::string residual_block = "two_conv_relu";
  std::string downsample = "strided_conv";
  std::string upsample = "nearest_conv";
  std::string skip_merge = "concat_resblock";

  void validate() const;
  int size_multiple() const { return 1 << depth; }
  friend bool operator==(const UNetSpec&, const UNetSpec&) = default;
};

void to_json(nlohmann::json& j, const UNetSpec& spec);
void from_json(const nlohmann::json& j, UNetSpec& spec);

/// Residual UNet: stride-2 conv downsampling, nearest-neighbour + conv upsampling,
/// skip features concatenated and passed through a residual block. Filters double per level.
class UNet {
 public:
  UNet() = default;
  UNet(const UNetSpec& spec, std::uint64_t seed);

  const UNetSpec& spec() const noexcept { return spec_; }
  nn::ParameterStore& params() noexcept { return params_; }
  const nn::ParameterStore& params() const noexcept { return params_; }

  template <class Store>
  nn::Var forward(nn::Graph& g, Store& store, nn::Var x) const;

  /// Inference on [N,H,W,1] with H, W divisible by 2^depth.
  nn::Tensor forward(const nn::Tensor& x) const;

 private:
  UNetSpec spec_;
  nn::ParameterStore params_;
  nn::Conv stem_;
  std::vector<nn::ResBlock> enc_;
  std::vector<nn::Conv> down_;
  std::vector<nn::Conv> up_;
  std::vector<nn::ResBlock> dec_;
  nn::Conv head_;
};

/// Deterministic network trained to output a central tendency of the denoising distribution.
struct DirectDenoiser {
  UNet net;
  LossKind loss_kind = LossKind::l2;

  /// Batch forward; sizes must be divisible by 2^depth.
  nn::Tensor forward(const nn::Tensor& x) const;
  /// Any size: reflect-pad to the next multiple of 2^depth, run, center-crop back.
  ImagePlane forward(const ImagePlane& x) const;
};

/// Mean over pixels (and batch) of |y - s|.
double l1_loss(const nn::Tensor& y, const nn::Tensor& s);
/// Mean over pixels (and batch) of (y - s)^2.
double l2_loss(const nn::Tensor& y, const nn::Tensor& s);
double direct_loss(LossKind kind, const nn::Tensor& y, const nn::Tensor& s);
/// Gradient of the loss with respect to y; the L1 subgradient at y == s is 0.
nn::Tensor direct_loss_grad(LossKind kind, const nn::Tensor& y, const nn::Tensor& s);

// 64-bit versions over flat arrays.
double direct_loss(LossKind kind, std::span<const double> y, std::span<const double> s);
std::vector<double> direct_loss_grad(LossKind kind, std::span<const double> y, std::span<const double> s);

}  // namespace dud
