#include "dud/direct.hpp"

#include <cmath>

namespace dud {

using nn::Graph;
using nn::Tensor;
using nn::Var;

std::string to_string(LossKind kind) { return kind == LossKind::l1 ? "L1" : "L2"; }

LossKind loss_kind_from_string(const std::string& text) {
  if (text == "L1" || text == "l1") return LossKind::l1;
  if (text == "L2" || text == "l2") return LossKind::l2;
  throw ConfigError("direct.loss_kinds", "unknown loss kind '" + text + "' (expected L1 or L2)");
}

void UNetSpec::validate() const {
  if (depth < 1) throw ConfigError("direct.unet.depth", "must be >= 1");
  if (base_filters < 1) throw ConfigError("direct.unet.base_filters", "must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("direct.unet.kernel_size", "must be odd and positive");
  if (residual_block != "two_conv_relu") throw ConfigError("direct.unet.residual_block", "unsupported '" + residual_block + "'");
  if (downsample != "strided_conv") throw ConfigError("direct.unet.downsample", "unsupported '" + downsample + "'");
  if (upsample != "nearest_conv") throw ConfigError("direct.unet.upsample", "unsupported '" + upsample + "'");
  if (skip_merge != "concat_resblock") throw ConfigError("direct.unet.skip_merge", "unsupported '" + skip_merge + "'");
}

void to_json(nlohmann::json& j, const UNetSpec& s) {
  j = {{"depth", s.depth},
       {"base_filters", s.base_filters},
       {"kernel_size", s.kernel_size},
       {"residual_block", s.residual_block},
       {"downsample", s.downsample},
       {"upsample", s.upsample},
       {"skip_merge", s.skip_merge}};
}

void from_json(const nlohmann::json& j, UNetSpec& s) {
  s.depth = j.value("depth", s.depth);
  s.base_filters = j.value("base_filters", s.base_filters);
  s.kernel_size = j.value("kernel_size", s.kernel_size);
  s.residual_block = j.value("residual_block", s.residual_block);
  s.downsample = j.value("downsample", s.downsample);
  s.upsample = j.value("upsample", s.upsample);
  s.skip_merge = j.value("skip_merge", s.skip_merge);
}

UNet::UNet(const UNetSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec.validate();
  Rng rng(seed);
  const int k = spec.kernel_size;
  auto filters = [&](int level) { return spec.base_filters << level; };
  stem_ = nn::Conv::create(params_, "unet.stem", 1, filters(0), k, 1, rng);
  enc_.push_back(nn::ResBlock::create(params_, "unet.enc0", filters(0), filters(0), k, rng));
  for (int l = 1; l <= spec.depth; ++l) {
    down_.push_back(nn::Conv::create(params_, "unet.down" + std::to_string(l), filters(l - 1), filters(l), k, 2, rng));
    enc_.push_back(nn::ResBlock::create(params_, "unet.enc" + std::to_string(l), filters(l), filters(l), k, rng));
  }
  for (int l = 1; l <= spec.depth; ++l) {
    up_.push_back(nn::Conv::create(params_, "unet.up" + std::to_string(l), filters(l), filters(l - 1), k, 1, rng));
    dec_.push_back(nn::ResBlock::create(params_, "unet.dec" + std::to_string(l - 1), 2 * filters(l - 1), filters(l - 1), k, rng));
  }
  head_ = nn::Conv::create(params_, "unet.head", filters(0), 1, k, 1, rng, 0.5f);
}

template <class Store>
Var UNet::forward(Graph& g, Store& store, Var x) const {
  const Tensor& xv = g.value(x);
  const int m = spec_.size_multiple();
  if (xv.c != 1 || xv.h % m != 0 || xv.w % m != 0) {
    throw ShapeError("unet: input " + xv.shape_string() + " must be single-channel with sides divisible by " +
                     std::to_string(m));
  }
  std::vector<Var> skips;
  Var h = enc_[0](g, store, stem_(g, store, x));
  skips.push_back(h);
  for (int l = 1; l <= spec_.depth; ++l) {
    h = enc_[l](g, store, down_[l - 1](g, store, h));
    skips.push_back(h);
  }
  for (int l = spec_.depth; l >= 1; --l) {
    Var up = up_[l - 1](g, store, nn::upsample2x(g, h));
    h = dec_[l - 1](g, store, nn::concat(g, skips[l - 1], up));
  }
  Var out = head_(g, store, h);
  if (!g.value(out).all_finite()) throw NumericError("unet: non-finite output");
  return out;
}

template Var UNet::forward(Graph&, nn::ParameterStore&, Var) const;
template Var UNet::forward(Graph&, const nn::ParameterStore&, Var) const;

Tensor UNet::forward(const Tensor& x) const {
  Graph g(false);
  return g.value(forward(g, params_, g.constant(x)));
}

Tensor DirectDenoiser::forward(const Tensor& x) const { return net.forward(x); }

ImagePlane DirectDenoiser::forward(const ImagePlane& x) const {
  const ImagePlane padded = pad_to_multiple(x, net.spec().size_multiple());
  const Tensor out = net.forward(nn::stack_images({padded}));
  return center_crop(nn::unstack_images(out).front(), x.height(), x.width());
}

namespace {

template <class T>
double loss_impl(LossKind kind, std::span<const T> y, std::span<const T> s) {
  if (y.size() != s.size()) throw ShapeError("direct loss: size mismatch");
  if (y.empty()) throw ShapeError("direct loss: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(y[i]) - static_cast<double>(s[i]);
    sum += kind == LossKind::l1 ? std::abs(d) : d * d;
  }
  return sum / static_cast<double>(y.size());
}

template <class T>
void grad_impl(LossKind kind, std::span<const T> y, std::span<const T> s, std::span<T> out) {
  if (y.size() != s.size()) throw ShapeError("direct loss grad: size mismatch");
  const double inv_n = 1.0 / static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(y[i]) - static_cast<double>(s[i]);
    const double g = kind == LossKind::l2 ? 2.0 * d * inv_n : (d > 0 ? inv_n : (d < 0 ? -inv_n : 0.0));
    out[i] = static_cast<T>(g);
  }
}

}  // namespace

double l1_loss(const Tensor& y, const Tensor& s) {
  nn::require_same_shape(y, s, "l1_loss");
  return loss_impl<float>(LossKind::l1, y.data, s.data);
}

double l2_loss(const Tensor& y, const Tensor& s) {
  nn::require_same_shape(y, s, "l2_loss");
  return loss_impl<float>(LossKind::l2, y.data, s.data);
}

double direct_loss(LossKind kind, const Tensor& y, const Tensor& s) {
  return kind == LossKind::l1 ? l1_loss(y, s) : l2_loss(y, s);
}

Tensor direct_loss_grad(LossKind kind, const Tensor& y, const Tensor& s) {
  nn::require_same_shape(y, s, "direct_loss_grad");
  Tensor grad(y.n, y.h, y.w, y.c);
  grad_impl<float>(kind, y.data, s.data, grad.data);
  return grad;
}

double direct_loss(LossKind kind, std::span<const double> y, std::span<const double> s) {
  return loss_impl<double>(kind, y, s);
}

std::vector<double> direct_loss_grad(LossKind kind, std::span<const double> y, std::span<const double> s) {
  std::vector<double> out(y.size());
  grad_impl<double>(kind, y, s, out);
  return out;
}

}  // namespace dud
