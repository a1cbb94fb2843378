#include "dud/vae.hpp"

#include <cmath>
#include <string>

#include "dud/nn/ops.hpp"

namespace dud {

using nn::Graph;
using nn::Tensor;
using nn::Var;

void VaeSpec::validate() const {
  if (levels < 1) throw ConfigError("vae.levels", "must be >= 1");
  if (channels < 1) throw ConfigError("vae.channels", "must be >= 1");
  if (latent_channels < 1) throw ConfigError("vae.latent_channels", "must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("vae.kernel_size", "must be odd and positive");
  if (!(logvar_clamp > 0.0f)) throw ConfigError("vae.logvar_clamp", "must be > 0");
}

void to_json(nlohmann::json& j, const VaeSpec& s) {
  j = {{"levels", s.levels},
       {"channels", s.channels},
       {"latent_channels", s.latent_channels},
       {"kernel_size", s.kernel_size},
       {"logvar_clamp", s.logvar_clamp}};
}

void from_json(const nlohmann::json& j, VaeSpec& s) {
  s.levels = j.value("levels", s.levels);
  s.channels = j.value("channels", s.channels);
  s.latent_channels = j.value("latent_channels", s.latent_channels);
  s.kernel_size = j.value("kernel_size", s.kernel_size);
  s.logvar_clamp = j.value("logvar_clamp", s.logvar_clamp);
}

DenoisingVAE::DenoisingVAE(const VaeSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec.validate();
  Rng rng(seed);
  const int c = spec.channels;
  const int k = spec.kernel_size;
  stem_ = nn::Conv::create(params_, "vae.stem", 1, c, k, 1, rng);
  stem_block_ = nn::ResBlock::create(params_, "vae.stem_block", c, c, k, rng);
  for (int l = 0; l < spec.levels; ++l) {
    const std::string name = "vae.level" + std::to_string(l);
    down_.push_back(nn::Conv::create(params_, name + ".down", c, c, k, 2, rng));
    down_block_.push_back(nn::ResBlock::create(params_, name + ".down_block", c, c, k, rng));
    // Small initial heads start every posterior close to the prior.
    posterior_head_.push_back(nn::Conv::create(params_, name + ".posterior", c, 2 * spec.latent_channels, k, 1, rng, 0.1f));
    latent_in_.push_back(nn::Conv::create(params_, name + ".latent_in", spec.latent_channels, c, k, 1, rng));
    const int merge_in = l == spec.levels - 1 ? c : 2 * c;
    merge_block_.push_back(nn::ResBlock::create(params_, name + ".merge", merge_in, c, k, rng));
    up_.push_back(nn::Conv::create(params_, name + ".up", c, c, k, 1, rng));
  }
  out_block_ = nn::ResBlock::create(params_, "vae.out_block", c, c, k, rng);
  out_ = nn::Conv::create(params_, "vae.out", c, 1, k, 1, rng, 0.5f);
}

namespace {

void require_finite(const Graph& g, Var v, const std::string& layer) {
  if (!g.value(v).all_finite()) throw NumericError("vae: non-finite activations at " + layer);
}

}  // namespace

template <class Store>
DenoisingVAE::GraphPosterior DenoisingVAE::encode(Graph& g, Store& store, Var x) const {
  GraphPosterior post;
  Var h = stem_block_(g, store, stem_(g, store, x));
  const int z = spec_.latent_channels;
  for (int l = 0; l < spec_.levels; ++l) {
    h = down_block_[l](g, store, down_[l](g, store, h));
    Var head = posterior_head_[l](g, store, h);
    require_finite(g, head, "encoder level " + std::to_string(l) + " posterior head");
    post.mean.push_back(nn::slice_channels(g, head, 0, z));
    post.logvar.push_back(nn::clamp(g, nn::slice_channels(g, head, z, 2 * z), -spec_.logvar_clamp, spec_.logvar_clamp));
  }
  return post;
}

template <class Store>
Var DenoisingVAE::decode(Graph& g, Store& store, const std::vector<Var>& z) const {
  if (static_cast<int>(z.size()) != spec_.levels) throw ShapeError("vae decode: wrong number of latent levels");
  for (int l = 0; l < spec_.levels; ++l) {
    if (g.value(z[l]).c != spec_.latent_channels) throw ShapeError("vae decode: latent channel mismatch at level " + std::to_string(l));
  }
  const int top = spec_.levels - 1;
  Var t = merge_block_[top](g, store, latent_in_[top](g, store, z[top]));
  for (int l = top - 1; l >= 0; --l) {
    t = up_[l + 1](g, store, nn::upsample2x(g, t));
    const Tensor& lat = g.value(z[l]);
    if (g.value(t).h != lat.h || g.value(t).w != lat.w) {
      throw ShapeError("vae decode: latent level " + std::to_string(l) + " has shape " + lat.shape_string());
    }
    t = merge_block_[l](g, store, nn::concat(g, t, latent_in_[l](g, store, z[l])));
  }
  t = up_[0](g, store, nn::upsample2x(g, t));
  Var s = out_(g, store, out_block_(g, store, t));
  require_finite(g, s, "decoder output");
  return s;
}

template DenoisingVAE::GraphPosterior DenoisingVAE::encode(Graph&, nn::ParameterStore&, Var) const;
template DenoisingVAE::GraphPosterior DenoisingVAE::encode(Graph&, const nn::ParameterStore&, Var) const;
template Var DenoisingVAE::decode(Graph&, nn::ParameterStore&, const std::vector<Var>&) const;
template Var DenoisingVAE::decode(Graph&, const nn::ParameterStore&, const std::vector<Var>&) const;

void DenoisingVAE::check_input(const Tensor& x) const {
  if (x.c != 1) throw ShapeError("vae: expected single-channel input, got " + x.shape_string());
  const int m = spec_.size_multiple();
  if (x.h % m != 0 || x.w % m != 0) {
    throw ShapeError("vae: spatial size " + x.shape_string() + " not divisible by " + std::to_string(m));
  }
}

namespace {

Tensor standard_normal_like(const Tensor& like, Rng& rng) {
  Tensor eps(like.n, like.h, like.w, like.c);
  for (float& v : eps.data) v = rng.normal();
  return eps;
}

}  // namespace

template <class Store>
VaeForward DenoisingVAE::forward_loss(Graph& g, Store& store, const Tensor& x, const GaussianNoiseModel& noise,
                                      Rng& rng, double kl_weight) const {
  check_input(x);
  Var input = g.constant(x);
  GraphPosterior post = encode(g, store, input);
  std::vector<Var> z;
  for (int l = 0; l < spec_.levels; ++l) {
    z.push_back(nn::reparameterize(g, post.mean[l], post.logvar[l], standard_normal_like(g.value(post.mean[l]), rng)));
  }
  Var s = decode(g, store, z);
  const double pixels = static_cast<double>(x.size());
  Var recon = nn::gaussian_nll_mean(g, s, x, noise.sigma());
  Var kl = nn::kl_standard_normal(g, post.mean[0], post.logvar[0], pixels);
  for (int l = 1; l < spec_.levels; ++l) kl = nn::add(g, kl, nn::kl_standard_normal(g, post.mean[l], post.logvar[l], pixels));
  Var total = nn::add(g, recon, nn::scale(g, kl, static_cast<float>(kl_weight)));

  VaeForward out{total, recon, kl, s, {}};
  out.breakdown.reconstruction = g.value(recon).data[0];
  out.breakdown.kl = g.value(kl).data[0];
  out.breakdown.total = g.value(total).data[0];
  if (!std::isfinite(out.breakdown.total)) throw NumericError("vae: non-finite loss");
  return out;
}

VaeForward DenoisingVAE::loss(Graph& g, const Tensor& x, const GaussianNoiseModel& noise, Rng& rng, double kl_weight) {
  return forward_loss(g, params_, x, noise, rng, kl_weight);
}

VaeLossBreakdown DenoisingVAE::evaluate_loss(const Tensor& x, const GaussianNoiseModel& noise, Rng& rng,
                                             double kl_weight) const {
  Graph g(false);
  return forward_loss(g, params_, x, noise, rng, kl_weight).breakdown;
}

PosteriorParams DenoisingVAE::encode(const Tensor& x) const {
  check_input(x);
  Graph g(false);
  GraphPosterior post = encode(g, params_, g.constant(x));
  PosteriorParams out;
  for (int l = 0; l < spec_.levels; ++l) {
    out.mean.push_back(g.value(post.mean[l]));
    out.logvar.push_back(g.value(post.logvar[l]));
  }
  return out;
}

Tensor DenoisingVAE::decode(const std::vector<Tensor>& z) const {
  Graph g(false);
  std::vector<Var> vars;
  for (const auto& t : z) vars.push_back(g.constant(t));
  return g.value(decode(g, params_, vars));
}

Tensor DenoisingVAE::sample(const Tensor& x, Rng& rng) const { return decode(sample_latent(encode(x), rng)); }

std::vector<Tensor> DenoisingVAE::latent_shapes(int batch, int height, int width) const {
  std::vector<Tensor> out;
  for (int l = 0; l < spec_.levels; ++l) {
    out.emplace_back(batch, height >> (l + 1), width >> (l + 1), spec_.latent_channels);
  }
  return out;
}

std::vector<Tensor> sample_latent(const PosteriorParams& posterior, Rng& rng) {
  if (posterior.mean.size() != posterior.logvar.size()) throw ShapeError("sample_latent: level count mismatch");
  std::vector<Tensor> z;
  for (std::size_t l = 0; l < posterior.mean.size(); ++l) {
    nn::require_same_shape(posterior.mean[l], posterior.logvar[l], "sample_latent");
    Tensor out = posterior.mean[l];
    const auto& lv = posterior.logvar[l].data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += std::exp(0.5f * lv[i]) * rng.normal();
    z.push_back(std::move(out));
  }
  return z;
}

double kl_divergence(std::span<const float> mean, std::span<const float> logvar) {
  if (mean.size() != logvar.size()) throw ShapeError("kl_divergence: shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double m = mean[i];
    const double lv = logvar[i];
    sum += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
  }
  return sum;
}

}  // namespace dud
