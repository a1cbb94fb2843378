#pragma once

#include <vector>

#include <json.hpp>

#include "dud/image.hpp"
#include "dud/nn/layers.hpp"
#include "dud/nn/tensor.hpp"
#include "dud/noise_model.hpp"
#include "dud/rng.hpp"

namespace dud {

struct VaeSpec {
  /// Number of latent levels; level l lives at 1/2^l of the input resolution.
  int levels = 2;
  int channels = 32;
  int latent_channels = 8;
  int kernel_size = 3;
  /// Posterior log-variances are clamped to [-logvar_clamp, logvar_clamp].
  float logvar_clamp = 10.0f;

  void validate() const;
  int size_multiple() const { return 1 << levels; }
  friend bool operator==(const VaeSpec&, const VaeSpec&) = default;
};

void to_json(nlohmann::json& j, const VaeSpec& spec);
void from_json(const nlohmann::json& j, VaeSpec& spec);

/// Diagonal-Gaussian posterior parameters, one entry per latent level (finest first).
struct PosteriorParams {
  std::vector<nn::Tensor> mean;
  std::vector<nn::Tensor> logvar;
};

struct VaeLossBreakdown {
  double reconstruction = 0.0;  // mean over pixels of -log p(x|s)
  double kl = 0.0;              // KL summed over latents, divided by pixel count
  double total = 0.0;           // reconstruction + kl_weight * kl
};

/// Graph handles produced by one VAE training forward pass.
struct VaeForward {
  nn::Var total;
  nn::Var reconstruction;
  nn::Var kl;
  nn::Var signal;
  VaeLossBreakdown breakdown;
};

/// Hierarchical convolutional VAE with standard-normal priors at every level.
/// The encoder is a stride-2 bottom-up pathway emitting a posterior per level; the
/// decoder runs top-down, merging each level's latent into the upsampled features.
class DenoisingVAE {
 public:
  DenoisingVAE() = default;
  DenoisingVAE(const VaeSpec& spec, std::uint64_t seed);

  const VaeSpec& spec() const noexcept { return spec_; }
  nn::ParameterStore& params() noexcept { return params_; }
  const nn::ParameterStore& params() const noexcept { return params_; }

  // Graph-level building blocks (Store is ParameterStore or const ParameterStore).
  struct GraphPosterior {
    std::vector<nn::Var> mean;
    std::vector<nn::Var> logvar;
  };
  template <class Store>
  GraphPosterior encode(nn::Graph& g, Store& store, nn::Var x) const;
  template <class Store>
  nn::Var decode(nn::Graph& g, Store& store, const std::vector<nn::Var>& z) const;

  /// Single-sample Monte-Carlo ELBO on a normalized batch [N,H,W,1]; draws eps from `rng`.
  VaeForward loss(nn::Graph& g, const nn::Tensor& x, const GaussianNoiseModel& noise, Rng& rng,
                  double kl_weight = 1.0);
  /// Same estimate without building a differentiable graph.
  VaeLossBreakdown evaluate_loss(const nn::Tensor& x, const GaussianNoiseModel& noise, Rng& rng,
                                 double kl_weight = 1.0) const;

  // Inference (no gradient) conveniences.
  PosteriorParams encode(const nn::Tensor& x) const;
  nn::Tensor decode(const std::vector<nn::Tensor>& z) const;
  /// One posterior sample of the signal for each input in the batch.
  nn::Tensor sample(const nn::Tensor& x, Rng& rng) const;

  /// Latent shapes for an input of the given spatial size.
  std::vector<nn::Tensor> latent_shapes(int batch, int height, int width) const;

 private:
  void check_input(const nn::Tensor& x) const;
  template <class Store>
  VaeForward forward_loss(nn::Graph& g, Store& store, const nn::Tensor& x, const GaussianNoiseModel& noise, Rng& rng,
                          double kl_weight) const;

  VaeSpec spec_;
  nn::ParameterStore params_;
  nn::Conv stem_;
  nn::ResBlock stem_block_;
  std::vector<nn::Conv> down_;
  std::vector<nn::ResBlock> down_block_;
  std::vector<nn::Conv> posterior_head_;
  std::vector<nn::Conv> latent_in_;
  std::vector<nn::ResBlock> merge_block_;
  std::vector<nn::Conv> up_;
  nn::ResBlock out_block_;
  nn::Conv out_;
};

/// z = mean + exp(logvar / 2) * eps, eps ~ N(0, I) drawn from `rng`.
std::vector<nn::Tensor> sample_latent(const PosteriorParams& posterior, Rng& rng);

/// Closed-form KL(N(mean, exp(logvar)) || N(0, 1)) summed over all elements.
double kl_divergence(std::span<const float> mean, std::span<const float> logvar);

}  // namespace dud
