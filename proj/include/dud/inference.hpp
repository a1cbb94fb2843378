#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dud/direct.hpp"
#include "dud/image.hpp"
#include "dud/rng.hpp"
#include "dud/training.hpp"
#include "dud/vae.hpp"

namespace dud {

enum class Aggregator { mean, median };

std::string to_string(Aggregator a);
Aggregator aggregator_from_string(const std::string& s);

struct ConsensusSpec {
  int n_samples = 1;
  Aggregator aggregator = Aggregator::mean;
  /// Upper bound for the median sample stack; larger stacks are processed in row bands.
  std::size_t memory_budget_bytes = std::size_t{1} << 30;

  void validate() const;
};

/// Draws images from a denoising distribution conditioned on a raw noisy image.
class SolutionSampler {
 public:
  using Draw = std::function<ImagePlane(Rng&)>;

  virtual ~SolutionSampler() = default;
  /// Work that depends only on `x` happens here once; the returned callable draws one sample.
  virtual Draw bind(const ImagePlane& x) const = 0;

  ImagePlane sample(const ImagePlane& x, Rng& rng) const { return bind(x)(rng); }
};

/// Encodes once per image, then decodes one latent draw per sample. Inputs are
/// reflect-padded to the VAE's size multiple and normalized; outputs come back in raw units.
class VaeSampler : public SolutionSampler {
 public:
  VaeSampler(const DenoisingVAE& vae, const Normalization& norm) : vae_(vae), norm_(norm) {}
  Draw bind(const ImagePlane& x) const override;

 private:
  const DenoisingVAE& vae_;
  Normalization norm_;
};

ImagePlane sample_solution(const SolutionSampler& sampler, const ImagePlane& x, Rng& rng);

/// Per-pixel mean or median over spec.n_samples draws; draw i uses Rng(derive_seed(master_seed, i)).
ImagePlane consensus(const SolutionSampler& sampler, const ImagePlane& x, const ConsensusSpec& spec,
                     std::uint64_t master_seed);

/// Per-pixel aggregate of an explicit stack. Even counts take the midpoint of the two central values.
ImagePlane aggregate(const std::vector<ImagePlane>& stack, Aggregator aggregator);

/// One forward pass of the Direct Denoiser on a raw image; output in raw units.
ImagePlane direct_denoise(const DirectDenoiser& dd, const Normalization& norm, const ImagePlane& x);

}  // namespace dud
