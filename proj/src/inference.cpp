#include "dud/inference.hpp"

#include <algorithm>
#include <memory>

#include "dud/error.hpp"

namespace dud {

std::string to_string(Aggregator a) { return a == Aggregator::mean ? "mean" : "median"; }

Aggregator aggregator_from_string(const std::string& s) {
  if (s == "mean") return Aggregator::mean;
  if (s == "median") return Aggregator::median;
  throw ConfigError("inference.aggregator", "unknown aggregator '" + s + "' (expected mean or median)");
}

void ConsensusSpec::validate() const {
  if (n_samples < 1) throw ConfigError("inference.n_samples", "must be at least 1");
  if (memory_budget_bytes == 0) throw ConfigError("inference.median_memory_budget_mb", "must be positive");
}

SolutionSampler::Draw VaeSampler::bind(const ImagePlane& x) const {
  const ImagePlane padded = pad_to_multiple(norm_.apply(x), vae_.spec().size_multiple());
  auto posterior = std::make_shared<PosteriorParams>(vae_.encode(nn::stack_images({padded})));
  const int h = x.height();
  const int w = x.width();
  const DenoisingVAE& vae = vae_;
  const Normalization norm = norm_;
  return [posterior, h, w, &vae, norm](Rng& rng) {
    const nn::Tensor s = vae.decode(sample_latent(*posterior, rng));
    return norm.invert(center_crop(nn::unstack_images(s).front(), h, w));
  };
}

ImagePlane sample_solution(const SolutionSampler& sampler, const ImagePlane& x, Rng& rng) {
  return sampler.sample(x, rng);
}

namespace {

float median_of(std::vector<float>& v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  const float hi = *mid;
  if (n % 2 == 1) return hi;
  const float lo = *std::max_element(v.begin(), mid);
  return static_cast<float>((static_cast<double>(lo) + hi) / 2.0);
}

ImagePlane mean_consensus(const SolutionSampler::Draw& draw, int h, int w, int n, std::uint64_t master_seed) {
  std::vector<double> acc(static_cast<std::size_t>(h) * w, 0.0);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(i)));
    const ImagePlane s = draw(rng);
    const auto px = s.pixels();
    for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += px[p];
  }
  std::vector<float> out(acc.size());
  for (std::size_t p = 0; p < acc.size(); ++p) out[p] = static_cast<float>(acc[p] / n);
  return ImagePlane(h, w, std::move(out));
}

ImagePlane median_consensus(const SolutionSampler::Draw& draw, int h, int w, const ConsensusSpec& spec,
                            std::uint64_t master_seed) {
  const int n = spec.n_samples;
  const std::size_t row_bytes = static_cast<std::size_t>(w) * n * sizeof(float);
  const int band = static_cast<int>(std::clamp<std::size_t>(spec.memory_budget_bytes / row_bytes, 1, h));
  std::vector<float> out(static_cast<std::size_t>(h) * w);
  std::vector<float> stack;
  std::vector<float> column(static_cast<std::size_t>(n));
  for (int r0 = 0; r0 < h; r0 += band) {
    const int rows = std::min(band, h - r0);
    const std::size_t band_px = static_cast<std::size_t>(rows) * w;
    stack.assign(band_px * n, 0.0f);
    for (int i = 0; i < n; ++i) {
      Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(i)));
      const ImagePlane s = draw(rng);
      const auto px = s.pixels();
      std::copy_n(px.begin() + static_cast<std::ptrdiff_t>(r0) * w, band_px, stack.begin() + i * band_px);
    }
    for (std::size_t p = 0; p < band_px; ++p) {
      for (int i = 0; i < n; ++i) column[i] = stack[i * band_px + p];
      out[static_cast<std::size_t>(r0) * w + p] = median_of(column);
    }
  }
  return ImagePlane(h, w, std::move(out));
}

}  // namespace

ImagePlane consensus(const SolutionSampler& sampler, const ImagePlane& x, const ConsensusSpec& spec,
                     std::uint64_t master_seed) {
  spec.validate();
  const SolutionSampler::Draw draw = sampler.bind(x);
  if (spec.aggregator == Aggregator::mean) return mean_consensus(draw, x.height(), x.width(), spec.n_samples, master_seed);
  return median_consensus(draw, x.height(), x.width(), spec, master_seed);
}

ImagePlane aggregate(const std::vector<ImagePlane>& stack, Aggregator aggregator) {
  if (stack.empty()) throw ShapeError("aggregate: empty stack");
  for (const auto& s : stack) require_same_shape(stack.front(), s, "aggregate");
  const int h = stack.front().height();
  const int w = stack.front().width();
  const std::size_t n = stack.size();
  std::vector<float> out(stack.front().size());
  std::vector<float> column(n);
  for (std::size_t p = 0; p < out.size(); ++p) {
    for (std::size_t i = 0; i < n; ++i) column[i] = stack[i].pixels()[p];
    if (aggregator == Aggregator::median) {
      out[p] = median_of(column);
    } else {
      double sum = 0.0;
      for (float v : column) sum += v;
      out[p] = static_cast<float>(sum / static_cast<double>(n));
    }
  }
  return ImagePlane(h, w, std::move(out));
}

ImagePlane direct_denoise(const DirectDenoiser& dd, const Normalization& norm, const ImagePlane& x) {
  return norm.invert(dd.forward(norm.apply(x)));
}

}  // namespace dud
