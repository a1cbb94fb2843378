#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dud/dataset.hpp"
#include "dud/direct.hpp"
#include "dud/image.hpp"
#include "dud/inference.hpp"
#include "dud/training.hpp"

namespace dud {

inline constexpr double kPsnrCap = 100.0;
inline constexpr const char* kPeakConvention = "per_image_clean_range";

/// 10 log10(peak^2 / MSE), capped at kPsnrCap when MSE is zero.
double psnr(const ImagePlane& estimate, const ImagePlane& clean, double peak);

/// max - min of the clean image.
double clean_peak(const ImagePlane& clean);

struct PsnrResult {
  std::vector<double> per_image;
  double mean = 0.0;
  double std = 0.0;  // population std
};

/// PSNR of each estimate against its clean image using the per-image clean range as peak.
PsnrResult psnr_dataset(const std::vector<ImagePlane>& estimates, const std::vector<ImagePlane>& cleans);

/// Exact posterior mean for i.i.d. N(mu0, sigma0^2) pixels under N(0, sigman^2) noise.
ImagePlane conjugate_posterior_mean(const ImagePlane& x, double mu0, double sigma0, double sigman);

struct OracleStats {
  std::vector<double> per_image_rmse;
  double rmse = 0.0;           // pooled over all pixels
  double identity_rmse = 0.0;  // noisy input against the oracle, pooled
};

OracleStats evaluate_against_oracle(const std::vector<ImagePlane>& outputs, const std::vector<ImagePlane>& noisy,
                                    const std::vector<ImagePlane>& oracle);

struct BenchmarkRecord {
  std::string method;  // direct-L1, direct-L2, consensus-mean, consensus-median
  int n_samples = 1;
  double total_seconds = 0.0;
  double mean_psnr_db = 0.0;
  double std_psnr_db = 0.0;
};

struct BenchmarkModels {
  const SolutionSampler* sampler = nullptr;
  const DirectDenoiser* dd_l1 = nullptr;  // optional
  const DirectDenoiser* dd_l2 = nullptr;  // optional
  Normalization normalization;
};

struct BenchmarkOptions {
  std::vector<int> n_list{1, 10, 100};
  std::uint64_t seed = 4;
  std::size_t median_memory_budget_bytes = std::size_t{1} << 30;
};

/// Times every method over the whole test set and scores it by PSNR. Records are sorted
/// by method, then n_samples. Image i's consensus uses master seed derive_seed(seed, i).
std::vector<BenchmarkRecord> run_benchmark(const BenchmarkModels& models, const std::vector<ImagePair>& test_set,
                                           const BenchmarkOptions& options);

void write_benchmark_csv(const std::vector<BenchmarkRecord>& records, const std::filesystem::path& path);
std::vector<BenchmarkRecord> read_benchmark_csv(const std::filesystem::path& path);

/// Time (log x) against mean PSNR as a PNG scatter, one color per method.
void write_benchmark_plot(const std::vector<BenchmarkRecord>& records, const std::filesystem::path& path);

/// Coefficient of determination of the least-squares line y = a + b x.
double linear_fit_r2(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace dud
