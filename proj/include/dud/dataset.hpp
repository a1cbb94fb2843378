#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dud/image.hpp"
#include "dud/rng.hpp"

namespace dud {

enum class SignalKind { conjugate, blobs };

struct ConjugateParams {
  double mean = 0.5;
  double std = 0.2;
};

struct BlobParams {
  int count_min = 3;
  int count_max = 8;
  double radius_min = 2.0;
  double radius_max = 6.0;
  double amplitude_min = 0.5;
  double amplitude_max = 1.0;
  double background = 0.1;
};

struct DatasetSpec {
  SignalKind kind = SignalKind::conjugate;
  int height = 32;
  int width = 32;
  int count_train = 64;
  int count_val = 8;
  int count_test = 8;
  ConjugateParams conjugate;
  BlobParams blobs;
  double noise_sigma = 0.2;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& spec);
void from_json(const nlohmann::json& j, DatasetSpec& spec);

struct ImagePair {
  ImagePlane clean;
  ImagePlane noisy;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<ImagePair> train;
  std::vector<ImagePair> val;
  std::vector<ImagePair> test;
};

/// Pure function of `spec`: train, then val, then test from one seeded stream.
Dataset generate_dataset(const DatasetSpec& spec);

/// Layout: clean/NNNN.dud, noisy/NNNN.dud (train, val, test numbered consecutively) and spec.json.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<ImagePlane> noisy_images(const std::vector<ImagePair>& pairs);
std::vector<ImagePlane> clean_images(const std::vector<ImagePair>& pairs);

struct PatchCorner {
  int image = 0;
  int row = 0;
  int col = 0;
  friend bool operator==(const PatchCorner&, const PatchCorner&) = default;
};

struct PatchBatch {
  int patch_size = 0;
  std::vector<ImagePlane> patches;
  std::vector<PatchCorner> corners;
};

/// Draws `batch_size` patches; source image and top-left corner are uniform. Advances `rng`.
PatchBatch sample_patch_batch(const std::vector<ImagePlane>& images, int batch_size, int patch_size, Rng& rng);

}  // namespace dud
