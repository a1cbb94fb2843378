#pragma once

#include <filesystem>
#include <string>

#include "dud/image.hpp"
#include "dud/nn/tensor.hpp"
#include "dud/rng.hpp"

namespace testutil {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dud_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline dud::nn::Tensor random_tensor(int n, int h, int w, int c, dud::Rng& rng, float scale = 1.0f) {
  dud::nn::Tensor t(n, h, w, c);
  for (float& v : t.data) v = scale * rng.normal();
  return t;
}

inline dud::ImagePlane random_image(int h, int w, dud::Rng& rng) {
  dud::ImagePlane img(h, w);
  for (float& v : img.pixels()) v = rng.normal();
  return img;
}

}  // namespace testutil
