#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dud/error.hpp"

namespace dud {

/// Single-channel 2-D image with row-major float pixels.
class ImagePlane {
 public:
  ImagePlane() = default;
  ImagePlane(int height, int width, float fill = 0.0f)
      : height_(height), width_(width) {
    if (height < 1 || width < 1) {
      throw ShapeError("ImagePlane: dimensions must be positive, got " +
                       std::to_string(height) + "x" + std::to_string(width));
    }
    pixels_.assign(static_cast<std::size_t>(height) * width, fill);
  }
  ImagePlane(int height, int width, std::vector<float> pixels)
      : ImagePlane(height, width) {
    if (pixels.size() != pixels_.size()) {
      throw ShapeError("ImagePlane: pixel count does not match dimensions");
    }
    pixels_ = std::move(pixels);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  float& operator()(int row, int col) { return pixels_[static_cast<std::size_t>(row) * width_ + col]; }
  float operator()(int row, int col) const { return pixels_[static_cast<std::size_t>(row) * width_ + col]; }

  std::span<float> pixels() noexcept { return pixels_; }
  std::span<const float> pixels() const noexcept { return pixels_; }

  bool same_shape(const ImagePlane& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  bool all_finite() const noexcept;

  friend bool operator==(const ImagePlane&, const ImagePlane&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

inline void require_same_shape(const ImagePlane& a, const ImagePlane& b, const char* where) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(where) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()));
  }
}

/// Mirror-pad (edge pixel not repeated) by the given margins on each side.
ImagePlane reflect_pad(const ImagePlane& image, int top, int bottom, int left, int right);
/// Symmetric reflect-pad up to the next multiple of `multiple` in both dimensions.
ImagePlane pad_to_multiple(const ImagePlane& image, int multiple);
/// Inverse of pad_to_multiple: center-crop back to `height` x `width`.
ImagePlane center_crop(const ImagePlane& image, int height, int width);
/// Crop a `height` x `width` window whose top-left corner is (row, col).
ImagePlane crop(const ImagePlane& image, int row, int col, int height, int width);

}  // namespace dud
