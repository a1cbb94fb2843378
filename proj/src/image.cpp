#include "dud/image.hpp"

#include <cmath>

namespace dud {

bool ImagePlane::all_finite() const noexcept {
  for (float v : pixels_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

ImagePlane reflect_pad(const ImagePlane& image, int top, int bottom, int left, int right) {
  if (top < 0 || bottom < 0 || left < 0 || right < 0) {
    throw ShapeError("reflect_pad: negative margin");
  }
  ImagePlane out(image.height() + top + bottom, image.width() + left + right);
  for (int r = 0; r < out.height(); ++r) {
    const int src_r = reflect_index(r - top, image.height());
    for (int c = 0; c < out.width(); ++c) {
      out(r, c) = image(src_r, reflect_index(c - left, image.width()));
    }
  }
  return out;
}

ImagePlane crop(const ImagePlane& image, int row, int col, int height, int width) {
  if (row < 0 || col < 0 || row + height > image.height() || col + width > image.width()) {
    throw ShapeError("crop: window exceeds image bounds");
  }
  ImagePlane out(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) out(r, c) = image(row + r, col + c);
  }
  return out;
}

ImagePlane pad_to_multiple(const ImagePlane& image, int multiple) {
  const auto round_up = [multiple](int v) { return (v + multiple - 1) / multiple * multiple; };
  const int extra_h = round_up(image.height()) - image.height();
  const int extra_w = round_up(image.width()) - image.width();
  if (extra_h == 0 && extra_w == 0) return image;
  return reflect_pad(image, extra_h / 2, extra_h - extra_h / 2, extra_w / 2, extra_w - extra_w / 2);
}

ImagePlane center_crop(const ImagePlane& image, int height, int width) {
  return crop(image, (image.height() - height) / 2, (image.width() - width) / 2, height, width);
}

}  // namespace dud
