#include "dud/image_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dud {

namespace {

constexpr char kMagic[4] = {'D', 'U', 'D', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_image(const ImagePlane& image) {
  std::vector<std::uint8_t> out;
  out.reserve(kDudHeaderBytes + 4 * image.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(image.height()));
  put_u32(out, static_cast<std::uint32_t>(image.width()));
  put_u32(out, 0);
  for (float v : image.pixels()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

ImagePlane decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kDudHeaderBytes) {
    throw FormatError("DUD1: truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("DUD1: bad magic");
  const std::uint32_t height = get_u32(bytes, 4);
  const std::uint32_t width = get_u32(bytes, 8);
  if (get_u32(bytes, 12) != 0) throw FormatError("DUD1: reserved header field is not zero");
  if (height == 0 || width == 0) throw FormatError("DUD1: zero image dimension");
  const std::uint64_t expected = kDudHeaderBytes + 4ull * height * width;
  if (bytes.size() != expected) {
    throw FormatError("DUD1: payload size mismatch, header says " + std::to_string(height) + "x" +
                      std::to_string(width) + " (" + std::to_string(expected) + " bytes), file has " +
                      std::to_string(bytes.size()));
  }
  std::vector<float> pixels(static_cast<std::size_t>(height) * width);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = std::bit_cast<float>(get_u32(bytes, kDudHeaderBytes + 4 * i));
  }
  return ImagePlane(static_cast<int>(height), static_cast<int>(width), std::move(pixels));
}

void write_image(const std::filesystem::path& path, const ImagePlane& image) {
  const auto bytes = encode_image(image);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

ImagePlane read_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace dud
