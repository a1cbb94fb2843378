#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dud/image.hpp"

namespace dud {

// DUD1 container: "DUD1" | u32 height | u32 width | u32 reserved (0) | height*width f32,
// all little-endian, row-major.
inline constexpr std::size_t kDudHeaderBytes = 16;

std::vector<std::uint8_t> encode_image(const ImagePlane& image);
/// Throws FormatError on bad magic, nonzero reserved field or size mismatch.
ImagePlane decode_image(std::span<const std::uint8_t> bytes);

void write_image(const std::filesystem::path& path, const ImagePlane& image);
ImagePlane read_image(const std::filesystem::path& path);

}  // namespace dud
