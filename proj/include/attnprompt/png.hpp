#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "attnprompt/image.hpp"

namespace attnprompt {

/// Decodes non-interlaced 8-bit PNGs. RGB is returned as-is; grayscale,
/// gray+alpha and RGBA are converted to RGB (alpha dropped). Other bit depths,
/// palettes and interlacing are rejected with ErrorKind::input_format.
Image decode_png(std::span<const std::uint8_t> bytes);

/// 8-bit RGB, filter type 0 on every row, default zlib level. Deterministic.
std::vector<std::uint8_t> encode_png(const Image& img);

/// Single-channel 8-bit grayscale PNG.
std::vector<std::uint8_t> encode_gray_png(int width, int height, std::span<const std::uint8_t> samples);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace attnprompt
