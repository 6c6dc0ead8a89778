#pragma once

#include <cstdint>
#include <vector>

namespace attnprompt {

/// 8-bit RGB raster, row-major, channels interleaved.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> samples;

    Image() = default;
    Image(int w, int h);
    Image(int w, int h, std::vector<std::uint8_t> data);

    std::uint8_t& at(int x, int y, int c) { return samples[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int x, int y, int c) const {
        return samples[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Bilinear RGB resample with pixel-center alignment; used to fit encoder input size.
Image resize_image(const Image& src, int width, int height);

}  // namespace attnprompt
