#include "attnprompt/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "attnprompt/error.hpp"

namespace attnprompt {

Image::Image(int w, int h) : width(w), height(h) {
    if (w <= 0 || h <= 0) fail(ErrorKind::input_format, "image dimensions must be positive");
    samples.assign(static_cast<std::size_t>(w) * h * 3, 0);
}

Image::Image(int w, int h, std::vector<std::uint8_t> data) : width(w), height(h), samples(std::move(data)) {
    if (w <= 0 || h <= 0) fail(ErrorKind::input_format, "image dimensions must be positive");
    if (samples.size() != static_cast<std::size_t>(w) * h * 3) {
        fail(ErrorKind::input_format, "image sample count does not match " + std::to_string(w) + "x" +
                                          std::to_string(h) + "x3");
    }
}

Image resize_image(const Image& src, int width, int height) {
    if (src.width == width && src.height == height) return src;
    Image out(width, height);
    const double sx = static_cast<double>(src.width) / width;
    const double sy = static_cast<double>(src.height) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = src.at(x0, y0, c) * (1 - wx) + src.at(x1, y0, c) * wx;
                const double bot = src.at(x0, y1, c) * (1 - wx) + src.at(x1, y1, c) * wx;
                out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(top * (1 - wy) + bot * wy));
            }
        }
    }
    return out;
}

}  // namespace attnprompt
