#pragma once

#include <cstdint>
#include <vector>

#include "attnprompt/attribution.hpp"
#include "attnprompt/image.hpp"

namespace attnprompt {

/// Pixel-space alpha map, row-major, values in [0, 1].
struct Heatmap {
    int width = 0;
    int height = 0;
    std::vector<double> alpha;

    double at(int x, int y) const { return alpha[static_cast<std::size_t>(y) * width + x]; }
    double& at(int x, int y) { return alpha[static_cast<std::size_t>(y) * width + x]; }
};

/// Bilinear upsampling with cell-center alignment: pixel (x + 0.5) maps to grid
/// coordinate (x + 0.5) * P / width - 0.5, clamped to the outer cell centers.
Heatmap resize(const AttributionMap& m, int width, int height);

/// k x k box filter with reflect-101 borders (…c b | a b c … x y | x w…). k must be odd and >= 1.
Heatmap mean_filter(const Heatmap& h, int k);

/// out = round(alpha * in) per channel, i.e. alpha compositing over black.
Image alpha_compose(const Image& img, const Heatmap& h);

/// round(alpha * 255) per pixel, as 8-bit grayscale samples.
std::vector<std::uint8_t> heatmap_gray(const Heatmap& h);

/// Reflect-101 index into [0, n).
int reflect_index(int i, int n);

}  // namespace attnprompt
