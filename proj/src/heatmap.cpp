#include "attnprompt/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "attnprompt/error.hpp"

namespace attnprompt {

Heatmap resize(const AttributionMap& m, int width, int height) {
    const int p = m.grid_p;
    if (p < 1 || m.values.size() != static_cast<std::size_t>(p) * p) {
        fail(ErrorKind::input_format, "attribution map value count does not match grid_p^2");
    }
    if (width < p || height < p) {
        fail(ErrorKind::usage, "heatmap target " + std::to_string(width) + "x" + std::to_string(height) +
                                   " is smaller than the " + std::to_string(p) + "x" + std::to_string(p) + " grid");
    }
    // Precompute the two source taps and weight for every output column and row.
    struct Tap {
        int lo, hi;
        double w;
    };
    auto taps = [p](int n) {
        std::vector<Tap> out(n);
        const double scale = static_cast<double>(p) / n;
        for (int i = 0; i < n; ++i) {
            const double g = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(p - 1));
            const int lo = static_cast<int>(std::floor(g));
            out[i] = {lo, std::min(lo + 1, p - 1), g - lo};
        }
        return out;
    };
    const auto cols = taps(width);
    const auto rows = taps(height);

    Heatmap h{width, height, std::vector<double>(static_cast<std::size_t>(width) * height)};
    for (int y = 0; y < height; ++y) {
        const Tap& ry = rows[y];
        for (int x = 0; x < width; ++x) {
            const Tap& cx = cols[x];
            const double top = m.at(ry.lo, cx.lo) * (1.0 - cx.w) + m.at(ry.lo, cx.hi) * cx.w;
            const double bot = m.at(ry.hi, cx.lo) * (1.0 - cx.w) + m.at(ry.hi, cx.hi) * cx.w;
            h.at(x, y) = top * (1.0 - ry.w) + bot * ry.w;
        }
    }
    return h;
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

namespace {

// Box sum along one line with reflect-101 borders, written with stride.
void box_line(const double* src, double* dst, int n, std::ptrdiff_t stride, int k) {
    const int r = k / 2;
    double sum = 0.0;
    for (int j = -r; j <= r; ++j) sum += src[reflect_index(j, n) * stride];
    for (int i = 0; i < n; ++i) {
        dst[i * stride] = sum / k;
        sum += src[reflect_index(i + r + 1, n) * stride] - src[reflect_index(i - r, n) * stride];
    }
}

}  // namespace

Heatmap mean_filter(const Heatmap& h, int k) {
    if (k < 1 || k % 2 == 0) fail(ErrorKind::usage, "kernel size must be odd and >= 1, got " + std::to_string(k));
    if (k == 1) return h;
    Heatmap tmp = h, out = h;
    for (int y = 0; y < h.height; ++y) {
        const std::size_t off = static_cast<std::size_t>(y) * h.width;
        box_line(h.alpha.data() + off, tmp.alpha.data() + off, h.width, 1, k);
    }
    for (int x = 0; x < h.width; ++x) box_line(tmp.alpha.data() + x, out.alpha.data() + x, h.height, h.width, k);

    // Running sums can drift by an ulp past the input range.
    const auto [lo, hi] = std::minmax_element(h.alpha.begin(), h.alpha.end());
    for (double& v : out.alpha) v = std::clamp(v, *lo, *hi);
    return out;
}

Image alpha_compose(const Image& img, const Heatmap& h) {
    if (img.width != h.width || img.height != h.height) {
        fail(ErrorKind::usage, "heatmap " + std::to_string(h.width) + "x" + std::to_string(h.height) +
                                   " does not match image " + std::to_string(img.width) + "x" +
                                   std::to_string(img.height));
    }
    Image out = img;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double a = std::clamp(h.at(x, y), 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(a * img.at(x, y, c)));
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> heatmap_gray(const Heatmap& h) {
    std::vector<std::uint8_t> out(h.alpha.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(h.alpha[i], 0.0, 1.0) * 255.0));
    }
    return out;
}

}  // namespace attnprompt
