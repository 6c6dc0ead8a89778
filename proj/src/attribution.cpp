#include "attnprompt/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "attnprompt/error.hpp"

namespace attnprompt {

const char* to_string(MapKind kind) {
    switch (kind) {
        case MapKind::cls: return "cls";
        case MapKind::comp: return "comp";
        case MapKind::fused: return "fused";
        case MapKind::generative: return "generative";
    }
    return "unknown";
}

MapKind map_kind_from_string(const std::string& s) {
    if (s == "cls") return MapKind::cls;
    if (s == "comp") return MapKind::comp;
    if (s == "fused") return MapKind::fused;
    if (s == "generative") return MapKind::generative;
    fail(ErrorKind::input_format, "unknown attribution kind '" + s + "'");
}

std::size_t token_of_cell(int row, int col, int grid_p, MapKind kind) {
    const auto t = static_cast<std::size_t>(row) * grid_p + col;
    return kind == MapKind::generative ? t : t + 1;
}

std::pair<int, int> cell_of_token(std::size_t token, int grid_p, MapKind kind) {
    const std::size_t t = kind == MapKind::generative ? token : token - 1;
    return {static_cast<int>(t / grid_p), static_cast<int>(t % grid_p)};
}

AttributionMap normalize_map(AttributionMap m) {
    if (m.values.empty()) return m;
    // minmax_element silently skips NaN, so check every cell first.
    if (!std::all_of(m.values.begin(), m.values.end(), [](double v) { return std::isfinite(v); })) {
        fail(ErrorKind::numeric, "attribution map has non-finite values");
    }
    const auto [lo_it, hi_it] = std::minmax_element(m.values.begin(), m.values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        std::fill(m.values.begin(), m.values.end(), 1.0);
        return m;
    }
    const double span = hi - lo;
    for (double& v : m.values) v = std::clamp((v - lo) / span, 0.0, 1.0);
    return m;
}

AttributionMap fuse(const AttributionMap& a, const AttributionMap& b) {
    if (a.grid_p != b.grid_p || a.values.size() != b.values.size()) {
        fail(ErrorKind::input_format, "cannot fuse maps of different grid sizes");
    }
    AttributionMap out;
    out.grid_p = a.grid_p;
    out.kind = MapKind::fused;
    out.values.resize(a.values.size());
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = soft_or(a.values[i], b.values[i]);
    return out;
}

}  // namespace attnprompt
