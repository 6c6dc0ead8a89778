#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace attnprompt {

enum class MapKind { cls, comp, fused, generative };

const char* to_string(MapKind kind);
MapKind map_kind_from_string(const std::string& s);

/// P x P relevance grid, row-major. Values are raw until normalize_map().
struct AttributionMap {
    int grid_p = 0;
    MapKind kind = MapKind::cls;
    std::vector<double> values;
    int degenerate_cells = 0;  // cells whose similarity fell back to 0 (zero-norm vectors)

    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * grid_p + col]; }
};

/// Token index of grid cell (row, col), all 0-based. Vision maps skip the cls
/// token at index 0; generative maps index into the image-token span.
std::size_t token_of_cell(int row, int col, int grid_p, MapKind kind);
std::pair<int, int> cell_of_token(std::size_t token, int grid_p, MapKind kind);

/// Min-max rescale into [0, 1]. A constant map becomes all ones.
AttributionMap normalize_map(AttributionMap m);

inline double soft_or(double a, double b) { return a + b - a * b; }

/// Cell-wise a + b - a*b over two normalized maps of the same size.
AttributionMap fuse(const AttributionMap& a, const AttributionMap& b);

}  // namespace attnprompt
