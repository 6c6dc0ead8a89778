#include "attnprompt/gen_attribution.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "attnprompt/error.hpp"

namespace attnprompt {

int default_gen_layer(int decoder_layers) {
    const int layer = static_cast<int>(std::lround(decoder_layers * 5.0 / 6.0));
    return std::clamp(layer, 1, std::max(1, decoder_layers));
}

AttributionMap attention_attribution_raw(const GenerationTrace& trace, const GenAttributionConfig& cfg) {
    const std::size_t steps = trace.steps();
    if (steps == 0 || trace.rows.size() != steps) fail(ErrorKind::input_format, "generation trace has no generated tokens");
    if (cfg.layer < 1 || cfg.layer > trace.layers) {
        fail(ErrorKind::usage,
             "generative layer " + std::to_string(cfg.layer) + " outside [1, " + std::to_string(trace.layers) + "]");
    }
    if (trace.image_start + trace.image_length > trace.context_length) {
        fail(ErrorKind::input_format, "image token span lies outside the context");
    }
    const auto grid_p = static_cast<int>(std::lround(std::sqrt(static_cast<double>(trace.image_length))));
    if (static_cast<std::size_t>(grid_p) * grid_p != trace.image_length || grid_p == 0) {
        fail(ErrorKind::input_format, "image token span is not a square grid");
    }

    AttributionMap m;
    m.grid_p = grid_p;
    m.kind = MapKind::generative;
    m.values.assign(trace.image_length, 0.0);
    const int layer = cfg.layer - 1;
    for (std::size_t step = 0; step < steps; ++step) {
        const auto& heads = trace.rows[step].at(layer);
        for (const Tensor& row : heads) {
            for (std::size_t t = 0; t < trace.image_length; ++t) m.values[t] += row[trace.image_start + t];
        }
    }
    const double denom = static_cast<double>(steps) * trace.heads;
    for (double& v : m.values) v /= denom;
    return m;
}

AttributionMap attention_attribution(const GenerationTrace& trace, const GenAttributionConfig& cfg) {
    return normalize_map(attention_attribution_raw(trace, cfg));
}

}  // namespace attnprompt
