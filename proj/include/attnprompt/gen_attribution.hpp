#pragma once

#include "attnprompt/attribution.hpp"
#include "attnprompt/model.hpp"

namespace attnprompt {

struct GenAttributionConfig {
    int layer = 1;  // 1-based decoder layer
};

/// Mid-to-late layer: round(5/6 * layers), so 20 of 24 and 3 of 4.
int default_gen_layer(int decoder_layers);

/// Mean over generated tokens and heads of the attention each generated token
/// pays to every image token, at the configured layer. Not normalized.
AttributionMap attention_attribution_raw(const GenerationTrace& trace, const GenAttributionConfig& cfg);

/// attention_attribution_raw followed by normalize_map.
AttributionMap attention_attribution(const GenerationTrace& trace, const GenAttributionConfig& cfg);

}  // namespace attnprompt
