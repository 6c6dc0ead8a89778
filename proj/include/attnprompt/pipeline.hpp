#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attnprompt/attribution.hpp"
#include "attnprompt/heatmap.hpp"
#include "attnprompt/image.hpp"
#include "attnprompt/model.hpp"

namespace attnprompt {

enum class Source { clip, gen };
enum class Fusion { cls_only, comp_only, fused };

const char* to_string(Source s);
const char* to_string(Fusion f);

inline constexpr int kDefaultKernel = 3;
inline constexpr int kDefaultMaxSteps = 8;

/// Annotation knobs. Zero for start_layer / gen_layer means "model default".
struct PipelineConfig {
    Source source = Source::clip;
    int start_layer = 0;  // 1-based L'
    bool single_layer = false;
    int gen_layer = 0;  // 1-based decoder layer
    int kernel = kDefaultKernel;
    Fusion fusion = Fusion::fused;
    int max_steps = kDefaultMaxSteps;
};

/// PipelineConfig with defaults filled in and checked against the model's bounds.
PipelineConfig resolve(const PipelineConfig& cfg, const ModelConfig& model);

/// The query as text, and optionally a precomputed unit-norm text feature.
struct Query {
    std::string text;
    std::optional<Tensor> feature;
};

/// Uses the supplied feature, else embeds the text when the model has a text tower.
Tensor resolve_text_feature(const Model& model, const Query& query);

struct Annotation {
    PipelineConfig config;           // resolved
    std::vector<AttributionMap> maps;  // normalized: cls, comp, fused for clip; generative for gen
    AttributionMap final_map;
    Heatmap heatmap;
    Image annotated;
    std::vector<int> generated;  // decoder output tokens (gen source only)

    std::string provenance() const;
};

Annotation annotate(const Model& model, const Image& img, const Query& query, const PipelineConfig& cfg);

}  // namespace attnprompt
