#include "attnprompt/pipeline.hpp"

#include <sstream>

#include "attnprompt/clip_attribution.hpp"
#include "attnprompt/error.hpp"
#include "attnprompt/gen_attribution.hpp"

namespace attnprompt {

const char* to_string(Source s) { return s == Source::clip ? "clip" : "gen"; }

const char* to_string(Fusion f) {
    switch (f) {
        case Fusion::cls_only: return "cls-only";
        case Fusion::comp_only: return "comp-only";
        case Fusion::fused: return "fused";
    }
    return "unknown";
}

PipelineConfig resolve(const PipelineConfig& cfg, const ModelConfig& model) {
    PipelineConfig r = cfg;
    const int layers = model.vision.tower.layers;
    if (r.start_layer == 0) r.start_layer = default_clip_start_layer(layers);
    if (r.start_layer < 1 || r.start_layer > layers) {
        fail(ErrorKind::usage, "--layer-start must be in [1, " + std::to_string(layers) + "]");
    }
    if (r.kernel < 1 || r.kernel % 2 == 0) fail(ErrorKind::usage, "--kernel must be odd and >= 1");
    if (r.max_steps < 1) fail(ErrorKind::usage, "--max-steps must be >= 1");
    if (r.source == Source::gen) {
        if (!model.decoder) fail(ErrorKind::usage, "--source gen requires a model with a decoder");
        const int dl = model.decoder->tower.layers;
        if (r.gen_layer == 0) r.gen_layer = default_gen_layer(dl);
        if (r.gen_layer < 1 || r.gen_layer > dl) {
            fail(ErrorKind::usage, "--gen-layer must be in [1, " + std::to_string(dl) + "]");
        }
    } else if (r.gen_layer == 0 && model.decoder) {
        r.gen_layer = default_gen_layer(model.decoder->tower.layers);
    }
    return r;
}

Tensor resolve_text_feature(const Model& model, const Query& query) {
    if (query.feature) {
        if (static_cast<int>(query.feature->numel()) != model.config.vision.embed_dim) {
            fail(ErrorKind::input_format, "text feature width " + std::to_string(query.feature->numel()) +
                                              " does not match embed_dim " +
                                              std::to_string(model.config.vision.embed_dim));
        }
        return *query.feature;
    }
    if (!model.config.text) {
        fail(ErrorKind::usage, "model has no text tower; supply a precomputed text feature instead of a query");
    }
    const auto& tc = *model.config.text;
    const auto tokens =
        byte_tokenize(query.text, tc.bos_token, tc.eos_token, static_cast<std::size_t>(tc.context_length));
    return embed_text(tokens, model.config, model.weights);
}

std::string Annotation::provenance() const {
    std::ostringstream os;
    os << "provenance source=" << to_string(config.source);
    if (config.source == Source::clip) {
        os << " layer_start=" << config.start_layer << " layer_mode=" << (config.single_layer ? "single" : "window")
           << " fusion=" << to_string(config.fusion);
    } else {
        os << " gen_layer=" << config.gen_layer << " steps=" << generated.size();
    }
    os << " kernel=" << config.kernel;
    return os.str();
}

Annotation annotate(const Model& model, const Image& img, const Query& query, const PipelineConfig& cfg) {
    const ModelConfig& mc = model.config;
    const WeightStore& w = model.weights;
    Annotation out;
    out.config = resolve(cfg, mc);
    const PipelineConfig& rc = out.config;

    const int side = mc.vision.image_side;
    const VisionOutput vision = forward_vision(resize_image(img, side, side), mc, w);

    if (rc.source == Source::clip) {
        const Tensor text = resolve_text_feature(model, query);
        const auto contrib = decompose_cls(vision.trace, mc, w, LayerWindow{rc.start_layer, rc.single_layer});
        AttributionMap cls = normalize_map(psi_cls(contrib, text.values(), mc.vision.patch_grid));
        AttributionMap comp = normalize_map(psi_comp(vision.trace, mc, w, text.values()));
        AttributionMap fused = fuse(cls, comp);
        switch (rc.fusion) {
            case Fusion::cls_only: out.final_map = cls; break;
            case Fusion::comp_only: out.final_map = comp; break;
            case Fusion::fused: out.final_map = fused; break;
        }
        out.maps = {std::move(cls), std::move(comp), std::move(fused)};
    } else {
        const auto& dc = *mc.decoder;
        const std::size_t image_tokens = static_cast<std::size_t>(mc.vision.patch_grid) * mc.vision.patch_grid;
        const std::size_t budget =
            static_cast<std::size_t>(dc.max_positions) - image_tokens - static_cast<std::size_t>(rc.max_steps - 1);
        if (static_cast<long>(dc.max_positions) - static_cast<long>(image_tokens) - (rc.max_steps - 1) < 1) {
            fail(ErrorKind::usage, "--max-steps leaves no room for the query in the decoder context");
        }
        const auto tokens = byte_tokenize(query.text, dc.bos_token, -1, budget);
        const GenerationTrace gt =
            forward_decoder(tokens, project_image_tokens(vision.trace, mc, w), mc, w, rc.max_steps);
        out.generated = gt.generated;
        out.final_map = attention_attribution(gt, GenAttributionConfig{rc.gen_layer});
        out.maps = {out.final_map};
    }

    out.heatmap = mean_filter(resize(out.final_map, img.width, img.height), rc.kernel);
    out.annotated = alpha_compose(img, out.heatmap);
    return out;
}

}  // namespace attnprompt
