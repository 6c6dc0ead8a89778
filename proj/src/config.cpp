#include "attnprompt/config.hpp"

#include "attnprompt/error.hpp"

namespace attnprompt {

namespace names {
std::string block(const std::string& prefix, int layer, const std::string& leaf) {
    return prefix + ".blocks." + std::to_string(layer) + "." + leaf;
}
}  // namespace names

namespace {

void check(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::input_format, "invalid model config: " + what);
}

void validate_tower(const TowerConfig& t, const std::string& which) {
    check(t.layers >= 1, which + ".layers must be >= 1");
    check(t.heads >= 1, which + ".heads must be >= 1");
    check(t.d_head >= 1 && t.d_model == t.heads * t.d_head, which + ": d_model must equal heads * d_head");
    check(t.d_mlp >= 1, which + ".d_mlp must be >= 1");
}

nlohmann::json tower_json(const TowerConfig& t) {
    return {{"layers", t.layers},
            {"heads", t.heads},
            {"d_model", t.d_model},
            {"d_head", t.d_head},
            {"d_mlp", t.d_mlp},
            {"activation", t.activation == ops::Activation::gelu ? "gelu" : "quick_gelu"}};
}

TowerConfig tower_from(const nlohmann::json& j) {
    TowerConfig t;
    t.layers = j.at("layers").get<int>();
    t.heads = j.at("heads").get<int>();
    t.d_model = j.at("d_model").get<int>();
    t.d_head = j.at("d_head").get<int>();
    t.d_mlp = j.at("d_mlp").get<int>();
    const auto act = j.value("activation", std::string("gelu"));
    if (act == "gelu") {
        t.activation = ops::Activation::gelu;
    } else if (act == "quick_gelu") {
        t.activation = ops::Activation::quick_gelu;
    } else {
        fail(ErrorKind::input_format, "unknown activation '" + act + "'");
    }
    return t;
}

using S = Shape;
using std::size_t;

void validate_tower_weights(const WeightStore& w, const std::string& prefix, const TowerConfig& t) {
    const auto d = static_cast<size_t>(t.d_model), m = static_cast<size_t>(t.d_mlp);
    for (int l = 0; l < t.layers; ++l) {
        auto n = [&](const char* leaf) { return names::block(prefix, l, leaf); };
        w.require(n("ln1.weight"), S{d});
        w.require(n("ln1.bias"), S{d});
        w.require(n("attn.qkv.weight"), S{d, 3 * d});
        w.require(n("attn.qkv.bias"), S{3 * d});
        w.require(n("attn.out.weight"), S{d, d});
        w.require(n("attn.out.bias"), S{d});
        w.require(n("ln2.weight"), S{d});
        w.require(n("ln2.bias"), S{d});
        w.require(n("mlp.fc1.weight"), S{d, m});
        w.require(n("mlp.fc1.bias"), S{m});
        w.require(n("mlp.fc2.weight"), S{m, d});
        w.require(n("mlp.fc2.bias"), S{d});
    }
}

}  // namespace

void ModelConfig::validate() const {
    validate_tower(vision.tower, "vision");
    check(vision.patch_grid >= 1, "vision.patch_grid must be >= 1");
    check(vision.patch_side >= 1, "vision.patch_side must be >= 1");
    check(vision.image_side == vision.patch_grid * vision.patch_side, "image_side must equal P * patch_side");
    check(vision.has_cls, "vision encoders without a cls token are not supported");
    check(vision.embed_dim >= 1, "vision.embed_dim must be >= 1");
    if (text) {
        validate_tower(text->tower, "text");
        check(text->vocab_size >= 1, "text.vocab_size must be >= 1");
        check(text->context_length >= 2, "text.context_length must be >= 2");
        check(text->bos_token >= 0 && text->bos_token < text->vocab_size, "text.bos_token out of range");
        check(text->eos_token >= 0 && text->eos_token < text->vocab_size, "text.eos_token out of range");
    }
    if (decoder) {
        validate_tower(decoder->tower, "decoder");
        check(decoder->vocab_size >= 1, "decoder.vocab_size must be >= 1");
        check(decoder->max_positions > vision.patch_grid * vision.patch_grid,
              "decoder.max_positions must exceed the image token count");
        check(decoder->bos_token >= 0 && decoder->bos_token < decoder->vocab_size, "decoder.bos_token out of range");
        check(decoder->eos_token >= 0 && decoder->eos_token < decoder->vocab_size, "decoder.eos_token out of range");
    }
}

nlohmann::json ModelConfig::to_json() const {
    nlohmann::json j;
    j["ln_eps"] = ln_eps;
    j["vision"] = {{"tower", tower_json(vision.tower)},
                   {"patch_grid", vision.patch_grid},
                   {"patch_side", vision.patch_side},
                   {"image_side", vision.image_side},
                   {"has_cls", vision.has_cls},
                   {"embed_dim", vision.embed_dim},
                   {"pixel_mean", vision.pixel_mean},
                   {"pixel_std", vision.pixel_std}};
    if (text) {
        j["text"] = {{"tower", tower_json(text->tower)},
                     {"vocab_size", text->vocab_size},
                     {"context_length", text->context_length},
                     {"bos_token", text->bos_token},
                     {"eos_token", text->eos_token}};
    }
    if (decoder) {
        j["decoder"] = {{"tower", tower_json(decoder->tower)},
                        {"vocab_size", decoder->vocab_size},
                        {"max_positions", decoder->max_positions},
                        {"bos_token", decoder->bos_token},
                        {"eos_token", decoder->eos_token}};
    }
    return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.ln_eps = j.value("ln_eps", 1e-5f);
        const auto& v = j.at("vision");
        c.vision.tower = tower_from(v.at("tower"));
        c.vision.patch_grid = v.at("patch_grid").get<int>();
        c.vision.patch_side = v.at("patch_side").get<int>();
        c.vision.image_side = v.at("image_side").get<int>();
        c.vision.has_cls = v.value("has_cls", true);
        c.vision.embed_dim = v.at("embed_dim").get<int>();
        if (v.contains("pixel_mean")) c.vision.pixel_mean = v.at("pixel_mean").get<std::array<float, 3>>();
        if (v.contains("pixel_std")) c.vision.pixel_std = v.at("pixel_std").get<std::array<float, 3>>();
        if (j.contains("text")) {
            const auto& t = j.at("text");
            c.text = TextConfig{tower_from(t.at("tower")), t.at("vocab_size").get<int>(),
                                t.at("context_length").get<int>(), t.at("bos_token").get<int>(),
                                t.at("eos_token").get<int>()};
        }
        if (j.contains("decoder")) {
            const auto& d = j.at("decoder");
            c.decoder = DecoderConfig{tower_from(d.at("tower")), d.at("vocab_size").get<int>(),
                                      d.at("max_positions").get<int>(), d.at("bos_token").get<int>(),
                                      d.at("eos_token").get<int>()};
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::input_format, std::string("malformed model config: ") + e.what());
    }
    c.validate();
    return c;
}

ModelConfig config_from_store(const WeightStore& store) {
    const auto& meta = store.metadata();
    if (!meta.is_object() || !meta.contains("config")) {
        fail(ErrorKind::input_format, "container has no __metadata__.config entry");
    }
    return ModelConfig::from_json(meta.at("config"));
}

void validate_weights(const ModelConfig& cfg, const WeightStore& w) {
    const auto& v = cfg.vision;
    const auto d = static_cast<size_t>(v.tower.d_model);
    const auto ps = static_cast<size_t>(v.patch_side);
    const auto tokens = static_cast<size_t>(v.tokens());
    w.require("visual.patch_embed.weight", S{3 * ps * ps, d});
    w.require("visual.class_embedding", S{d});
    w.require("visual.pos_embed", S{tokens, d});
    w.require("visual.ln_pre.weight", S{d});
    w.require("visual.ln_pre.bias", S{d});
    validate_tower_weights(w, "visual", v.tower);
    w.require("visual.ln_post.weight", S{d});
    w.require("visual.ln_post.bias", S{d});
    w.require("visual.proj", S{d, static_cast<size_t>(v.embed_dim)});

    if (cfg.text) {
        const auto& t = *cfg.text;
        const auto td = static_cast<size_t>(t.tower.d_model);
        w.require("text.token_embed", S{static_cast<size_t>(t.vocab_size), td});
        w.require("text.pos_embed", S{static_cast<size_t>(t.context_length), td});
        validate_tower_weights(w, "text", t.tower);
        w.require("text.ln_final.weight", S{td});
        w.require("text.ln_final.bias", S{td});
        w.require("text.proj", S{td, static_cast<size_t>(v.embed_dim)});
    }
    if (cfg.decoder) {
        const auto& dc = *cfg.decoder;
        const auto dd = static_cast<size_t>(dc.tower.d_model);
        const auto vocab = static_cast<size_t>(dc.vocab_size);
        w.require("decoder.mm_proj.weight", S{d, dd});
        w.require("decoder.mm_proj.bias", S{dd});
        w.require("decoder.token_embed", S{vocab, dd});
        w.require("decoder.pos_embed", S{static_cast<size_t>(dc.max_positions), dd});
        validate_tower_weights(w, "decoder", dc.tower);
        w.require("decoder.ln_final.weight", S{dd});
        w.require("decoder.ln_final.bias", S{dd});
        w.require("decoder.lm_head", S{dd, vocab});
    }
}

}  // namespace attnprompt
