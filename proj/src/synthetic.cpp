#include "attnprompt/synthetic.hpp"

#include <string>

namespace attnprompt {

float PortableUniform::next(float scale) {
    const double unit = static_cast<double>(next_u32() >> 8) * (1.0 / 16777216.0);  // [0, 1)
    return static_cast<float>((2.0 * unit - 1.0) * scale);
}

namespace {

TowerConfig tower(const SyntheticSpec& s) {
    return TowerConfig{s.layers, s.heads, s.d_model, s.d_model / s.heads, 4 * s.d_model, ops::Activation::gelu};
}

void add_tower(WeightStore& w, const std::string& prefix, const TowerConfig& t) {
    const auto d = static_cast<std::size_t>(t.d_model), m = static_cast<std::size_t>(t.d_mlp);
    for (int l = 0; l < t.layers; ++l) {
        auto n = [&](const char* leaf) { return names::block(prefix, l, leaf); };
        w.insert(n("ln1.weight"), Tensor({d}));
        w.insert(n("ln1.bias"), Tensor({d}));
        w.insert(n("attn.qkv.weight"), Tensor({d, 3 * d}));
        w.insert(n("attn.qkv.bias"), Tensor({3 * d}));
        w.insert(n("attn.out.weight"), Tensor({d, d}));
        w.insert(n("attn.out.bias"), Tensor({d}));
        w.insert(n("ln2.weight"), Tensor({d}));
        w.insert(n("ln2.bias"), Tensor({d}));
        w.insert(n("mlp.fc1.weight"), Tensor({d, m}));
        w.insert(n("mlp.fc1.bias"), Tensor({m}));
        w.insert(n("mlp.fc2.weight"), Tensor({m, d}));
        w.insert(n("mlp.fc2.bias"), Tensor({d}));
    }
}

bool is_norm_scale(const std::string& name) {
    const auto ends_with = [&](const std::string& suffix) {
        return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return name.find("ln") != std::string::npos && ends_with(".weight");
}

}  // namespace

ModelConfig synthetic_config(const SyntheticSpec& s) {
    ModelConfig c;
    c.vision.tower = tower(s);
    c.vision.patch_grid = s.patch_grid;
    c.vision.patch_side = s.patch_side;
    c.vision.image_side = s.patch_grid * s.patch_side;
    c.vision.embed_dim = s.embed_dim;
    if (s.with_text) c.text = TextConfig{tower(s), kByteVocab, 64, kByteBos, kByteEos};
    if (s.with_decoder) c.decoder = DecoderConfig{tower(s), kByteVocab, 128, kByteBos, kByteEos};
    c.validate();
    return c;
}

WeightStore make_synthetic_model(const SyntheticSpec& spec) {
    const ModelConfig cfg = synthetic_config(spec);
    const auto d = static_cast<std::size_t>(spec.d_model);
    const auto ps = static_cast<std::size_t>(spec.patch_side);
    const auto tokens = static_cast<std::size_t>(cfg.vision.tokens());
    const auto e = static_cast<std::size_t>(spec.embed_dim);

    WeightStore w;
    w.insert("visual.patch_embed.weight", Tensor({3 * ps * ps, d}));
    w.insert("visual.class_embedding", Tensor({d}));
    w.insert("visual.pos_embed", Tensor({tokens, d}));
    w.insert("visual.ln_pre.weight", Tensor({d}));
    w.insert("visual.ln_pre.bias", Tensor({d}));
    add_tower(w, "visual", cfg.vision.tower);
    w.insert("visual.ln_post.weight", Tensor({d}));
    w.insert("visual.ln_post.bias", Tensor({d}));
    w.insert("visual.proj", Tensor({d, e}));
    if (cfg.text) {
        const auto& t = *cfg.text;
        w.insert("text.token_embed", Tensor({static_cast<std::size_t>(t.vocab_size), d}));
        w.insert("text.pos_embed", Tensor({static_cast<std::size_t>(t.context_length), d}));
        add_tower(w, "text", t.tower);
        w.insert("text.ln_final.weight", Tensor({d}));
        w.insert("text.ln_final.bias", Tensor({d}));
        w.insert("text.proj", Tensor({d, e}));
    }
    if (cfg.decoder) {
        const auto& dc = *cfg.decoder;
        const auto vocab = static_cast<std::size_t>(dc.vocab_size);
        w.insert("decoder.mm_proj.weight", Tensor({d, d}));
        w.insert("decoder.mm_proj.bias", Tensor({d}));
        w.insert("decoder.token_embed", Tensor({vocab, d}));
        w.insert("decoder.pos_embed", Tensor({static_cast<std::size_t>(dc.max_positions), d}));
        add_tower(w, "decoder", dc.tower);
        w.insert("decoder.ln_final.weight", Tensor({d}));
        w.insert("decoder.ln_final.bias", Tensor({d}));
        w.insert("decoder.lm_head", Tensor({d, vocab}));
    }

    PortableUniform rng(spec.seed);
    std::vector<std::string> order;
    for (const auto& [name, t] : w.tensors()) order.push_back(name);
    for (const auto& name : order) {
        Tensor& t = w.mutable_get(name);
        const float base = is_norm_scale(name) ? 1.0f : 0.0f;
        for (float& v : t.values()) v = base + rng.next(0.1f);
    }
    w.set_metadata({{"config", cfg.to_json()}, {"generator", "synthetic"}, {"seed", spec.seed}});
    return w;
}

Image make_fixture_image(int side) {
    Image img(side, side);
    const int cx = side / 3, cy = side / 3, r = side / 5;
    const int sq0 = side / 2, sq1 = side / 2 + side / 3;
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            int rgb[3] = {40 + (150 * y) / side, 90 + (60 * x) / side, 60};
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) {
                rgb[0] = 220, rgb[1] = 30, rgb[2] = 40;
            } else if (x >= sq0 && x < sq1 && y >= sq0 && y < sq1) {
                rgb[0] = 30, rgb[1] = 60, rgb[2] = 210;
            }
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(rgb[c]);
        }
    }
    return img;
}

Image make_random_image(int width, int height, std::uint32_t seed) {
    PortableUniform rng(seed);
    Image img(width, height);
    for (auto& s : img.samples) s = static_cast<std::uint8_t>(rng.next_u32() >> 24);
    return img;
}

}  // namespace attnprompt
