#include "attnprompt/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "attnprompt/error.hpp"

namespace attnprompt {

namespace {

struct BlockCapture {
    Tensor msa;  // T x d, MSA output added to the residual
    Tensor mlp;  // T x d, MLP output added to the residual
    std::vector<Tensor> attn;    // per head, T x T
    std::vector<Tensor> values;  // per head, T x d_head
};

// One pre-LN block: x + MSA(ln1(x)), then + MLP(ln2(.)).
Tensor run_block(const Tensor& x, const WeightStore& w, const std::string& prefix, int layer, const TowerConfig& tc,
                 float eps, bool causal, BlockCapture& cap) {
    auto name = [&](const char* leaf) { return names::block(prefix, layer, leaf); };
    const std::size_t tokens = x.dim(0);
    const auto d = static_cast<std::size_t>(tc.d_model);
    const auto dh = static_cast<std::size_t>(tc.d_head);

    const Tensor h = ops::layer_norm(x, w.get(name("ln1.weight")), w.get(name("ln1.bias")), eps);
    const Tensor qkv = ops::matmul(h, w.get(name("attn.qkv.weight")), &w.get(name("attn.qkv.bias")));

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor merged({tokens, d});
    cap.attn.clear();
    cap.values.clear();
    for (int head = 0; head < tc.heads; ++head) {
        const std::size_t qo = head * dh, ko = d + head * dh, vo = 2 * d + head * dh;
        Tensor a({tokens, tokens});
        Tensor v({tokens, dh});
        for (std::size_t t = 0; t < tokens; ++t) {
            for (std::size_t c = 0; c < dh; ++c) v(t, c) = qkv(t, vo + c);
        }
        for (std::size_t i = 0; i < tokens; ++i) {
            const std::size_t visible = causal ? i + 1 : tokens;
            auto row = a.row(i);
            for (std::size_t j = 0; j < visible; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += static_cast<double>(qkv(i, qo + c)) * qkv(j, ko + c);
                row[j] = static_cast<float>(s * scale);
            }
            ops::softmax_rows(row.first(visible));
            for (std::size_t j = visible; j < tokens; ++j) row[j] = 0.0f;
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < visible; ++j) acc += static_cast<double>(row[j]) * v(j, c);
                merged(i, qo + c) = static_cast<float>(acc);
            }
        }
        cap.attn.push_back(std::move(a));
        cap.values.push_back(std::move(v));
    }
    cap.msa = ops::matmul(merged, w.get(name("attn.out.weight")), &w.get(name("attn.out.bias")));

    Tensor mid = x;
    for (std::size_t i = 0; i < mid.numel(); ++i) mid[i] += cap.msa[i];

    const Tensor h2 = ops::layer_norm(mid, w.get(name("ln2.weight")), w.get(name("ln2.bias")), eps);
    Tensor hidden = ops::matmul(h2, w.get(name("mlp.fc1.weight")), &w.get(name("mlp.fc1.bias")));
    ops::activate(hidden, tc.activation);
    cap.mlp = ops::matmul(hidden, w.get(name("mlp.fc2.weight")), &w.get(name("mlp.fc2.bias")));

    for (std::size_t i = 0; i < mid.numel(); ++i) mid[i] += cap.mlp[i];
    return mid;
}

Tensor row_copy(const Tensor& t, std::size_t r) {
    const auto src = t.row(r);
    return Tensor({src.size()}, std::vector<float>(src.begin(), src.end()));
}

Tensor patchify(const Image& img, const VisionConfig& vc) {
    const auto p = static_cast<std::size_t>(vc.patch_grid);
    const auto ps = static_cast<std::size_t>(vc.patch_side);
    Tensor patches({p * p, 3 * ps * ps});
    for (std::size_t pi = 0; pi < p; ++pi) {
        for (std::size_t pj = 0; pj < p; ++pj) {
            auto dst = patches.row(pi * p + pj);
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t ky = 0; ky < ps; ++ky) {
                    for (std::size_t kx = 0; kx < ps; ++kx) {
                        const auto x = static_cast<int>(pj * ps + kx), y = static_cast<int>(pi * ps + ky);
                        const float v = img.at(x, y, static_cast<int>(c)) / 255.0f;
                        dst[c * ps * ps + ky * ps + kx] = (v - vc.pixel_mean[c]) / vc.pixel_std[c];
                    }
                }
            }
        }
    }
    return patches;
}

}  // namespace

VisionOutput forward_vision(const Image& img, const ModelConfig& cfg, const WeightStore& w) {
    const VisionConfig& vc = cfg.vision;
    if (img.width != vc.image_side || img.height != vc.image_side) {
        fail(ErrorKind::input_format, "image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                          ", encoder expects " + std::to_string(vc.image_side) + "x" +
                                          std::to_string(vc.image_side));
    }
    const auto tokens = static_cast<std::size_t>(vc.tokens());
    const auto d = static_cast<std::size_t>(vc.tower.d_model);

    const Tensor embedded = ops::matmul(patchify(img, vc), w.get("visual.patch_embed.weight"));
    const Tensor& cls = w.get("visual.class_embedding");
    const Tensor& pos = w.get("visual.pos_embed");
    Tensor x({tokens, d});
    for (std::size_t c = 0; c < d; ++c) x(0, c) = cls[c] + pos(0, c);
    for (std::size_t t = 1; t < tokens; ++t) {
        for (std::size_t c = 0; c < d; ++c) x(t, c) = embedded(t - 1, c) + pos(t, c);
    }
    x = ops::layer_norm(x, w.get("visual.ln_pre.weight"), w.get("visual.ln_pre.bias"), cfg.ln_eps);

    VisionOutput out;
    ResidualTrace& tr = out.trace;
    tr.layers = vc.tower.layers;
    tr.heads = vc.tower.heads;
    tr.tokens = static_cast<int>(tokens);
    tr.z0_cls = row_copy(x, 0);
    for (int l = 0; l < vc.tower.layers; ++l) {
        BlockCapture cap;
        x = run_block(x, w, "visual", l, vc.tower, cfg.ln_eps, /*causal=*/false, cap);
        tr.msa_cls.push_back(row_copy(cap.msa, 0));
        tr.mlp_cls.push_back(row_copy(cap.mlp, 0));
        tr.attn.push_back(std::move(cap.attn));
        tr.values.push_back(std::move(cap.values));
    }
    require_finite(x, "vision encoder output");
    tr.last_tokens = x;

    const Tensor normed = ops::layer_norm(x, w.get("visual.ln_post.weight"), w.get("visual.ln_post.bias"),
                                          cfg.ln_eps, &tr.frozen_ln.mean, &tr.frozen_ln.variance);
    const Tensor cls_normed({1, d}, std::vector<float>(normed.row(0).begin(), normed.row(0).end()));
    Tensor feature = ops::matmul(cls_normed, w.get("visual.proj"));
    out.image_feature = Tensor({feature.numel()}, std::vector<float>(feature.data()));
    require_finite(out.image_feature, "image feature");
    return out;
}

Tensor embed_text(std::span<const int> tokens, const ModelConfig& cfg, const WeightStore& w) {
    if (!cfg.text) fail(ErrorKind::usage, "model has no text tower");
    const TextConfig& tc = *cfg.text;
    if (tokens.empty()) fail(ErrorKind::usage, "empty token sequence");
    if (tokens.size() > static_cast<std::size_t>(tc.context_length)) {
        fail(ErrorKind::usage, "token sequence of length " + std::to_string(tokens.size()) +
                                   " exceeds text context " + std::to_string(tc.context_length));
    }
    const auto d = static_cast<std::size_t>(tc.tower.d_model);
    const Tensor& emb = w.get("text.token_embed");
    const Tensor& pos = w.get("text.pos_embed");
    Tensor x({tokens.size(), d});
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t] < 0 || tokens[t] >= tc.vocab_size) {
            fail(ErrorKind::usage, "token id " + std::to_string(tokens[t]) + " out of range");
        }
        for (std::size_t c = 0; c < d; ++c) x(t, c) = emb(static_cast<std::size_t>(tokens[t]), c) + pos(t, c);
    }
    for (int l = 0; l < tc.tower.layers; ++l) {
        BlockCapture cap;
        x = run_block(x, w, "text", l, tc.tower, cfg.ln_eps, /*causal=*/true, cap);
    }
    const Tensor normed = ops::layer_norm(x, w.get("text.ln_final.weight"), w.get("text.ln_final.bias"), cfg.ln_eps);
    const auto last = normed.row(tokens.size() - 1);
    const Tensor pooled({1, d}, std::vector<float>(last.begin(), last.end()));
    const Tensor projected = ops::matmul(pooled, w.get("text.proj"));

    const double n = ops::norm(projected.values());
    if (!(n > 0.0) || !std::isfinite(n)) fail(ErrorKind::numeric, "text feature has zero or non-finite norm");
    std::vector<float> unit(projected.numel());
    for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = static_cast<float>(projected[i] / n);
    return Tensor::vector(std::move(unit));
}

Tensor project_image_tokens(const ResidualTrace& trace, const ModelConfig& cfg, const WeightStore& w) {
    if (!cfg.decoder) fail(ErrorKind::usage, "model has no decoder");
    const auto patches = static_cast<std::size_t>(trace.tokens - 1);
    const std::size_t d = trace.last_tokens.dim(1);
    Tensor patch_tokens({patches, d});
    for (std::size_t t = 0; t < patches; ++t) {
        const auto src = trace.last_tokens.row(t + 1);
        std::copy(src.begin(), src.end(), patch_tokens.row(t).begin());
    }
    return ops::matmul(patch_tokens, w.get("decoder.mm_proj.weight"), &w.get("decoder.mm_proj.bias"));
}

GenerationTrace forward_decoder(std::span<const int> text_tokens, const Tensor& image_tokens, const ModelConfig& cfg,
                                const WeightStore& w, int max_steps) {
    if (!cfg.decoder) fail(ErrorKind::usage, "model has no decoder");
    const DecoderConfig& dc = *cfg.decoder;
    if (max_steps < 1) fail(ErrorKind::usage, "max_steps must be >= 1");
    const std::size_t n_image = image_tokens.empty() ? 0 : image_tokens.dim(0);
    const std::size_t context = n_image + text_tokens.size();
    if (context == 0) fail(ErrorKind::usage, "empty decoder context");
    const auto expected_image = static_cast<std::size_t>(cfg.vision.patch_grid * cfg.vision.patch_grid);
    if (n_image != expected_image) {
        fail(ErrorKind::input_format, "expected " + std::to_string(expected_image) + " image tokens, got " +
                                          std::to_string(n_image));
    }
    const auto d = static_cast<std::size_t>(dc.tower.d_model);
    if (image_tokens.dim(1) != d) fail(ErrorKind::input_format, "image token width does not match decoder");
    if (context + static_cast<std::size_t>(max_steps) - 1 > static_cast<std::size_t>(dc.max_positions)) {
        fail(ErrorKind::usage, "decoder capacity exceeded: context " + std::to_string(context) + " + " +
                                   std::to_string(max_steps) + " steps > " + std::to_string(dc.max_positions));
    }

    const Tensor& emb = w.get("decoder.token_embed");
    const Tensor& pos = w.get("decoder.pos_embed");
    std::vector<std::vector<float>> inputs;
    for (std::size_t t = 0; t < n_image; ++t) {
        const auto r = image_tokens.row(t);
        inputs.emplace_back(r.begin(), r.end());
    }
    auto token_row = [&](int id) {
        if (id < 0 || id >= dc.vocab_size) fail(ErrorKind::usage, "token id " + std::to_string(id) + " out of range");
        const auto r = emb.row(static_cast<std::size_t>(id));
        return std::vector<float>(r.begin(), r.end());
    };
    for (int id : text_tokens) inputs.push_back(token_row(id));

    GenerationTrace gt;
    gt.image_start = 0;
    gt.image_length = n_image;
    gt.text_count = text_tokens.size();
    gt.context_length = context;
    gt.layers = dc.tower.layers;
    gt.heads = dc.tower.heads;

    for (int step = 0; step < max_steps; ++step) {
        const std::size_t n = inputs.size();
        Tensor x({n, d});
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t c = 0; c < d; ++c) x(t, c) = inputs[t][c] + pos(t, c);
        }
        std::vector<std::vector<Tensor>> step_rows;
        for (int l = 0; l < dc.tower.layers; ++l) {
            BlockCapture cap;
            x = run_block(x, w, "decoder", l, dc.tower, cfg.ln_eps, /*causal=*/true, cap);
            std::vector<Tensor> heads;
            for (const Tensor& a : cap.attn) heads.push_back(row_copy(a, n - 1));
            step_rows.push_back(std::move(heads));
        }
        require_finite(x, "decoder hidden state");
        const Tensor normed =
            ops::layer_norm(x, w.get("decoder.ln_final.weight"), w.get("decoder.ln_final.bias"), cfg.ln_eps);
        const auto last = normed.row(n - 1);
        const Tensor logits = ops::matmul(Tensor({1, d}, std::vector<float>(last.begin(), last.end())),
                                          w.get("decoder.lm_head"));
        const auto best = std::max_element(logits.values().begin(), logits.values().end());
        const int next = static_cast<int>(best - logits.values().begin());

        gt.generated.push_back(next);
        gt.rows.push_back(std::move(step_rows));
        if (next == dc.eos_token) break;
        inputs.push_back(token_row(next));
    }
    return gt;
}

std::vector<int> byte_tokenize(std::string_view text, int bos, int eos, std::size_t max_len) {
    const std::size_t specials = 1 + (eos >= 0 ? 1 : 0);
    if (max_len < specials) fail(ErrorKind::usage, "token budget too small");
    const std::size_t body = std::min(text.size(), max_len - specials);
    std::vector<int> ids;
    ids.reserve(body + specials);
    ids.push_back(bos);
    for (std::size_t i = 0; i < body; ++i) ids.push_back(static_cast<unsigned char>(text[i]));
    if (eos >= 0) ids.push_back(eos);
    return ids;
}

Model Model::from_store(WeightStore store) {
    Model m{config_from_store(store), std::move(store)};
    validate_weights(m.config, m.weights);
    return m;
}

Model Model::load(const std::filesystem::path& path) { return from_store(read_weights_file(path)); }

}  // namespace attnprompt
