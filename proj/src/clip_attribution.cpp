#include "attnprompt/clip_attribution.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "attnprompt/error.hpp"

namespace attnprompt {

std::vector<int> LayerWindow::layers(int total) const {
    if (start < 1 || start > total) {
        fail(ErrorKind::usage,
             "layer start " + std::to_string(start) + " outside [1, " + std::to_string(total) + "]");
    }
    if (single) return {start - 1};
    std::vector<int> out;
    for (int l = start - 1; l < total; ++l) out.push_back(l);
    return out;
}

int default_clip_start_layer(int layers) { return std::max(1, layers - 1); }

double relative_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(diff) / std::max(ops::norm(b), 1e-12);
}

namespace {

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

void require_unit(std::span<const float> feature) {
    const double n = ops::norm(feature);
    if (std::abs(n - 1.0) > 1e-4) {
        fail(ErrorKind::input_format, "text feature must be unit-norm (norm " + std::to_string(n) + ")");
    }
}

void require_trace(const ResidualTrace& trace) {
    if (static_cast<int>(trace.attn.size()) != trace.layers || static_cast<int>(trace.values.size()) != trace.layers) {
        fail(ErrorKind::input_format, "trace is missing attention or value records");
    }
}

}  // namespace

FrozenProjection::FrozenProjection(const ModelConfig& cfg, const WeightStore& w, double variance)
    : gamma_(&w.get("visual.ln_post.weight")),
      beta_(&w.get("visual.ln_post.bias")),
      proj_(&w.get("visual.proj")),
      inv_sigma_(1.0 / std::sqrt(variance + static_cast<double>(cfg.ln_eps))) {}

FrozenProjection FrozenProjection::for_token(const ResidualTrace& trace, const ModelConfig& cfg,
                                             const WeightStore& w, std::size_t token) {
    if (token >= trace.frozen_ln.variance.size()) fail(ErrorKind::input_format, "trace lacks frozen norm stats");
    return FrozenProjection(cfg, w, trace.frozen_ln.variance[token]);
}

std::vector<double> FrozenProjection::linear(std::span<const double> x) const {
    const std::size_t d = x.size(), e = proj_->dim(1);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(d);
    std::vector<double> out(e, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const double scaled = (x[i] - mean) * inv_sigma_ * (*gamma_)[i];
        for (std::size_t j = 0; j < e; ++j) out[j] += scaled * (*proj_)(i, j);
    }
    return out;
}

std::vector<double> FrozenProjection::constant() const {
    const std::size_t d = beta_->numel(), e = proj_->dim(1);
    std::vector<double> out(e, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < e; ++j) out[j] += static_cast<double>((*beta_)[i]) * (*proj_)(i, j);
    }
    return out;
}

std::vector<double> FrozenProjection::apply(std::span<const double> x) const {
    auto out = linear(x);
    const auto c = constant();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += c[j];
    return out;
}

std::vector<std::vector<double>> unfold_layer(const ResidualTrace& trace, const ModelConfig& cfg,
                                              const WeightStore& w, int layer) {
    require_trace(trace);
    if (layer < 0 || layer >= trace.layers) fail(ErrorKind::usage, "layer index out of range");
    const auto tokens = static_cast<std::size_t>(trace.tokens);
    const auto d = static_cast<std::size_t>(cfg.vision.tower.d_model);
    const auto dh = static_cast<std::size_t>(cfg.vision.tower.d_head);
    const Tensor& w_out = w.get(names::block("visual", layer, "attn.out.weight"));
    const Tensor& b_out = w.get(names::block("visual", layer, "attn.out.bias"));

    std::vector<std::vector<double>> eta(tokens, std::vector<double>(d, 0.0));
    std::vector<double> weighted(dh);
    for (int h = 0; h < trace.heads; ++h) {
        const Tensor& a = trace.attn[layer][h];
        const Tensor& v = trace.values[layer][h];
        const std::size_t row0 = h * dh;
        for (std::size_t t = 0; t < tokens; ++t) {
            const double weight = a(0, t);
            for (std::size_t c = 0; c < dh; ++c) weighted[c] = weight * v(t, c);
            auto& dst = eta[t];
            for (std::size_t c = 0; c < dh; ++c) {
                const float* wr = w_out.values().data() + (row0 + c) * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += weighted[c] * wr[j];
            }
        }
    }
    const double share = 1.0 / static_cast<double>(tokens);
    for (auto& row : eta) {
        for (std::size_t j = 0; j < d; ++j) row[j] += b_out[j] * share;
    }
    return eta;
}

PatchContribution decompose_cls(const ResidualTrace& trace, const ModelConfig& cfg, const WeightStore& w,
                                LayerWindow window) {
    const auto layers = window.layers(trace.layers);
    const auto tokens = static_cast<std::size_t>(trace.tokens);
    const auto d = static_cast<std::size_t>(cfg.vision.tower.d_model);

    std::vector<std::vector<double>> summed(tokens, std::vector<double>(d, 0.0));
    for (int l : layers) {
        const auto eta = unfold_layer(trace, cfg, w, l);
        for (std::size_t t = 0; t < tokens; ++t) {
            for (std::size_t j = 0; j < d; ++j) summed[t][j] += eta[t][j];
        }
    }
    const auto proj = FrozenProjection::for_token(trace, cfg, w, 0);
    PatchContribution out;
    out.window = window;
    out.psi.reserve(tokens);
    for (const auto& row : summed) out.psi.push_back(proj.linear(row));
    return out;
}

AttributionMap psi_cls(const PatchContribution& contrib, std::span<const float> text_feature, int grid_p) {
    require_unit(text_feature);
    const auto cells = static_cast<std::size_t>(grid_p) * grid_p;
    if (contrib.psi.size() != cells + 1) fail(ErrorKind::input_format, "contribution count does not match grid");
    const auto text = to_double(text_feature);
    AttributionMap m;
    m.grid_p = grid_p;
    m.kind = MapKind::cls;
    m.values.resize(cells);
    for (int i = 0; i < grid_p; ++i) {
        for (int j = 0; j < grid_p; ++j) {
            const auto& psi = contrib.psi[token_of_cell(i, j, grid_p, MapKind::cls)];
            if (psi.size() != text.size()) fail(ErrorKind::input_format, "text feature width mismatch");
            if (ops::norm(psi) == 0.0) ++m.degenerate_cells;
            m.values[static_cast<std::size_t>(i) * grid_p + j] = ops::cosine(psi, text);
        }
    }
    return m;
}

AttributionMap psi_comp(const ResidualTrace& trace, const ModelConfig& cfg, const WeightStore& w,
                        std::span<const float> text_feature) {
    require_unit(text_feature);
    if (trace.last_tokens.empty()) fail(ErrorKind::input_format, "trace has no last-layer tokens");
    const int grid_p = cfg.vision.patch_grid;
    const auto text = to_double(text_feature);
    AttributionMap m;
    m.grid_p = grid_p;
    m.kind = MapKind::comp;
    m.values.resize(static_cast<std::size_t>(grid_p) * grid_p);
    for (int i = 0; i < grid_p; ++i) {
        for (int j = 0; j < grid_p; ++j) {
            const std::size_t t = token_of_cell(i, j, grid_p, MapKind::comp);
            const auto projected =
                FrozenProjection::for_token(trace, cfg, w, t).apply(to_double(trace.last_tokens.row(t)));
            if (projected.size() != text.size()) fail(ErrorKind::input_format, "text feature width mismatch");
            if (ops::norm(projected) == 0.0) ++m.degenerate_cells;
            m.values[static_cast<std::size_t>(i) * grid_p + j] = 1.0 - ops::cosine(projected, text);
        }
    }
    return m;
}

double DecompositionReport::max_unfolding_residual() const {
    double mx = 0.0;
    for (double r : unfolding_residuals) mx = std::max(mx, r);
    return mx;
}

bool DecompositionReport::ok() const {
    return completeness_residual <= kCompletenessTol && max_unfolding_residual() <= kUnfoldingTol &&
           affinity_residual <= kAffinityTol;
}

DecompositionReport verify_decomposition(const ResidualTrace& trace, const ModelConfig& cfg, const WeightStore& w,
                                         std::span<const float> image_feature, std::span<const float> text_feature,
                                         LayerWindow window) {
    require_trace(trace);
    DecompositionReport rep;
    const auto d = static_cast<std::size_t>(cfg.vision.tower.d_model);

    std::vector<double> rebuilt = to_double(trace.z0_cls.values());
    for (int l = 0; l < trace.layers; ++l) {
        for (std::size_t j = 0; j < d; ++j) rebuilt[j] += trace.msa_cls[l][j] + trace.mlp_cls[l][j];
    }
    rep.completeness_residual = relative_error(rebuilt, to_double(trace.pre_norm_cls()));

    for (int l = 0; l < trace.layers; ++l) {
        const auto eta = unfold_layer(trace, cfg, w, l);
        std::vector<double> sum(d, 0.0);
        for (const auto& row : eta) {
            for (std::size_t j = 0; j < d; ++j) sum[j] += row[j];
        }
        rep.unfolding_residuals.push_back(relative_error(sum, to_double(trace.msa_cls[l].values())));
    }

    const auto proj = FrozenProjection::for_token(trace, cfg, w, 0);
    const auto image = to_double(image_feature);
    rep.affinity_residual = relative_error(proj.apply(rebuilt), image);

    const auto text = to_double(text_feature);
    const double full_sim = ops::cosine(image, text);
    auto gap_for = [&](const LayerWindow& win) {
        std::vector<double> msa_sum(d, 0.0);
        for (int l : win.layers(trace.layers)) {
            for (std::size_t j = 0; j < d; ++j) msa_sum[j] += trace.msa_cls[l][j];
        }
        return std::abs(full_sim - ops::cosine(proj.linear(msa_sum), text));
    };
    rep.approximation_gap = gap_for(window);
    for (int s = 1; s <= trace.layers; ++s) rep.gap_by_start.push_back(gap_for(LayerWindow{s, false}));
    return rep;
}

}  // namespace attnprompt
