#pragma once

#include <span>
#include <vector>

#include "attnprompt/attribution.hpp"
#include "attnprompt/config.hpp"
#include "attnprompt/model.hpp"
#include "attnprompt/tensor.hpp"
#include "attnprompt/weights.hpp"

namespace attnprompt {

/// Which encoder layers feed the cls decomposition. `start` is 1-based.
/// As a window it covers start..L; with `single` set only layer `start` is used.
struct LayerWindow {
    int start = 1;
    bool single = false;

    /// 0-based layer indices; throws ErrorKind::usage when start is outside [1, total].
    std::vector<int> layers(int total) const;
};

/// Last two layers, i.e. 0-based indices {L-2, L-1}.
int default_clip_start_layer(int layers);

/// Final norm + projection with the normalization scale frozen for one token.
///
/// Centering is linear, so with sigma fixed the map splits into linear(x) plus
/// the input-independent constant beta * proj. apply() on the token the scale
/// was captured from reproduces the real post-norm projection.
class FrozenProjection {
public:
    FrozenProjection(const ModelConfig& cfg, const WeightStore& w, double variance);
    static FrozenProjection for_token(const ResidualTrace& trace, const ModelConfig& cfg, const WeightStore& w,
                                      std::size_t token);

    std::vector<double> linear(std::span<const double> x) const;
    std::vector<double> constant() const;
    std::vector<double> apply(std::span<const double> x) const;

private:
    const Tensor* gamma_;
    const Tensor* beta_;
    const Tensor* proj_;
    double inv_sigma_;
};

/// eta[t] for one 0-based layer: per-token share of the cls MSA output, T x d_model.
/// The output bias is split evenly over tokens, so the rows sum to msa_cls[layer].
std::vector<std::vector<double>> unfold_layer(const ResidualTrace& trace, const ModelConfig& cfg,
                                              const WeightStore& w, int layer);

struct PatchContribution {
    LayerWindow window;
    std::vector<std::vector<double>> psi;  // T rows of embed_dim; psi[0] is the cls token itself
};

PatchContribution decompose_cls(const ResidualTrace& trace, const ModelConfig& cfg, const WeightStore& w,
                                LayerWindow window);

/// Cosine of each patch contribution with the text feature; cls row excluded.
AttributionMap psi_cls(const PatchContribution& contrib, std::span<const float> text_feature, int grid_p);

/// 1 - cosine of each projected last-layer patch token with the text feature.
AttributionMap psi_comp(const ResidualTrace& trace, const ModelConfig& cfg, const WeightStore& w,
                        std::span<const float> text_feature);

struct DecompositionReport {
    double completeness_residual = 0.0;           // z0 + sum(msa) + sum(mlp) vs pre-norm cls
    std::vector<double> unfolding_residuals;      // per layer, sum_t eta vs msa_cls
    double affinity_residual = 0.0;               // frozen projection of the reconstruction vs image feature
    double approximation_gap = 0.0;               // |sim(I, T) - sim(sum_window L(msa), T)|
    std::vector<double> gap_by_start;             // gap for start = 1..L (window mode)

    static constexpr double kCompletenessTol = 1e-5;
    static constexpr double kUnfoldingTol = 1e-6;
    static constexpr double kAffinityTol = 1e-5;

    double max_unfolding_residual() const;
    bool ok() const;
};

DecompositionReport verify_decomposition(const ResidualTrace& trace, const ModelConfig& cfg, const WeightStore& w,
                                         std::span<const float> image_feature, std::span<const float> text_feature,
                                         LayerWindow window);

/// ||a - b|| / max(||b||, 1e-12)
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace attnprompt
