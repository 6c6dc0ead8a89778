#include <gtest/gtest.h>

#include <random>

#include "attnprompt/attribution_io.hpp"
#include "attnprompt/clip_attribution.hpp"
#include "attnprompt/error.hpp"
#include "attnprompt/synthetic.hpp"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

using namespace attnprompt;
using attnprompt::testing::data_dir;
using attnprompt::testing::fixture_model;
using attnprompt::testing::seeded_model;

namespace {

std::vector<double> as_double(std::span<const float> v) { return {v.begin(), v.end()}; }

Tensor fixture_text() { return read_text_feature(data_dir() / "text_feature_cat.json").feature; }

Tensor random_unit(std::uint32_t seed, std::size_t n) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> dist;
    std::vector<float> v(n);
    for (auto& x : v) x = dist(rng);
    const double s = ops::norm(v);
    for (auto& x : v) x = static_cast<float>(x / s);
    return Tensor::vector(std::move(v));
}

}  // namespace

TEST(LayerWindow, IndicesAndBounds) {
    EXPECT_EQ((LayerWindow{23, false}.layers(24)), (std::vector<int>{22, 23}));
    EXPECT_EQ((LayerWindow{3, true}.layers(4)), (std::vector<int>{2}));
    EXPECT_EQ((LayerWindow{1, false}.layers(2)), (std::vector<int>{0, 1}));
    EXPECT_THROW((LayerWindow{0, false}.layers(4)), Error);
    EXPECT_THROW((LayerWindow{5, false}.layers(4)), Error);
    EXPECT_EQ(default_clip_start_layer(24), 23);
    EXPECT_EQ(default_clip_start_layer(4), 3);
    EXPECT_EQ(default_clip_start_layer(1), 1);
}

TEST(Unfolding, SumsToMsaOutputForEverySeed) {
    for (std::uint32_t seed = 1; seed <= 20; ++seed) {
        const Model m = seeded_model(seed, false, false);
        const auto tr = forward_vision(make_random_image(64, 64, seed + 100), m.config, m.weights).trace;
        for (int l = 0; l < tr.layers; ++l) {
            const auto eta = unfold_layer(tr, m.config, m.weights, l);
            std::vector<double> sum(eta[0].size(), 0.0);
            for (const auto& row : eta) {
                for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += row[j];
            }
            EXPECT_LE(relative_error(sum, as_double(tr.msa_cls[l].values())), 1e-6)
                << "seed " << seed << " layer " << l;
        }
    }
}

TEST(Unfolding, OneHotAttentionLeavesOnlyBiasShareElsewhere) {
    const Model& m = fixture_model();
    auto tr = forward_vision(make_fixture_image(), m.config, m.weights).trace;
    const int target = 5;
    for (int h = 0; h < tr.heads; ++h) {
        Tensor& a = tr.attn[1][h];
        for (int c = 0; c < tr.tokens; ++c) a(0, c) = c == target ? 1.0f : 0.0f;
    }
    const auto eta = unfold_layer(tr, m.config, m.weights, 1);
    const Tensor& bias = m.weights.get(names::block("visual", 1, "attn.out.bias"));
    for (int t = 0; t < tr.tokens; ++t) {
        if (t == target) continue;
        for (std::size_t j = 0; j < eta[t].size(); ++j) EXPECT_NEAR(eta[t][j], static_cast<double>(bias[j]) / tr.tokens, 1e-15);
    }
}

TEST(ClsAttribution, MatchesNaiveOracle) {
    for (std::uint32_t seed : {42u, 3u, 11u}) {
        const Model m = seeded_model(seed);
        const auto tr = forward_vision(make_random_image(64, 64, seed), m.config, m.weights).trace;
        const Tensor text = random_unit(seed, 16);
        for (LayerWindow win : {LayerWindow{3, false}, LayerWindow{1, false}, LayerWindow{2, true}}) {
            const auto got = psi_cls(decompose_cls(tr, m.config, m.weights, win), text.values(), 4);
            const auto want = oracle::cls_map(tr, m.config, m.weights, win.layers(4), as_double(text.values()));
            ASSERT_EQ(got.values.size(), want.size());
            for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.values[i], want[i], 1e-6);
        }
    }
}

TEST(ClsAttribution, SelfSimilarAndOrthogonalText) {
    const Model& m = fixture_model();
    const auto tr = forward_vision(make_fixture_image(), m.config, m.weights).trace;
    const auto contrib = decompose_cls(tr, m.config, m.weights, LayerWindow{3, false});
    const int t = 1 + 2 * 4 + 1;  // cell (2, 1)

    std::vector<float> same(contrib.psi[t].begin(), contrib.psi[t].end());
    const double n = ops::norm(same);
    for (auto& v : same) v = static_cast<float>(v / n);
    EXPECT_NEAR(psi_cls(contrib, same, 4).at(2, 1), 1.0, 1e-6);

    // Orthogonalize a random direction against psi_t.
    Tensor r = random_unit(9, 16);
    std::vector<double> rv = as_double(r.values());
    const std::vector<double> p(contrib.psi[t].begin(), contrib.psi[t].end());
    const double k = ops::dot(rv, p) / ops::dot(p, p);
    for (std::size_t j = 0; j < rv.size(); ++j) rv[j] -= k * p[j];
    const double rn = ops::norm(rv);
    std::vector<float> ortho;
    for (double v : rv) ortho.push_back(static_cast<float>(v / rn));
    EXPECT_NEAR(psi_cls(contrib, ortho, 4).at(2, 1), 0.0, 1e-6);
}

TEST(ClsAttribution, RejectsNonUnitText) {
    const Model& m = fixture_model();
    const auto tr = forward_vision(make_fixture_image(), m.config, m.weights).trace;
    const auto contrib = decompose_cls(tr, m.config, m.weights, LayerWindow{3, false});
    std::vector<float> t(16, 1.0f);
    EXPECT_THROW(psi_cls(contrib, t, 4), Error);
    std::vector<float> wrong_width(8, 0.0f);
    wrong_width[0] = 1.0f;
    EXPECT_THROW(psi_cls(contrib, wrong_width, 4), Error);
}

TEST(CompAttribution, MatchesNaiveOracle) {
    for (std::uint32_t seed : {42u, 5u}) {
        const Model m = seeded_model(seed);
        const auto tr = forward_vision(make_random_image(64, 64, seed * 7), m.config, m.weights).trace;
        const Tensor text = random_unit(seed + 1, 16);
        const auto got = psi_comp(tr, m.config, m.weights, text.values());
        const auto want = oracle::comp_map(tr, m.config, m.weights, as_double(text.values()));
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.values[i], want[i], 1e-6);
    }
}

TEST(CompAttribution, ParallelAndOrthogonalWithZeroedProjection) {
    // Zero the proj except column 0, then zero beta: every projected token is
    // parallel to e0, so a text along e0 gives 1-cos = 0 and along e1 gives 1.
    WeightStore w = make_synthetic_model();
    Tensor& proj = w.mutable_get("visual.proj");
    for (std::size_t i = 0; i < proj.dim(0); ++i) {
        for (std::size_t j = 1; j < proj.dim(1); ++j) proj(i, j) = 0.0f;
        proj(i, 0) = 1.0f;
    }
    const Model m = Model::from_store(std::move(w));
    auto tr = forward_vision(make_fixture_image(), m.config, m.weights).trace;
    std::vector<float> e0(16, 0.0f), e1(16, 0.0f);
    e0[0] = 1.0f;
    e1[1] = 1.0f;
    const auto along = psi_comp(tr, m.config, m.weights, e0);
    const auto across = psi_comp(tr, m.config, m.weights, e1);
    const auto oracle_along = oracle::comp_map(tr, m.config, m.weights, {e0.begin(), e0.end()});
    for (std::size_t i = 0; i < 16; ++i) {
        // y_0 may be either sign, so cos is +-1.
        EXPECT_TRUE(std::abs(along.values[i]) < 1e-9 || std::abs(along.values[i] - 2.0) < 1e-9);
        EXPECT_NEAR(along.values[i], oracle_along[i], 1e-9);
        EXPECT_NEAR(across.values[i], 1.0, 1e-12);
    }
}

TEST(MapAlgebra, NormalizeExamples) {
    AttributionMap m{2, MapKind::cls, {2.0, 4.0, 6.0, 3.0}};
    EXPECT_EQ(normalize_map(m).values, (std::vector<double>{0.0, 0.5, 1.0, 0.25}));
    AttributionMap c{2, MapKind::cls, {0.3, 0.3, 0.3, 0.3}};
    EXPECT_EQ(normalize_map(c).values, (std::vector<double>{1, 1, 1, 1}));
    const auto once = normalize_map(m);
    EXPECT_EQ(normalize_map(once).values, once.values);
    AttributionMap bad{2, MapKind::cls, {0.0, std::nan(""), 1.0, 2.0}};
    EXPECT_THROW(normalize_map(bad), Error);
}

TEST(MapAlgebra, FuseExamplesAndErrors) {
    AttributionMap a{2, MapKind::cls, {0.0, 1.0, 0.5, 0.2}};
    AttributionMap b{2, MapKind::comp, {0.0, 0.3, 0.5, 1.0}};
    const auto f = fuse(a, b);
    EXPECT_EQ(f.kind, MapKind::fused);
    EXPECT_DOUBLE_EQ(f.values[0], 0.0);
    EXPECT_DOUBLE_EQ(f.values[1], 1.0);
    EXPECT_DOUBLE_EQ(f.values[2], 0.75);
    EXPECT_DOUBLE_EQ(f.values[3], 1.0);
    AttributionMap c{3, MapKind::comp, std::vector<double>(9, 0.5)};
    EXPECT_THROW(fuse(a, c), Error);
}

TEST(MapAlgebra, SoftOrProperties) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 10000; ++i) {
        const double a = u(rng), b = u(rng), e = u(rng) * (1.0 - a);
        EXPECT_NEAR(soft_or(a, b), soft_or(b, a), 1e-12);
        EXPECT_NEAR(soft_or(a, 0.0), a, 1e-12);
        EXPECT_NEAR(soft_or(a, 1.0), 1.0, 1e-12);
        EXPECT_GE(soft_or(a + e, b) + 1e-12, soft_or(a, b));
        EXPECT_GE(soft_or(a, b) + 1e-12, std::max(a, b));
        EXPECT_LE(soft_or(a, b), 1.0 + 1e-12);
    }
}

TEST(MapIndexing, BijectionWithOneBasedConvention) {
    // 1-based: patch (i, j) -> token 1 + (i-1)P + j; the cls token is token 1.
    // Shifting everything down by one gives our 0-based t = 1 + r*P + c.
    const int P = 4;
    std::vector<bool> seen(P * P + 1, false);
    for (int i = 1; i <= P; ++i) {
        for (int j = 1; j <= P; ++j) {
            const std::size_t one_based = 1 + (i - 1) * P + j;
            const std::size_t t = token_of_cell(i - 1, j - 1, P, MapKind::cls);
            EXPECT_EQ(t + 1, one_based);
            EXPECT_FALSE(seen[t]);
            seen[t] = true;
            EXPECT_EQ(cell_of_token(t, P, MapKind::cls), std::make_pair(i - 1, j - 1));
            EXPECT_EQ(token_of_cell(i - 1, j - 1, P, MapKind::generative), t - 1);
        }
    }
    EXPECT_FALSE(seen[0]);
}

TEST(Verification, FixtureIdentitiesHold) {
    const Model& m = fixture_model();
    const auto out = forward_vision(make_fixture_image(), m.config, m.weights);
    const Tensor text = fixture_text();
    const auto rep = verify_decomposition(out.trace, m.config, m.weights, out.image_feature.values(), text.values(),
                                          LayerWindow{3, false});
    EXPECT_TRUE(rep.ok());
    EXPECT_LE(rep.completeness_residual, 1e-5);
    EXPECT_LE(rep.max_unfolding_residual(), 1e-6);
    EXPECT_LE(rep.affinity_residual, 1e-5);
    ASSERT_EQ(rep.gap_by_start.size(), 4u);
    EXPECT_DOUBLE_EQ(rep.gap_by_start[2], rep.approximation_gap);
}

TEST(Verification, GapVanishesWithoutMlpEmbeddingOrBiases) {
    // With MLP, class/pos embeddings, ln_pre bias and every attention bias
    // zeroed, the cls residual is exactly z0 + sum(msa) and z0 = 0, so the
    // full window recovers the image feature up to the beta term; zero that too.
    WeightStore w = make_synthetic_model({.with_text = false, .with_decoder = false});
    for (auto& [name, t] : w.tensors()) {
        const bool zero = name.find("mlp.fc2") != std::string::npos || name == "visual.class_embedding" ||
                          name == "visual.ln_pre.bias" || name == "visual.ln_post.bias" ||
                          name.find("attn.out.bias") != std::string::npos;
        if (zero) {
            for (float& v : w.mutable_get(name).values()) v = 0.0f;
        }
    }
    // cls pos embedding row too.
    Tensor& pos = w.mutable_get("visual.pos_embed");
    for (std::size_t c = 0; c < pos.dim(1); ++c) pos(0, c) = 0.0f;
    const Model m = Model::from_store(std::move(w));
    const auto out = forward_vision(make_fixture_image(), m.config, m.weights);
    const Tensor text = random_unit(1, 16);
    const auto rep = verify_decomposition(out.trace, m.config, m.weights, out.image_feature.values(), text.values(),
                                          LayerWindow{1, false});
    EXPECT_LE(rep.approximation_gap, 1e-6);
}
