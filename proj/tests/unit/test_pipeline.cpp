#include <gtest/gtest.h>

#include "attnprompt/attribution_io.hpp"
#include "attnprompt/error.hpp"
#include "attnprompt/gen_attribution.hpp"
#include "attnprompt/pipeline.hpp"
#include "attnprompt/png.hpp"
#include "attnprompt/synthetic.hpp"
#include "attnprompt/weights.hpp"
#include "support/test_support.hpp"

using namespace attnprompt;
using namespace attnprompt::testing;

namespace {

Query fixture_query() {
    TextFeature f = read_text_feature(data_dir() / "text_feature_cat.json");
    return Query{f.query, std::move(f.feature)};
}

// Seed-42 model written once per process into a temp directory.
const std::filesystem::path& model_file() {
    static TempDir dir;
    static const std::filesystem::path p = [] {
        const auto path = dir / "model.apiw";
        write_weights_file(path, make_synthetic_model());
        return path;
    }();
    return p;
}

std::string golden_args(const TempDir& dir) {
    return "annotate --model " + quoted(model_file()) + " --image " + quoted(data_dir() / "fixture.png") +
           " --text-feature " + quoted(data_dir() / "text_feature_cat.json") + " --out " + quoted(dir / "a.png") +
           " --heatmap-out " + quoted(dir / "h.png");
}

}  // namespace

TEST(Pipeline, ResolvesDefaults) {
    const auto& cfg = fixture_model().config;
    const auto r = resolve(PipelineConfig{}, cfg);
    EXPECT_EQ(r.start_layer, 3);
    EXPECT_EQ(r.kernel, 3);
    PipelineConfig gen;
    gen.source = Source::gen;
    EXPECT_EQ(resolve(gen, cfg).gen_layer, 3);
    PipelineConfig bad;
    bad.kernel = 4;
    EXPECT_THROW(resolve(bad, cfg), Error);
    bad = {};
    bad.start_layer = 5;
    EXPECT_THROW(resolve(bad, cfg), Error);
}

TEST(Pipeline, GoldenAnnotationInProcess) {
    const Annotation a = annotate(fixture_model(), read_png(data_dir() / "fixture.png"), fixture_query(), {});
    EXPECT_EQ(a.annotated, read_png(data_dir() / "golden_annotated.png"));
    EXPECT_EQ(encode_png(a.annotated), read_file_bytes(data_dir() / "golden_annotated.png"));
    EXPECT_EQ(encode_gray_png(a.heatmap.width, a.heatmap.height, heatmap_gray(a.heatmap)),
              read_file_bytes(data_dir() / "golden_heatmap.png"));
    EXPECT_EQ(a.provenance(), "provenance source=clip layer_start=3 layer_mode=window fusion=fused kernel=3");
    ASSERT_EQ(a.maps.size(), 3u);
    const auto fused = fuse(a.maps[0], a.maps[1]);
    for (std::size_t i = 0; i < fused.values.size(); ++i) EXPECT_DOUBLE_EQ(a.maps[2].values[i], fused.values[i]);
}

TEST(Pipeline, FusedAlphaDominatesSingleMaps) {
    const Image img = read_png(data_dir() / "fixture.png");
    PipelineConfig cfg;
    cfg.kernel = 1;
    const auto fused = annotate(fixture_model(), img, fixture_query(), cfg);
    for (Fusion part : {Fusion::cls_only, Fusion::comp_only}) {
        cfg.fusion = part;
        const auto single = annotate(fixture_model(), img, fixture_query(), cfg);
        for (std::size_t i = 0; i < fused.final_map.values.size(); ++i) {
            EXPECT_GE(fused.final_map.values[i] + 1e-12, single.final_map.values[i]);
        }
    }
}

TEST(Pipeline, HeatmapMatchesSourceResolution) {
    const Image img = make_random_image(100, 70, 3);
    const auto a = annotate(fixture_model(), img, Query{"a red ball", std::nullopt}, {});
    EXPECT_EQ(a.annotated.width, 100);
    EXPECT_EQ(a.annotated.height, 70);
    EXPECT_EQ(a.heatmap.alpha.size(), 7000u);
}

TEST(Pipeline, GenerativeSourceUsesDecoderAttention) {
    PipelineConfig cfg;
    cfg.source = Source::gen;
    const auto a = annotate(fixture_model(), make_fixture_image(), Query{"what is red?", std::nullopt}, cfg);
    ASSERT_EQ(a.maps.size(), 1u);
    EXPECT_EQ(a.maps[0].kind, MapKind::generative);
    EXPECT_FALSE(a.generated.empty());
    EXPECT_EQ(a.provenance().find("source=gen"), 11u);
}

TEST(Pipeline, TextFeatureRequiredWithoutTextTower) {
    const Model m = seeded_model(42, false, false);
    try {
        annotate(m, make_fixture_image(), Query{"a cat", std::nullopt}, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::usage);
    }
    EXPECT_NO_THROW(annotate(m, make_fixture_image(), fixture_query(), {}));
}

TEST(Cli, GoldenAnnotateIsBitIdenticalAcrossRuns) {
    TempDir d1, d2;
    const auto r1 = run_cli(golden_args(d1));
    ASSERT_EQ(r1.exit_code, 0) << r1.output;
    const auto r2 = run_cli(golden_args(d2));
    ASSERT_EQ(r2.exit_code, 0) << r2.output;
    EXPECT_EQ(read_file_bytes(d1 / "a.png"), read_file_bytes(d2 / "a.png"));
    EXPECT_EQ(read_file_bytes(d1 / "a.png"), read_file_bytes(data_dir() / "golden_annotated.png"));
    EXPECT_EQ(read_file_bytes(d1 / "h.png"), read_file_bytes(data_dir() / "golden_heatmap.png"));
    EXPECT_NE(r1.output.find("provenance source=clip layer_start=3"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
    TempDir d;
    auto r = run_cli(golden_args(d) + " --kernel 2");
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.output.find("error kind=usage"), std::string::npos) << r.output;
    EXPECT_EQ(run_cli(golden_args(d) + " --layer-start 9").exit_code, 2);
    EXPECT_EQ(run_cli(golden_args(d) + " --fusion max").exit_code, 2);
    EXPECT_EQ(run_cli("annotate --model x").exit_code, 2);
    EXPECT_EQ(run_cli("no-such-command").exit_code, 2);
}

TEST(Cli, InputFormatErrorsExitThree) {
    TempDir d;
    write_file_bytes(d / "junk.apiw", std::vector<std::uint8_t>{'J', 'U', 'N', 'K'});
    const auto r = run_cli("annotate --model " + quoted(d / "junk.apiw") + " --image " +
                           quoted(data_dir() / "fixture.png") + " --query cat --out " + quoted(d / "o.png"));
    EXPECT_EQ(r.exit_code, 3) << r.output;
    EXPECT_NE(r.output.find("error kind=input_format"), std::string::npos);
}

TEST(Cli, VerifyPassesAndCatchesMismatchedTrace) {
    const auto ok = run_cli("verify --model " + quoted(model_file()) + " --text-feature " +
                            quoted(data_dir() / "text_feature_cat.json"));
    EXPECT_EQ(ok.exit_code, 0) << ok.output;
    EXPECT_NE(ok.output.find("verify OK"), std::string::npos);

    // Negative control: trace a model whose attention output weights differ.
    TempDir d;
    WeightStore w = make_synthetic_model();
    for (float& v : w.mutable_get(names::block("visual", 1, "attn.out.weight")).values()) v *= 1.5f;
    write_weights_file(d / "perturbed.apiw", w);
    const auto bad = run_cli("verify --model " + quoted(model_file()) + " --trace-model " +
                             quoted(d / "perturbed.apiw") + " --text-feature " +
                             quoted(data_dir() / "text_feature_cat.json"));
    EXPECT_EQ(bad.exit_code, 4) << bad.output;
    EXPECT_NE(bad.output.find("verify FAILED"), std::string::npos);
}

TEST(Cli, TraceWritesEveryMap) {
    TempDir d;
    const auto r = run_cli("trace --model " + quoted(model_file()) + " --image " + quoted(data_dir() / "fixture.png") +
                           " --text-feature " + quoted(data_dir() / "text_feature_cat.json") + " --out-dir " +
                           quoted(d.path()));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const auto cls = read_map(d / "cls.json");
    const auto comp = read_map(d / "comp.json");
    const auto fused = read_map(d / "fused.json");
    EXPECT_EQ(cls.grid_p, 4);
    const auto want = fuse(cls, comp);
    for (std::size_t i = 0; i < want.values.size(); ++i) EXPECT_NEAR(fused.values[i], want.values[i], 1e-12);
}

TEST(Cli, DefaultsReadBack) {
    const auto r = run_cli("defaults --layers 24 --decoder-layers 24");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const auto j = nlohmann::json::parse(r.output);
    EXPECT_EQ(j.at("kernel"), 3);
    EXPECT_EQ(j.at("clip_layer_indices"), nlohmann::json::array({22, 23}));
    EXPECT_EQ(j.at("gen_layer"), 20);
    const auto m = nlohmann::json::parse(run_cli("defaults --model " + quoted(model_file())).output);
    EXPECT_EQ(m.at("clip_layer_indices"), nlohmann::json::array({2, 3}));
    EXPECT_EQ(m.at("gen_layer"), 3);
}

TEST(Cli, EvalAgainstMockServerReproducesResults) {
    const auto recs = load_dataset(data_dir() / "harness" / "manifest.jsonl");
    MockChatServer server([&](const MockChatServer::Request& req, int) {
        return MockChatServer::reply(planted_reply_for(req.body.at("prompt").get<std::string>(), recs));
    });
    TempDir d;
    auto run = [&](const std::string& out) {
        return run_cli("eval --manifest " + quoted(data_dir() / "harness" / "manifest.jsonl") + " --backend " +
                       server.url() + " --out " + quoted(d / out) + " --retry-backoff 0");
    };
    const auto r1 = run("a.jsonl");
    ASSERT_EQ(r1.exit_code, 0) << r1.output;
    EXPECT_NE(r1.output.find("accuracy 0.7 n 10"), std::string::npos) << r1.output;
    ASSERT_EQ(run("b.jsonl").exit_code, 0);
    EXPECT_EQ(read_file_bytes(d / "a.jsonl"), read_file_bytes(d / "b.jsonl"));
    EXPECT_EQ(server.requests().size(), 20u);
}

TEST(Cli, EvalRejectsBadBackendUrl) {
    TempDir d;
    const auto r = run_cli("eval --manifest " + quoted(data_dir() / "harness" / "manifest.jsonl") +
                           " --backend ftp://nowhere --out " + quoted(d / "o.jsonl"));
    EXPECT_EQ(r.exit_code, 2) << r.output;
}
