// attnprompt: query-conditioned attention heatmaps and annotated-image VQA evaluation.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnprompt/attribution_io.hpp"
#include "attnprompt/backend.hpp"
#include "attnprompt/clip_attribution.hpp"
#include "attnprompt/error.hpp"
#include "attnprompt/eval.hpp"
#include "attnprompt/gen_attribution.hpp"
#include "attnprompt/model.hpp"
#include "attnprompt/pipeline.hpp"
#include "attnprompt/png.hpp"
#include "attnprompt/synthetic.hpp"

namespace fs = std::filesystem;
using namespace attnprompt;

namespace {

struct PipelineFlags {
    std::string model;
    std::string image;
    std::string query;
    std::string text_feature;
    std::string source = "clip";
    int layer_start = 0;
    std::string layer_mode = "window";
    int gen_layer = 0;
    int kernel = kDefaultKernel;
    std::string fusion = "fused";
    int max_steps = kDefaultMaxSteps;

    void add_to(CLI::App* cmd, bool with_image = true) {
        cmd->add_option("--model", model, "APIW model container")->required();
        if (with_image) cmd->add_option("--image", image, "input PNG")->required();
        cmd->add_option("--query", query, "text query (embedded with the model's text tower)");
        cmd->add_option("--text-feature", text_feature, "precomputed text feature JSON");
        cmd->add_option("--source", source, "attribution source: clip|gen")->capture_default_str();
        cmd->add_option("--layer-start", layer_start, "1-based first encoder layer (0 = last two layers)");
        cmd->add_option("--layer-mode", layer_mode, "window|single")->capture_default_str();
        cmd->add_option("--gen-layer", gen_layer, "1-based decoder layer (0 = model default)");
        cmd->add_option("--kernel", kernel, "mean filter size (odd)")->capture_default_str();
        cmd->add_option("--fusion", fusion, "cls-only|comp-only|fused")->capture_default_str();
        cmd->add_option("--max-steps", max_steps, "decoder steps for --source gen")->capture_default_str();
    }

    PipelineConfig config() const {
        PipelineConfig c;
        if (source == "clip") {
            c.source = Source::clip;
        } else if (source == "gen") {
            c.source = Source::gen;
        } else {
            fail(ErrorKind::usage, "--source must be clip or gen");
        }
        if (layer_mode != "window" && layer_mode != "single") fail(ErrorKind::usage, "--layer-mode must be window or single");
        c.single_layer = layer_mode == "single";
        if (fusion == "cls-only") {
            c.fusion = Fusion::cls_only;
        } else if (fusion == "comp-only") {
            c.fusion = Fusion::comp_only;
        } else if (fusion == "fused") {
            c.fusion = Fusion::fused;
        } else {
            fail(ErrorKind::usage, "--fusion must be cls-only, comp-only or fused");
        }
        if (kernel < 1 || kernel % 2 == 0) fail(ErrorKind::usage, "--kernel must be odd and >= 1");
        if (layer_start < 0) fail(ErrorKind::usage, "--layer-start must be >= 1");
        if (gen_layer < 0) fail(ErrorKind::usage, "--gen-layer must be >= 1");
        c.start_layer = layer_start;
        c.gen_layer = gen_layer;
        c.kernel = kernel;
        c.max_steps = max_steps;
        return c;
    }

    Query query_input() const {
        Query q;
        q.text = query;
        if (!text_feature.empty()) {
            TextFeature f = read_text_feature(text_feature);
            if (q.text.empty()) q.text = f.query;
            q.feature = std::move(f.feature);
        } else if (query.empty()) {
            fail(ErrorKind::usage, "one of --query or --text-feature is required");
        }
        return q;
    }
};

int cmd_annotate(const PipelineFlags& f, const std::string& out, const std::string& heatmap_out,
                 const std::string& dump_json) {
    const Model model = Model::load(f.model);
    const PipelineConfig cfg = f.config();
    const Query query = f.query_input();
    const Image img = read_png(f.image);
    const Annotation a = annotate(model, img, query, cfg);
    write_png(out, a.annotated);
    if (!heatmap_out.empty()) {
        write_file_bytes(heatmap_out, encode_gray_png(a.heatmap.width, a.heatmap.height, heatmap_gray(a.heatmap)));
    }
    if (!dump_json.empty()) write_map(dump_json, a.final_map);
    std::cout << a.provenance() << '\n';
    return 0;
}

int cmd_trace(const PipelineFlags& f, const std::string& out_dir) {
    const Model model = Model::load(f.model);
    const Annotation a = annotate(model, read_png(f.image), f.query_input(), f.config());
    fs::create_directories(out_dir);
    for (const auto& m : a.maps) {
        const fs::path p = fs::path(out_dir) / (std::string(to_string(m.kind)) + ".json");
        write_map(p, m);
        std::cout << "wrote " << p.string() << '\n';
    }
    std::cout << a.provenance() << '\n';
    return 0;
}

int cmd_verify(const std::string& model_path, const std::string& trace_model_path, const std::string& image_path,
               const std::string& query, const std::string& feature_path, int layer_start) {
    const Model model = Model::load(model_path);
    const std::optional<Model> trace_model =
        trace_model_path.empty() ? std::nullopt : std::optional<Model>(Model::load(trace_model_path));
    const Model& tracer = trace_model ? *trace_model : model;
    const int side = model.config.vision.image_side;
    const Image img = image_path.empty() ? make_fixture_image(side) : resize_image(read_png(image_path), side, side);

    Tensor text;
    if (!feature_path.empty()) {
        text = read_text_feature(feature_path).feature;
    } else if (model.config.text) {
        text = resolve_text_feature(model, Query{query.empty() ? "a photo of a cat" : query, std::nullopt});
    } else {
        fail(ErrorKind::usage, "model has no text tower; pass --text-feature");
    }

    const VisionOutput vo = forward_vision(img, tracer.config, tracer.weights);
    const int start = layer_start == 0 ? default_clip_start_layer(model.config.vision.tower.layers) : layer_start;
    const DecompositionReport rep =
        verify_decomposition(vo.trace, model.config, model.weights, vo.image_feature.values(), text.values(),
                             LayerWindow{start, false});

    std::cout << std::scientific << std::setprecision(3);
    std::cout << "residual_completeness " << rep.completeness_residual << " tol "
              << DecompositionReport::kCompletenessTol << '\n';
    for (std::size_t l = 0; l < rep.unfolding_residuals.size(); ++l) {
        std::cout << "unfolding_identity layer=" << l + 1 << ' ' << rep.unfolding_residuals[l] << " tol "
                  << DecompositionReport::kUnfoldingTol << '\n';
    }
    std::cout << "frozen_norm_affinity " << rep.affinity_residual << " tol " << DecompositionReport::kAffinityTol
              << '\n';
    std::cout << "approximation_gap layer_start=" << start << ' ' << rep.approximation_gap << '\n';
    for (std::size_t s = 0; s < rep.gap_by_start.size(); ++s) {
        std::cout << "approximation_gap_by_start start=" << s + 1 << ' ' << rep.gap_by_start[s] << '\n';
    }
    if (!rep.ok()) {
        std::cout << "verify FAILED\n";
        return exit_code(ErrorKind::numeric);
    }
    std::cout << "verify OK\n";
    return 0;
}

struct EvalFlags {
    std::string manifest;
    std::string backend;
    std::string mode = "plain";
    std::string out;
    std::string model_name = "default";
    double timeout = 60.0;
    std::string api_key_env;
    int workers = 4;
    double retry_backoff = 2.0;
    bool record_latency = false;
};

int cmd_eval(const EvalFlags& e, const PipelineFlags& pf, bool annotate_with_model) {
    const auto records = load_dataset(e.manifest);
    EvalOptions opts;
    opts.mode = eval_mode_from_string(e.mode);
    if (e.workers < 1) fail(ErrorKind::usage, "--workers must be >= 1");
    if (e.retry_backoff < 0) fail(ErrorKind::usage, "--retry-backoff must be >= 0");
    opts.workers = e.workers;
    opts.retry.backoff = std::chrono::milliseconds(static_cast<long>(e.retry_backoff * 1000.0));
    opts.record_latency = e.record_latency;

    HttpBackend backend(BackendSpec{e.backend, e.model_name, e.timeout, e.api_key_env});
    std::optional<Model> model;
    ImageProvider provider = file_image_provider();
    if (annotate_with_model) {
        model = Model::load(pf.model);
        provider = model_image_provider(*model, pf.config());
    }
    const auto results = run_evaluation(backend, records, provider, opts);
    const double acc = score(results, records);
    const std::string text = results_jsonl(results, acc, opts.record_latency);
    std::ofstream out(e.out, std::ios::trunc);
    if (!out) fail(ErrorKind::input_format, "cannot write '" + e.out + "'");
    out << text;
    std::cout << "accuracy " << acc << " n " << records.size() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attnprompt: text-query attention heatmaps as visual prompts"};
    app.require_subcommand(1);

    PipelineFlags annotate_flags;
    std::string out, heatmap_out, dump_json;
    auto* annotate_cmd = app.add_subcommand("annotate", "write an annotated image for a query");
    annotate_flags.add_to(annotate_cmd);
    annotate_cmd->add_option("--out", out, "annotated PNG")->required();
    annotate_cmd->add_option("--heatmap-out", heatmap_out, "grayscale heatmap PNG");
    annotate_cmd->add_option("--dump-json", dump_json, "final attribution map JSON");

    PipelineFlags trace_flags;
    std::string out_dir;
    auto* trace_cmd = app.add_subcommand("trace", "dump every attribution map as JSON");
    trace_flags.add_to(trace_cmd);
    trace_cmd->add_option("--out-dir", out_dir, "directory for <kind>.json maps")->required();

    std::string verify_model, verify_trace_model, verify_image, verify_query, verify_feature;
    int verify_start = 0;
    auto* verify_cmd = app.add_subcommand("verify", "check the residual decomposition identities");
    verify_cmd->add_option("--model", verify_model, "APIW model container")->required();
    verify_cmd->add_option("--trace-model", verify_trace_model, "run the forward pass with these weights instead");
    verify_cmd->add_option("--image", verify_image, "input PNG (default: built-in fixture picture)");
    verify_cmd->add_option("--query", verify_query, "text query for the approximation gap");
    verify_cmd->add_option("--text-feature", verify_feature, "precomputed text feature JSON");
    verify_cmd->add_option("--layer-start", verify_start, "1-based first layer of the window (0 = last two)");

    EvalFlags eval_flags;
    PipelineFlags eval_pipeline;
    auto* eval_cmd = app.add_subcommand("eval", "run annotated-image VQA against an LVLM backend");
    eval_cmd->add_option("--manifest", eval_flags.manifest, "JSON-lines dataset manifest")->required();
    eval_cmd->add_option("--backend", eval_flags.backend, "backend base URL")->required();
    eval_cmd->add_option("--mode", eval_flags.mode, "plain|annotated|reflect|reemphasize|ensemble")
        ->capture_default_str();
    eval_cmd->add_option("--out", eval_flags.out, "results JSON-lines")->required();
    eval_cmd->add_option("--model-name", eval_flags.model_name, "model name sent to the backend")
        ->capture_default_str();
    eval_cmd->add_option("--timeout", eval_flags.timeout, "request timeout, seconds")->capture_default_str();
    eval_cmd->add_option("--api-key-env", eval_flags.api_key_env, "environment variable holding a bearer token");
    eval_cmd->add_option("--workers", eval_flags.workers, "concurrent records")->capture_default_str();
    eval_cmd->add_option("--retry-backoff", eval_flags.retry_backoff, "pause before the single retry, seconds")
        ->capture_default_str();
    eval_cmd->add_flag("--record-latency", eval_flags.record_latency, "include latency_ms in results");
    eval_cmd->add_option("--model", eval_pipeline.model, "annotate images on the fly with this model");
    eval_cmd->add_option("--layer-start", eval_pipeline.layer_start, "see annotate");
    eval_cmd->add_option("--layer-mode", eval_pipeline.layer_mode, "see annotate");
    eval_cmd->add_option("--gen-layer", eval_pipeline.gen_layer, "see annotate");
    eval_cmd->add_option("--kernel", eval_pipeline.kernel, "see annotate");
    eval_cmd->add_option("--fusion", eval_pipeline.fusion, "see annotate");
    eval_cmd->add_option("--max-steps", eval_pipeline.max_steps, "see annotate");

    std::uint32_t seed = 42;
    std::string synth_out;
    bool no_text = false, no_decoder = false;
    auto* synth_cmd = app.add_subcommand("synth-model", "write the seeded desk-scale fixture model");
    synth_cmd->add_option("--seed", seed, "RNG seed")->capture_default_str();
    synth_cmd->add_option("--out", synth_out, "APIW output path")->required();
    synth_cmd->add_flag("--no-text", no_text, "omit the text tower");
    synth_cmd->add_flag("--no-decoder", no_decoder, "omit the decoder");

    std::string image_out;
    int image_side = 64;
    auto* image_cmd = app.add_subcommand("synth-image", "write the procedural fixture picture");
    image_cmd->add_option("--out", image_out, "PNG output path")->required();
    image_cmd->add_option("--side", image_side, "width and height")->capture_default_str();

    std::string embed_model, embed_query, embed_out;
    auto* embed_cmd = app.add_subcommand("embed", "write a text feature fixture for a query");
    embed_cmd->add_option("--model", embed_model, "APIW model container with a text tower")->required();
    embed_cmd->add_option("--query", embed_query, "query text")->required();
    embed_cmd->add_option("--out", embed_out, "feature JSON path")->required();

    std::string defaults_model;
    int defaults_layers = 0, defaults_decoder_layers = 0;
    auto* defaults_cmd = app.add_subcommand("defaults", "print resolved default hyper-parameters as JSON");
    defaults_cmd->add_option("--model", defaults_model, "read layer counts from this model");
    defaults_cmd->add_option("--layers", defaults_layers, "vision encoder depth");
    defaults_cmd->add_option("--decoder-layers", defaults_decoder_layers, "decoder depth");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error kind=usage message=" << nlohmann::json(e.what()).dump() << '\n';
        return exit_code(ErrorKind::usage);
    }

    try {
        if (*annotate_cmd) return cmd_annotate(annotate_flags, out, heatmap_out, dump_json);
        if (*trace_cmd) return cmd_trace(trace_flags, out_dir);
        if (*verify_cmd) {
            return cmd_verify(verify_model, verify_trace_model, verify_image, verify_query, verify_feature,
                              verify_start);
        }
        if (*eval_cmd) return cmd_eval(eval_flags, eval_pipeline, !eval_pipeline.model.empty());
        if (*synth_cmd) {
            SyntheticSpec spec;
            spec.seed = seed;
            spec.with_text = !no_text;
            spec.with_decoder = !no_decoder;
            write_weights_file(synth_out, make_synthetic_model(spec));
            return 0;
        }
        if (*image_cmd) {
            write_png(image_out, make_fixture_image(image_side));
            return 0;
        }
        if (*embed_cmd) {
            const Model model = Model::load(embed_model);
            write_text_feature(embed_out, {embed_query, resolve_text_feature(model, Query{embed_query, std::nullopt})});
            return 0;
        }
        if (*defaults_cmd) {
            if (!defaults_model.empty()) {
                const Model model = Model::load(defaults_model);
                defaults_layers = model.config.vision.tower.layers;
                if (model.config.decoder) defaults_decoder_layers = model.config.decoder->tower.layers;
            }
            nlohmann::json j = {{"kernel", kDefaultKernel}, {"max_steps", kDefaultMaxSteps}};
            if (defaults_layers > 0) {
                const int start = default_clip_start_layer(defaults_layers);
                j["layer_start"] = start;
                j["clip_layer_indices"] = LayerWindow{start, false}.layers(defaults_layers);
            }
            if (defaults_decoder_layers > 0) j["gen_layer"] = default_gen_layer(defaults_decoder_layers);
            std::cout << j.dump() << '\n';
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error kind=" << to_string(e.kind()) << " message=" << nlohmann::json(e.what()).dump() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error kind=internal message=" << nlohmann::json(e.what()).dump() << '\n';
        return 1;
    }
    return 0;
}
