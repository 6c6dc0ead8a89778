#include "attnprompt/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <exception>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "attnprompt/error.hpp"
#include "attnprompt/png.hpp"
#include "attnprompt/weights.hpp"

namespace attnprompt {

const char* to_string(TemplateKind kind) {
    switch (kind) {
        case TemplateKind::mme: return "mme";
        case TemplateKind::mmmu_choice: return "mmmu_choice";
        case TemplateKind::mmmu_open: return "mmmu_open";
        case TemplateKind::textvqa: return "textvqa";
        case TemplateKind::viswiz: return "viswiz";
        case TemplateKind::plain: return "plain";
    }
    return "unknown";
}

TemplateKind template_kind_from_string(const std::string& s) {
    static const std::map<std::string, TemplateKind> kinds = {
        {"mme", TemplateKind::mme},         {"mmmu_choice", TemplateKind::mmmu_choice},
        {"mmmu_open", TemplateKind::mmmu_open}, {"textvqa", TemplateKind::textvqa},
        {"viswiz", TemplateKind::viswiz},   {"plain", TemplateKind::plain}};
    auto it = kinds.find(s);
    if (it == kinds.end()) fail(ErrorKind::input_format, "unknown template kind '" + s + "'");
    return it->second;
}

std::string build_prompt(const EvalRecord& rec) {
    const std::string& q = rec.question;
    switch (rec.kind) {
        case TemplateKind::mme: return q + " " + std::string(prompts::kYesNo);
        case TemplateKind::mmmu_choice: return q + "\n" + std::string(prompts::kOptionLetter);
        case TemplateKind::mmmu_open:
        case TemplateKind::textvqa: return q + "\n" + std::string(prompts::kSingleWord);
        case TemplateKind::viswiz: return q + "\n" + std::string(prompts::kUnanswerable);
        case TemplateKind::plain: return q;
    }
    fail(ErrorKind::input_format, "unknown template kind");
}

std::string reemphasize_prompt(const std::string& question) { return question + " " + std::string(prompts::kHint); }

std::string reflection_prompt(const std::string& question) {
    return "For this image, the question is \"" + question +
           "\". Evaluate whether the unmasked visible regions of the image alone can provide an answer to the "
           "question. If they suffice to answer the question, respond with letter \"T\". If they do not support an "
           "answer to the question, reply with the letter \"F\".";
}

std::string normalize_answer(std::string_view text) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    auto is_terminal = [](char c) {
        return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
    };
    std::size_t b = 0, e = text.size();
    while (b < e && is_space(text[b])) ++b;
    while (e > b && (is_space(text[e - 1]) || is_terminal(text[e - 1]))) --e;
    std::string out(text.substr(b, e - b));
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool answer_matches(std::string_view response, std::span<const std::string> answers) {
    const std::string r = normalize_answer(response);
    if (r.empty()) return false;
    return std::any_of(answers.begin(), answers.end(), [&](const std::string& a) { return normalize_answer(a) == r; });
}

double score(std::span<const EvalResult> results, std::span<const EvalRecord> records) {
    if (results.size() != records.size()) {
        fail(ErrorKind::input_format, "result count " + std::to_string(results.size()) + " does not match " +
                                          std::to_string(records.size()) + " records");
    }
    if (records.empty()) return 0.0;
    std::map<std::string, const EvalResult*> by_id;
    for (const auto& r : results) {
        if (!by_id.emplace(r.id, &r).second) fail(ErrorKind::input_format, "duplicate result id '" + r.id + "'");
    }
    std::size_t matched = 0;
    for (const auto& rec : records) {
        auto it = by_id.find(rec.id);
        if (it == by_id.end()) fail(ErrorKind::input_format, "no result for record id '" + rec.id + "'");
        if (answer_matches(it->second->response, rec.answers)) ++matched;
    }
    return static_cast<double>(matched) / static_cast<double>(records.size());
}

EvalRecord record_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    EvalRecord rec;
    try {
        rec.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
        rec.question = j.at("question").get<std::string>();
        for (const auto& p : j.at("images").get<std::vector<std::string>>()) rec.images.push_back(base_dir / p);
        const auto& ans = j.at("answers");
        rec.answers = ans.is_string() ? std::vector<std::string>{ans.get<std::string>()}
                                      : ans.get<std::vector<std::string>>();
        rec.kind = template_kind_from_string(j.at("template").get<std::string>());
        if (j.contains("annotated")) {
            for (const auto& p : j.at("annotated").get<std::vector<std::string>>()) {
                rec.annotated.push_back(base_dir / p);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::input_format, std::string("malformed manifest row: ") + e.what());
    }
    if (rec.question.empty()) fail(ErrorKind::input_format, "record '" + rec.id + "' has an empty question");
    if (rec.images.empty()) fail(ErrorKind::input_format, "record '" + rec.id + "' has no images");
    return rec;
}

std::vector<EvalRecord> load_dataset(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) fail(ErrorKind::input_format, "cannot open manifest '" + manifest.string() + "'");
    const auto base = manifest.parent_path();
    std::vector<EvalRecord> records;
    std::set<std::string> ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::input_format, "manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        EvalRecord rec;
        try {
            rec = record_from_json(j, base);
        } catch (const Error& e) {
            fail(e.kind(), "manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        for (const auto* list : {&rec.images, &rec.annotated}) {
            for (const auto& p : *list) {
                if (!std::filesystem::is_regular_file(p)) {
                    fail(ErrorKind::input_format, "record '" + rec.id + "': image file '" + p.string() + "' not found");
                }
            }
        }
        if (!ids.insert(rec.id).second) fail(ErrorKind::input_format, "duplicate record id '" + rec.id + "'");
        records.push_back(std::move(rec));
    }
    return records;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

EvalResult finish(const EvalRecord& rec, std::string response, bool retry_used, Clock::time_point start) {
    EvalResult r;
    r.id = rec.id;
    r.matched = answer_matches(response, rec.answers);
    r.response = std::move(response);
    r.retry_used = retry_used;
    r.latency_ms = elapsed_ms(start);
    return r;
}

}  // namespace

EvalResult run_single(Backend& backend, const EvalRecord& rec, const std::string& prompt,
                      std::span<const PngBytes> images, const RetryPolicy& policy) {
    const auto start = Clock::now();
    QueryOutcome q = query_backend(backend, prompt, images, policy);
    return finish(rec, std::move(q.text), q.retry_used, start);
}

EvalResult run_self_reflection(Backend& backend, const EvalRecord& rec, std::span<const PngBytes> annotated,
                               std::span<const PngBytes> original, const RetryPolicy& policy) {
    const auto start = Clock::now();
    const QueryOutcome gate = query_backend(backend, reflection_prompt(rec.question), annotated, policy);
    const bool use_annotated = normalize_answer(gate.text) == "t";
    QueryOutcome answer = query_backend(backend, build_prompt(rec), use_annotated ? annotated : original, policy);
    return finish(rec, std::move(answer.text), gate.retry_used || answer.retry_used, start);
}

EvalResult run_reemphasize(Backend& backend, const EvalRecord& rec, std::span<const PngBytes> annotated,
                           const RetryPolicy& policy) {
    return run_single(backend, rec, reemphasize_prompt(build_prompt(rec)), annotated, policy);
}

const char* to_string(EvalMode mode) {
    switch (mode) {
        case EvalMode::plain: return "plain";
        case EvalMode::annotated: return "annotated";
        case EvalMode::reflect: return "reflect";
        case EvalMode::reemphasize: return "reemphasize";
        case EvalMode::ensemble: return "ensemble";
    }
    return "unknown";
}

EvalMode eval_mode_from_string(const std::string& s) {
    for (EvalMode m : {EvalMode::plain, EvalMode::annotated, EvalMode::reflect, EvalMode::reemphasize,
                       EvalMode::ensemble}) {
        if (s == to_string(m)) return m;
    }
    fail(ErrorKind::usage, "unknown eval mode '" + s + "'");
}

namespace {

PngBytes read_png_bytes(const std::filesystem::path& p) {
    PngBytes bytes = read_file_bytes(p);
    decode_png(bytes);  // reject anything the backend would not be able to read
    return bytes;
}

std::vector<PngBytes> read_all(const std::vector<std::filesystem::path>& paths) {
    std::vector<PngBytes> out;
    for (const auto& p : paths) out.push_back(read_png_bytes(p));
    return out;
}

}  // namespace

ImageProvider file_image_provider() {
    return [](const EvalRecord& rec, EvalMode mode) {
        RecordImages imgs;
        imgs.original = read_all(rec.images);
        if (mode == EvalMode::annotated || mode == EvalMode::reflect || mode == EvalMode::reemphasize) {
            if (rec.annotated.empty()) {
                fail(ErrorKind::usage, "record '" + rec.id + "' has no annotated images; pass --model to annotate");
            }
            imgs.annotated = read_all(rec.annotated);
        }
        if (mode == EvalMode::ensemble) imgs.ensemble = rec.annotated.empty() ? imgs.original : read_all(rec.annotated);
        return imgs;
    };
}

ImageProvider model_image_provider(const Model& model, const PipelineConfig& cfg) {
    return [&model, cfg](const EvalRecord& rec, EvalMode mode) {
        RecordImages imgs;
        imgs.original = read_all(rec.images);
        if (mode == EvalMode::plain) return imgs;
        const Image img = decode_png(imgs.original.front());
        const Query query{rec.question, std::nullopt};
        PipelineConfig clip = cfg;
        clip.source = Source::clip;
        imgs.annotated = {encode_png(annotate(model, img, query, clip).annotated)};
        if (mode == EvalMode::ensemble) {
            PipelineConfig gen = cfg;
            gen.source = Source::gen;
            imgs.ensemble = {imgs.annotated.front(), encode_png(annotate(model, img, query, gen).annotated)};
        }
        return imgs;
    };
}

std::vector<EvalResult> run_evaluation(Backend& backend, std::span<const EvalRecord> records,
                                       const ImageProvider& images, const EvalOptions& opts) {
    std::vector<EvalResult> results(records.size());
    std::vector<std::exception_ptr> errors(records.size());
    std::atomic<std::size_t> next{0};

    auto work = [&] {
        for (std::size_t i = next++; i < records.size(); i = next++) {
            const EvalRecord& rec = records[i];
            try {
                const RecordImages imgs = images(rec, opts.mode);
                switch (opts.mode) {
                    case EvalMode::plain:
                        results[i] = run_single(backend, rec, build_prompt(rec), imgs.original, opts.retry);
                        break;
                    case EvalMode::annotated:
                        results[i] = run_single(backend, rec, build_prompt(rec), imgs.annotated, opts.retry);
                        break;
                    case EvalMode::reflect:
                        results[i] = run_self_reflection(backend, rec, imgs.annotated, imgs.original, opts.retry);
                        break;
                    case EvalMode::reemphasize:
                        results[i] = run_reemphasize(backend, rec, imgs.annotated, opts.retry);
                        break;
                    case EvalMode::ensemble:
                        // Ensemble sends the plain question alongside every annotated view.
                        results[i] = run_single(backend, rec, rec.question, imgs.ensemble, opts.retry);
                        break;
                }
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    const int n = std::clamp(opts.workers, 1, static_cast<int>(std::max<std::size_t>(records.size(), 1)));
    {
        std::vector<std::jthread> pool;
        for (int w = 0; w < n; ++w) pool.emplace_back(work);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

std::string results_jsonl(std::span<const EvalResult> results, double accuracy, bool with_latency) {
    std::ostringstream os;
    for (const auto& r : results) {
        nlohmann::json j = {{"id", r.id}, {"response", r.response}, {"matched", r.matched}, {"retry_used", r.retry_used}};
        if (with_latency) j["latency_ms"] = r.latency_ms;
        os << j.dump() << '\n';
    }
    os << nlohmann::json{{"accuracy", accuracy}, {"n", results.size()}}.dump() << '\n';
    return os.str();
}

}  // namespace attnprompt
