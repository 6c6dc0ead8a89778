#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "attnprompt/backend.hpp"
#include "attnprompt/pipeline.hpp"

namespace attnprompt {

enum class TemplateKind { mme, mmmu_choice, mmmu_open, textvqa, viswiz, plain };

const char* to_string(TemplateKind kind);
TemplateKind template_kind_from_string(const std::string& s);

/// One VQA item. `annotated` is optional and lists precomputed annotated images.
struct EvalRecord {
    std::string id;
    std::string question;
    std::vector<std::filesystem::path> images;
    std::vector<std::string> answers;
    TemplateKind kind = TemplateKind::plain;
    std::vector<std::filesystem::path> annotated;
};

struct EvalResult {
    std::string id;
    std::string response;
    bool matched = false;
    double latency_ms = 0.0;
    bool retry_used = false;
};

namespace prompts {
inline constexpr std::string_view kYesNo = "Please answer yes or no.";
inline constexpr std::string_view kOptionLetter = "Answer with the option's letter from the given choices directly.";
inline constexpr std::string_view kSingleWord = "Answer the question using a single word or phrase.";
inline constexpr std::string_view kUnanswerable =
    "When the provided information is insufficient, respond with 'Unanswerable'. "
    "Answer the question using a single word or phrase.";
inline constexpr std::string_view kHint = "(Hint: The answer is related to the unmasked visible regions).";
}  // namespace prompts

/// Question plus the template's instruction suffix.
std::string build_prompt(const EvalRecord& rec);

/// "[Question] (Hint: ...)."
std::string reemphasize_prompt(const std::string& question);

/// First-round prompt of the self-reflection flow, asking for "T" or "F".
std::string reflection_prompt(const std::string& question);

/// Trim, ASCII casefold, strip trailing punctuation.
std::string normalize_answer(std::string_view text);
bool answer_matches(std::string_view response, std::span<const std::string> answers);

/// Fraction of records whose response matches; results are aligned by id.
double score(std::span<const EvalResult> results, std::span<const EvalRecord> records);

/// JSON-lines manifest: {"id", "question", "images": [...], "answers": [...], "template": kind}.
/// Relative image paths resolve against the manifest directory.
std::vector<EvalRecord> load_dataset(const std::filesystem::path& manifest);
EvalRecord record_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

/// Single query with the record's prompt.
EvalResult run_single(Backend& backend, const EvalRecord& rec, const std::string& prompt,
                      std::span<const PngBytes> images, const RetryPolicy& policy);

/// Round 1 asks whether the highlighted regions suffice ("T"/"F"); round 2 asks
/// the question with the annotated image on "T" and the original on anything else.
EvalResult run_self_reflection(Backend& backend, const EvalRecord& rec, std::span<const PngBytes> annotated,
                               std::span<const PngBytes> original, const RetryPolicy& policy);

EvalResult run_reemphasize(Backend& backend, const EvalRecord& rec, std::span<const PngBytes> annotated,
                           const RetryPolicy& policy);

enum class EvalMode { plain, annotated, reflect, reemphasize, ensemble };
const char* to_string(EvalMode mode);
EvalMode eval_mode_from_string(const std::string& s);

/// Images handed to the backend for one record.
struct RecordImages {
    std::vector<PngBytes> original;
    std::vector<PngBytes> annotated;
    std::vector<PngBytes> ensemble;
};

using ImageProvider = std::function<RecordImages(const EvalRecord&, EvalMode)>;

/// Reads files only: annotated images come from the record's "annotated" list,
/// ensemble uses that list when present and the record's images otherwise.
ImageProvider file_image_provider();

/// Annotates the record's first image on the fly with the clip source (and,
/// for ensemble, also the gen source). The query is the record's question.
ImageProvider model_image_provider(const Model& model, const PipelineConfig& cfg);

struct EvalOptions {
    EvalMode mode = EvalMode::plain;
    int workers = 4;
    RetryPolicy retry;
    bool record_latency = false;
};

/// Evaluates every record with a bounded worker pool. Results come back in
/// manifest order regardless of completion order.
std::vector<EvalResult> run_evaluation(Backend& backend, std::span<const EvalRecord> records,
                                       const ImageProvider& images, const EvalOptions& opts);

/// JSON-lines, one EvalResult per line, then {"accuracy": a, "n": n}.
std::string results_jsonl(std::span<const EvalResult> results, double accuracy, bool with_latency);

}  // namespace attnprompt
