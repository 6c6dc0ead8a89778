#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "attnprompt/config.hpp"
#include "attnprompt/image.hpp"
#include "attnprompt/tensor.hpp"
#include "attnprompt/weights.hpp"

namespace attnprompt {

/// Per-token statistics of the final layer norm, captured from the actual forward pass.
struct FrozenNorm {
    std::vector<double> mean;
    std::vector<double> variance;
};

/// Everything the cls decomposition needs from one vision-encoder forward.
/// Layer indices are 0-based here; `attn[l][h]` is T x T and row-stochastic,
/// `values[l][h]` is T x d_head.
struct ResidualTrace {
    int layers = 0;
    int heads = 0;
    int tokens = 0;
    Tensor z0_cls;
    std::vector<Tensor> msa_cls;
    std::vector<Tensor> mlp_cls;
    std::vector<std::vector<Tensor>> attn;
    std::vector<std::vector<Tensor>> values;
    Tensor last_tokens;  // Z^L, T x d_model, before the final norm
    FrozenNorm frozen_ln;

    std::span<const float> pre_norm_cls() const { return last_tokens.row(0); }
};

struct VisionOutput {
    Tensor image_feature;  // embed_dim, not normalized
    ResidualTrace trace;
};

VisionOutput forward_vision(const Image& img, const ModelConfig& cfg, const WeightStore& w);

/// Unit-norm text feature from the text tower. Token ids must be < vocab_size
/// and the sequence must fit the context.
Tensor embed_text(std::span<const int> tokens, const ModelConfig& cfg, const WeightStore& w);

/// Attention rows recorded while decoding. `rows[m][l][h]` is the attention of
/// the position that predicted generated token m, over every visible position
/// (length context_length + m).
struct GenerationTrace {
    std::vector<int> generated;
    std::vector<std::vector<std::vector<Tensor>>> rows;
    std::size_t image_start = 0;
    std::size_t image_length = 0;
    std::size_t text_count = 0;
    std::size_t context_length = 0;
    int layers = 0;
    int heads = 0;

    std::size_t steps() const { return generated.size(); }
};

/// Maps the vision encoder's last-layer patch tokens (cls excluded) into decoder space.
Tensor project_image_tokens(const ResidualTrace& trace, const ModelConfig& cfg, const WeightStore& w);

/// Greedy decoding over the context [image_tokens || text_tokens]; stops after
/// max_steps tokens or once the end token has been emitted.
GenerationTrace forward_decoder(std::span<const int> text_tokens, const Tensor& image_tokens, const ModelConfig& cfg,
                                const WeightStore& w, int max_steps);

/// Byte-level toy tokenizer: [bos] bytes... [eos]. A negative `eos` omits the
/// end token. Truncates the byte run so the result has at most max_len ids.
std::vector<int> byte_tokenize(std::string_view text, int bos, int eos, std::size_t max_len);

/// A loaded, validated model. Immutable after construction.
struct Model {
    ModelConfig config;
    WeightStore weights;

    static Model from_store(WeightStore store);
    static Model load(const std::filesystem::path& path);
};

}  // namespace attnprompt
