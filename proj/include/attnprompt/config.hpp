#pragma once

#include <array>
#include <optional>
#include <string>

#include <json.hpp>

#include "attnprompt/tensor.hpp"
#include "attnprompt/weights.hpp"

namespace attnprompt {

/// Shape of one stack of pre-LN transformer blocks.
struct TowerConfig {
    int layers = 0;
    int heads = 0;
    int d_model = 0;
    int d_head = 0;
    int d_mlp = 0;
    ops::Activation activation = ops::Activation::gelu;
};

struct VisionConfig {
    TowerConfig tower;
    int patch_grid = 0;  // P; the image is split into P x P patches
    int patch_side = 0;
    int image_side = 0;
    bool has_cls = true;
    int embed_dim = 0;  // width of the shared image/text latent space
    std::array<float, 3> pixel_mean{0.48145466f, 0.4578275f, 0.40821073f};
    std::array<float, 3> pixel_std{0.26862954f, 0.26130258f, 0.27577711f};

    int tokens() const { return patch_grid * patch_grid + (has_cls ? 1 : 0); }
};

struct TextConfig {
    TowerConfig tower;
    int vocab_size = 0;
    int context_length = 0;
    int bos_token = 0;
    int eos_token = 0;
};

struct DecoderConfig {
    TowerConfig tower;
    int vocab_size = 0;
    int max_positions = 0;
    int bos_token = 0;
    int eos_token = 0;
};

struct ModelConfig {
    VisionConfig vision;
    std::optional<TextConfig> text;
    std::optional<DecoderConfig> decoder;
    float ln_eps = 1e-5f;

    /// Checks internal consistency (d_model == H * d_head, image_side == P * patch_side, ...).
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Reads the configuration stored under the container's "__metadata__.config".
ModelConfig config_from_store(const WeightStore& store);

/// Every tensor the configuration requires must be present with its exact shape.
void validate_weights(const ModelConfig& cfg, const WeightStore& store);

/// Tensor naming used by the engine. `prefix` is "visual", "text" or "decoder".
namespace names {
std::string block(const std::string& prefix, int layer, const std::string& leaf);
}

}  // namespace attnprompt
