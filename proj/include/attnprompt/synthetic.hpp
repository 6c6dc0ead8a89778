#pragma once

#include <cstdint>
#include <random>

#include "attnprompt/config.hpp"
#include "attnprompt/image.hpp"
#include "attnprompt/weights.hpp"

namespace attnprompt {

/// Desk-scale model used by tests and the CLI's fixture commands.
struct SyntheticSpec {
    std::uint32_t seed = 42;
    int layers = 4;
    int heads = 2;
    int d_model = 32;
    int patch_grid = 4;
    int patch_side = 16;
    int embed_dim = 16;
    bool with_text = true;
    bool with_decoder = true;
};

/// Byte-level vocabulary of the synthetic text tower and decoder: 0..255 plus bos/eos.
inline constexpr int kByteBos = 256;
inline constexpr int kByteEos = 257;
inline constexpr int kByteVocab = 258;

ModelConfig synthetic_config(const SyntheticSpec& spec);

/// Weights uniform in [-0.1, 0.1] drawn from mt19937(seed), filled in sorted-name
/// order; layer-norm scales are 1 + U(-0.1, 0.1). The config is stored in the metadata.
WeightStore make_synthetic_model(const SyntheticSpec& spec = {});

/// Procedural test picture: vertical gradient, a red disk and a blue square.
Image make_fixture_image(int side = 64);

/// Random image from a seed; used by property tests.
Image make_random_image(int width, int height, std::uint32_t seed);

/// Uniform [-scale, scale] floats from the raw mt19937 stream. The engine output is
/// fixed by the standard, the std distributions are not, so the mapping is done here.
class PortableUniform {
public:
    explicit PortableUniform(std::uint32_t seed) : engine_(seed) {}
    float next(float scale);
    std::uint32_t next_u32() { return static_cast<std::uint32_t>(engine_()); }

private:
    std::mt19937 engine_;
};

}  // namespace attnprompt
