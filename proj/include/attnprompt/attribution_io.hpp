#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "attnprompt/attribution.hpp"
#include "attnprompt/tensor.hpp"

namespace attnprompt {

/// {"grid_p": int, "kind": string, "values": [row-major floats]}
nlohmann::json map_to_json(const AttributionMap& m);
AttributionMap map_from_json(const nlohmann::json& j);

void write_map(const std::filesystem::path& path, const AttributionMap& m);
AttributionMap read_map(const std::filesystem::path& path);

/// Precomputed text feature: {"query": string, "feature": [floats]}.
struct TextFeature {
    std::string query;
    Tensor feature;
};

TextFeature text_feature_from_json(const nlohmann::json& j);
nlohmann::json text_feature_to_json(const TextFeature& f);
TextFeature read_text_feature(const std::filesystem::path& path);
void write_text_feature(const std::filesystem::path& path, const TextFeature& f);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace attnprompt
