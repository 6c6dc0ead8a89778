#include "attnprompt/attribution_io.hpp"

#include <cmath>
#include <fstream>

#include "attnprompt/error.hpp"

namespace attnprompt {

nlohmann::json map_to_json(const AttributionMap& m) {
    return {{"grid_p", m.grid_p}, {"kind", to_string(m.kind)}, {"values", m.values}};
}

AttributionMap map_from_json(const nlohmann::json& j) {
    AttributionMap m;
    try {
        m.grid_p = j.at("grid_p").get<int>();
        m.kind = map_kind_from_string(j.at("kind").get<std::string>());
        m.values = j.at("values").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::input_format, std::string("malformed attribution map: ") + e.what());
    }
    if (m.grid_p < 1 || m.values.size() != static_cast<std::size_t>(m.grid_p) * m.grid_p) {
        fail(ErrorKind::input_format, "attribution map value count does not match grid_p^2");
    }
    return m;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::input_format, "cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::input_format, "malformed JSON in '" + path.string() + "': " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::input_format, "cannot write '" + path.string() + "'");
    out << j.dump() << '\n';
}

void write_map(const std::filesystem::path& path, const AttributionMap& m) { write_json_file(path, map_to_json(m)); }

AttributionMap read_map(const std::filesystem::path& path) { return map_from_json(read_json_file(path)); }

TextFeature text_feature_from_json(const nlohmann::json& j) {
    TextFeature f;
    try {
        f.query = j.value("query", std::string());
        auto values = j.at("feature").get<std::vector<float>>();
        f.feature = Tensor::vector(std::move(values));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::input_format, std::string("malformed text feature: ") + e.what());
    }
    if (f.feature.empty()) fail(ErrorKind::input_format, "text feature is empty");
    return f;
}

nlohmann::json text_feature_to_json(const TextFeature& f) {
    return {{"query", f.query}, {"feature", f.feature.data()}};
}

TextFeature read_text_feature(const std::filesystem::path& path) {
    return text_feature_from_json(read_json_file(path));
}

void write_text_feature(const std::filesystem::path& path, const TextFeature& f) {
    write_json_file(path, text_feature_to_json(f));
}

}  // namespace attnprompt
