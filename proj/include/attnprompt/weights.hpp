#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnprompt/tensor.hpp"

namespace attnprompt {

/// Named, immutable-after-load parameter map plus free-form container metadata.
///
/// The container ("APIW" v1) is laid out as:
///   "APIW" | 0x01 | u32 LE header length | UTF-8 JSON header | f32 LE payload
/// The header maps each tensor name to {"shape": [...], "dtype": "f32", "offset": n}
/// with offsets in bytes relative to the payload start. Tensors must tile the
/// payload contiguously without overlap. The reserved key "__metadata__" carries
/// an arbitrary JSON object (the model configuration lives there).
class WeightStore {
public:
    void insert(std::string name, Tensor tensor);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    std::size_t size() const noexcept { return tensors_.size(); }

    const Tensor& get(const std::string& name) const;
    Tensor& mutable_get(const std::string& name);
    /// Like get(), but also checks the shape.
    const Tensor& require(const std::string& name, const Shape& expected) const;

    const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }

    const nlohmann::json& metadata() const noexcept { return metadata_; }
    void set_metadata(nlohmann::json meta) { metadata_ = std::move(meta); }

private:
    std::map<std::string, Tensor> tensors_;
    nlohmann::json metadata_ = nlohmann::json::object();
};

inline constexpr char kContainerMagic[4] = {'A', 'P', 'I', 'W'};
inline constexpr std::uint8_t kContainerVersion = 0x01;

WeightStore load_weights(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> save_weights(const WeightStore& store);

WeightStore read_weights_file(const std::filesystem::path& path);
void write_weights_file(const std::filesystem::path& path, const WeightStore& store);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace attnprompt
