#include "attnprompt/weights.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "attnprompt/error.hpp"

namespace attnprompt {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

void WeightStore::insert(std::string name, Tensor tensor) {
    if (name == "__metadata__") fail(ErrorKind::usage, "reserved tensor name __metadata__");
    tensors_.insert_or_assign(std::move(name), std::move(tensor));
}

const Tensor& WeightStore::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) fail(ErrorKind::input_format, "missing tensor '" + name + "'");
    return it->second;
}

Tensor& WeightStore::mutable_get(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) fail(ErrorKind::input_format, "missing tensor '" + name + "'");
    return it->second;
}

const Tensor& WeightStore::require(const std::string& name, const Shape& expected) const {
    const Tensor& t = get(name);
    if (t.shape() != expected) {
        fail(ErrorKind::input_format, "tensor '" + name + "' has shape " + shape_string(t.shape()) +
                                          ", expected " + shape_string(expected));
    }
    return t;
}

namespace {

struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t bytes = 0;
};

}  // namespace

WeightStore load_weights(std::span<const std::uint8_t> bytes) {
    constexpr std::size_t prefix = 4 + 1 + 4;
    if (bytes.size() < prefix || std::memcmp(bytes.data(), kContainerMagic, 4) != 0) {
        fail(ErrorKind::input_format, "not an APIW container (bad magic)");
    }
    if (bytes[4] != kContainerVersion) {
        fail(ErrorKind::input_format, "unsupported APIW version " + std::to_string(bytes[4]));
    }
    std::uint32_t header_len = 0;
    for (int i = 0; i < 4; ++i) header_len |= static_cast<std::uint32_t>(bytes[5 + i]) << (8 * i);
    if (bytes.size() - prefix < header_len) fail(ErrorKind::input_format, "truncated APIW header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + prefix, bytes.begin() + prefix + header_len);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::input_format, std::string("malformed APIW header: ") + e.what());
    }
    if (!header.is_object()) fail(ErrorKind::input_format, "APIW header must be a JSON object");

    const auto payload = bytes.subspan(prefix + header_len);
    WeightStore store;
    std::vector<Entry> entries;
    for (const auto& [name, desc] : header.items()) {
        if (name == "__metadata__") {
            store.set_metadata(desc);
            continue;
        }
        try {
            if (desc.at("dtype").get<std::string>() != "f32") {
                fail(ErrorKind::input_format, "tensor '" + name + "' has unsupported dtype");
            }
            Entry e;
            e.name = name;
            e.shape = desc.at("shape").get<Shape>();
            e.offset = desc.at("offset").get<std::uint64_t>();
            e.bytes = shape_numel(e.shape) * sizeof(float);
            entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorKind::input_format, "malformed header entry '" + name + "': " + ex.what());
        }
    }

    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
    std::uint64_t expected_offset = 0;
    for (const Entry& e : entries) {
        if (e.offset + e.bytes > payload.size()) {
            fail(ErrorKind::input_format, "truncated data: tensor '" + e.name + "' extends past end of file");
        }
        if (e.offset != expected_offset) {
            fail(ErrorKind::input_format, "tensor '" + e.name + "' is not contiguous with its predecessor");
        }
        std::vector<float> data(shape_numel(e.shape));
        std::memcpy(data.data(), payload.data() + e.offset, e.bytes);
        store.insert(e.name, Tensor(e.shape, std::move(data)));
        expected_offset = e.offset + e.bytes;
    }
    if (expected_offset != payload.size()) {
        fail(ErrorKind::input_format, "trailing bytes after last tensor in APIW payload");
    }
    return store;
}

std::vector<std::uint8_t> save_weights(const WeightStore& store) {
    nlohmann::json header = nlohmann::json::object();
    std::uint64_t offset = 0;
    // std::map iteration gives a stable, name-sorted payload order.
    for (const auto& [name, t] : store.tensors()) {
        header[name] = {{"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset}};
        offset += t.numel() * sizeof(float);
    }
    if (!store.metadata().empty()) header["__metadata__"] = store.metadata();
    const std::string text = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(9 + text.size() + offset);
    out.insert(out.end(), std::begin(kContainerMagic), std::end(kContainerMagic));
    out.push_back(kContainerVersion);
    const auto len = static_cast<std::uint32_t>(text.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& [name, t] : store.tensors()) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.values().data());
        out.insert(out.end(), p, p + t.numel() * sizeof(float));
    }
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::input_format, "cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::input_format, "cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::input_format, "write failed for '" + path.string() + "'");
}

WeightStore read_weights_file(const std::filesystem::path& path) { return load_weights(read_file_bytes(path)); }

void write_weights_file(const std::filesystem::path& path, const WeightStore& store) {
    write_file_bytes(path, save_weights(store));
}

}  // namespace attnprompt
