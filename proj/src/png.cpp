#include "attnprompt/png.hpp"

#include <cstring>
#include <string>

#include <zlib.h>

#include "attnprompt/error.hpp"
#include "attnprompt/weights.hpp"

namespace attnprompt {

namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4], std::span<const std::uint8_t> data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

[[noreturn]] void corrupt(const std::string& why) { fail(ErrorKind::input_format, "PNG: " + why); }

std::vector<std::uint8_t> inflate_all(std::span<const std::uint8_t> in, std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    z_stream zs{};
    if (inflateInit(&zs) != Z_OK) corrupt("zlib init failed");
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    const std::size_t produced = zs.total_out;
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || produced != expected) corrupt("corrupt or truncated image data");
    return out;
}

std::vector<std::uint8_t> deflate_all(std::span<const std::uint8_t> in) {
    uLongf bound = compressBound(static_cast<uLong>(in.size()));
    std::vector<std::uint8_t> out(bound);
    if (compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), Z_DEFAULT_COMPRESSION) != Z_OK) {
        fail(ErrorKind::input_format, "PNG: compression failed");
    }
    out.resize(bound);
    return out;
}

std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

void unfilter(std::vector<std::uint8_t>& raw, std::size_t height, std::size_t stride, std::size_t bpp) {
    std::vector<std::uint8_t> prev(stride, 0);
    for (std::size_t y = 0; y < height; ++y) {
        std::uint8_t* line = raw.data() + y * (stride + 1);
        const std::uint8_t type = line[0];
        std::uint8_t* cur = line + 1;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= bpp ? cur[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= bpp ? prev[i - bpp] : 0;
            int add = 0;
            switch (type) {
                case 0: add = 0; break;
                case 1: add = a; break;
                case 2: add = b; break;
                case 3: add = (a + b) / 2; break;
                case 4: add = paeth(a, b, c); break;
                default: corrupt("unknown filter type " + std::to_string(type));
            }
            cur[i] = static_cast<std::uint8_t>(cur[i] + add);
        }
        std::memcpy(prev.data(), cur, stride);
    }
}

}  // namespace

Image decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) corrupt("bad signature");
    std::size_t pos = 8;
    std::uint32_t width = 0, height = 0;
    int depth = 0, color = -1;
    bool have_header = false, have_end = false;
    std::vector<std::uint8_t> idat;
    while (pos + 12 <= bytes.size()) {
        const std::uint32_t len = read_be32(bytes.data() + pos);
        if (len > bytes.size() - pos - 12) corrupt("truncated chunk");
        const std::uint8_t* type = bytes.data() + pos + 4;
        const std::uint8_t* data = type + 4;
        const auto crc = crc32(0L, type, len + 4);
        if (crc != read_be32(data + len)) corrupt("chunk CRC mismatch");
        const std::string name(reinterpret_cast<const char*>(type), 4);
        if (name == "IHDR") {
            if (len != 13) corrupt("bad IHDR length");
            width = read_be32(data);
            height = read_be32(data + 4);
            depth = data[8];
            color = data[9];
            if (data[10] != 0 || data[11] != 0) corrupt("unsupported compression or filter method");
            if (data[12] != 0) corrupt("interlaced images are not supported");
            have_header = true;
        } else if (name == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (name == "IEND") {
            have_end = true;
            break;
        } else if (name == "PLTE") {
            corrupt("palette images are not supported");
        }
        pos += 12 + len;
    }
    if (!have_header) corrupt("missing IHDR");
    if (!have_end) corrupt("missing IEND");
    if (depth != 8) corrupt("unsupported bit depth " + std::to_string(depth) + " (only 8-bit is supported)");
    std::size_t channels = 0;
    switch (color) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: corrupt("unsupported color type " + std::to_string(color));
    }
    if (width == 0 || height == 0 || width > (1u << 15) || height > (1u << 15)) corrupt("unsupported dimensions");

    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    auto raw = inflate_all(idat, (stride + 1) * height);
    unfilter(raw, height, stride, channels);

    Image img(static_cast<int>(width), static_cast<int>(height));
    for (std::size_t y = 0; y < height; ++y) {
        const std::uint8_t* line = raw.data() + y * (stride + 1) + 1;
        for (std::size_t x = 0; x < width; ++x) {
            const std::uint8_t* px = line + x * channels;
            for (int c = 0; c < 3; ++c) {
                img.at(static_cast<int>(x), static_cast<int>(y), c) = channels >= 3 ? px[c] : px[0];
            }
        }
    }
    return img;
}

namespace {

std::vector<std::uint8_t> encode_raw(int width, int height, int color, std::size_t channels,
                                     std::span<const std::uint8_t> samples) {
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * height);
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const auto row = samples.subspan(static_cast<std::size_t>(y) * stride, stride);
        raw.insert(raw.end(), row.begin(), row.end());
    }

    std::vector<std::uint8_t> out(std::begin(kSignature), std::end(kSignature));
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(width));
    put_be32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.insert(ihdr.end(), {8, static_cast<std::uint8_t>(color), 0, 0, 0});
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", deflate_all(raw));
    put_chunk(out, "IEND", {});
    return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
    if (img.samples.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
        fail(ErrorKind::input_format, "image sample count does not match its dimensions");
    }
    return encode_raw(img.width, img.height, 2, 3, img.samples);
}

std::vector<std::uint8_t> encode_gray_png(int width, int height, std::span<const std::uint8_t> samples) {
    if (width <= 0 || height <= 0 || samples.size() != static_cast<std::size_t>(width) * height) {
        fail(ErrorKind::input_format, "grayscale sample count does not match its dimensions");
    }
    return encode_raw(width, height, 0, 1, samples);
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

void write_png(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, encode_png(img)); }

}  // namespace attnprompt
