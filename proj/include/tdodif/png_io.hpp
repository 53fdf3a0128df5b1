#pragma once

// Minimal PNG codec backed by zlib. Supports what the pipeline stores:
// 8-bit grayscale, 8-bit paletted, 16-bit grayscale, 8-bit RGB. No interlace.

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tdodif/errors.hpp"

namespace tdodif::png {

struct Image {
    int width = 0;
    int height = 0;
    int bit_depth = 0;   // 8 or 16
    int channels = 0;    // 1 (gray or palette index) or 3 (RGB)
    bool paletted = false;
    std::vector<uint8_t> data;  // defiltered scanline bytes, 16-bit stored big-endian
    std::vector<std::array<uint8_t, 3>> palette;

    uint16_t gray16(int x, int y) const {
        size_t i = (size_t(y) * width + x) * 2;
        return uint16_t(data[i]) << 8 | data[i + 1];
    }
};

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

inline uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 | p[3];
}

inline void write_chunk(std::vector<uint8_t>& out, const char type[4],
                        const std::vector<uint8_t>& payload) {
    put_u32(out, uint32_t(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = uint32_t(::crc32(0L, out.data() + start, uInt(out.size() - start)));
    put_u32(out, crc);
}

inline std::vector<uint8_t> zlib_compress(const std::vector<uint8_t>& in) {
    uLongf bound = compressBound(uLong(in.size()));
    std::vector<uint8_t> out(bound);
    if (compress2(out.data(), &bound, in.data(), uLong(in.size()), 6) != Z_OK)
        throw IoError("PNG: zlib compression failed");
    out.resize(bound);
    return out;
}

inline std::vector<uint8_t> zlib_decompress(const std::vector<uint8_t>& in, size_t expected) {
    std::vector<uint8_t> out(expected);
    uLongf len = uLongf(expected);
    int rc = uncompress(out.data(), &len, in.data(), uLong(in.size()));
    if (rc != Z_OK || len != expected) throw FormatError("PNG: corrupt IDAT stream");
    return out;
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

/// Encode with filter type 0 on every scanline. `data` is raw scanline bytes
/// (16-bit samples big-endian), length = width*height*channels*(bit_depth/8).
inline void write(const std::string& path, int width, int height, int channels,
                  int bit_depth, const std::vector<uint8_t>& data) {
    const size_t bpp = size_t(channels) * (bit_depth / 8);
    const size_t stride = size_t(width) * bpp;
    if (data.size() != stride * height) throw ConfigError("PNG write: data size mismatch");

    std::vector<uint8_t> raw;
    raw.reserve((stride + 1) * height);
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), data.begin() + y * stride, data.begin() + (y + 1) * stride);
    }

    std::vector<uint8_t> ihdr;
    detail::put_u32(ihdr, uint32_t(width));
    detail::put_u32(ihdr, uint32_t(height));
    ihdr.push_back(uint8_t(bit_depth));
    ihdr.push_back(channels == 3 ? 2 : 0);  // color type
    ihdr.push_back(0);                      // compression
    ihdr.push_back(0);                      // filter method
    ihdr.push_back(0);                      // no interlace

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    detail::write_chunk(out, "IHDR", ihdr);
    detail::write_chunk(out, "IDAT", detail::zlib_compress(raw));
    detail::write_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline Image read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());

    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw FormatError("not a PNG file: " + path);

    Image img;
    int color_type = -1;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        uint32_t len = detail::get_u32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw FormatError("PNG: truncated chunk in " + path);
        std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
        const uint8_t* payload = &bytes[pos + 8];
        if (type == "IHDR") {
            if (len != 13) throw FormatError("PNG: bad IHDR length");
            img.width = int(detail::get_u32(payload));
            img.height = int(detail::get_u32(payload + 4));
            img.bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw FormatError("PNG: interlaced images unsupported");
            if (img.bit_depth != 8 && img.bit_depth != 16)
                throw FormatError("PNG: unsupported bit depth " + std::to_string(img.bit_depth));
            switch (color_type) {
                case 0: img.channels = 1; break;
                case 2: img.channels = 3; break;
                case 3:
                    img.channels = 1;
                    img.paletted = true;
                    if (img.bit_depth != 8)
                        throw FormatError("PNG: only 8-bit palettes supported");
                    break;
                default:
                    throw FormatError("PNG: unsupported color type " + std::to_string(color_type));
            }
        } else if (type == "PLTE") {
            for (uint32_t i = 0; i + 2 < len; i += 3)
                img.palette.push_back({payload[i], payload[i + 1], payload[i + 2]});
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (img.width < 1 || img.height < 1) throw FormatError("PNG: missing IHDR in " + path);

    const size_t bpp = size_t(img.channels) * (img.bit_depth / 8);
    const size_t stride = size_t(img.width) * bpp;
    std::vector<uint8_t> raw = detail::zlib_decompress(idat, (stride + 1) * img.height);

    img.data.assign(stride * img.height, 0);
    for (int y = 0; y < img.height; ++y) {
        uint8_t filter = raw[y * (stride + 1)];
        const uint8_t* src = &raw[y * (stride + 1) + 1];
        uint8_t* cur = &img.data[y * stride];
        const uint8_t* up = y > 0 ? &img.data[(y - 1) * stride] : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= bpp ? cur[i - bpp] : 0;
            int b = up ? up[i] : 0;
            int c = (up && i >= bpp) ? up[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: throw FormatError("PNG: unknown filter type");
            }
            cur[i] = uint8_t(v);
        }
    }
    return img;
}

}  // namespace tdodif::png
