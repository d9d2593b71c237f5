#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tfab/errors.hpp"

// Binary container shared by the dataset and weight files:
//   magic (7 ASCII bytes) | header length (u64 little-endian) |
//   header (UTF-8 JSON)   | payload (little-endian f32 blocks)
namespace tfab::io {

using nlohmann::json;

struct Container {
    json header;
    std::vector<char> payload;
};

inline void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void append_f32_le(std::vector<char>& out, float v) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

inline float read_f32_le(const char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= std::uint32_t(static_cast<unsigned char>(p[i])) << (8 * i);
    return std::bit_cast<float>(bits);
}

inline void write_container(const std::string& path, std::string_view magic, const json& header,
                            const std::vector<char>& payload) {
    const std::string text = header.dump();
    std::string head(magic);
    append_u64_le(head, text.size());
    head += text;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    f.write(head.data(), std::streamsize(head.size()));
    f.write(payload.data(), std::streamsize(payload.size()));
    if (!f) throw InputError("write failed for '" + path + "'");
}

inline Container read_container(const std::string& path, std::string_view magic) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < magic.size() + 8 || std::string_view(bytes.data(), magic.size()) != magic) {
        throw FormatError("'" + path + "': missing magic '" + std::string(magic) + "'");
    }
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) {
        len |= std::uint64_t(static_cast<unsigned char>(bytes[magic.size() + std::size_t(i)])) << (8 * i);
    }
    const std::size_t start = magic.size() + 8;
    if (len > bytes.size() - start) throw FormatError("'" + path + "': truncated header");
    Container c;
    try {
        c.header = json::parse(bytes.begin() + std::ptrdiff_t(start), bytes.begin() + std::ptrdiff_t(start + len));
    } catch (const json::exception& e) {
        throw FormatError("'" + path + "': malformed header: " + e.what());
    }
    c.payload.assign(bytes.begin() + std::ptrdiff_t(start + len), bytes.end());
    return c;
}

/// Reads `count` floats at byte `offset` of the payload, checking bounds.
inline std::vector<float> read_block(const Container& c, std::uint64_t offset, std::size_t count,
                                     const std::string& what) {
    if (offset > c.payload.size() || count * 4 > c.payload.size() - offset) {
        throw FormatError(what + ": block at offset " + std::to_string(offset) + " of " + std::to_string(count) +
                          " floats exceeds payload of " + std::to_string(c.payload.size()) + " bytes (truncated?)");
    }
    std::vector<float> out(count);
    const char* p = c.payload.data() + offset;
    for (std::size_t i = 0; i < count; ++i) out[i] = read_f32_le(p + 4 * i);
    return out;
}

template <class T>
T header_field(const json& h, const char* key, const std::string& what) {
    if (!h.contains(key)) throw FormatError(what + ": header lacks '" + key + "'");
    try {
        return h.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(what + ": bad header field '" + key + "': " + e.what());
    }
}

}  // namespace tfab::io
