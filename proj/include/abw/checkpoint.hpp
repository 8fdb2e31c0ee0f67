#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "abw/common.hpp"

namespace abw {

// Binary container: 8-byte magic, little-endian u64 header length, JSON
// header, then raw little-endian doubles for each array in header order.
// Checkpoints and draw stores share this format.
inline constexpr char kContainerMagic[9] = "ABWFLOW1";

struct Container {
    nlohmann::json header;
    std::vector<std::vector<double>> arrays;
};

inline void write_container(const std::string& path, const nlohmann::json& header,
                            const std::vector<const std::vector<double>*>& arrays) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NumericFailure("cannot open for writing: " + path);
    out.write(kContainerMagic, 8);
    std::string header_str = header.dump();
    uint64_t len = header_str.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    out.write(lenbuf, 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto* arr : arrays)
        out.write(reinterpret_cast<const char*>(arr->data()),
                  static_cast<std::streamsize>(arr->size() * sizeof(double)));
    if (!out) throw NumericFailure("write failed: " + path);
}

inline Container read_container(const std::string& path,
                                const std::string& expected_kind = "") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NumericFailure("cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kContainerMagic, 8) != 0)
        throw NumericFailure("bad container magic in " + path);
    char lenbuf[8];
    in.read(lenbuf, 8);
    uint64_t len = 0;
    for (int i = 0; i < 8; ++i)
        len |= static_cast<uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
    std::string header_str(len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(len));
    if (!in) throw NumericFailure("truncated container header in " + path);
    Container c;
    c.header = nlohmann::json::parse(header_str);
    if (!expected_kind.empty() && c.header.value("kind", "") != expected_kind)
        throw NumericFailure("container kind mismatch in " + path + ": expected " +
                             expected_kind);
    for (const auto& entry : c.header.at("arrays")) {
        std::size_t count = entry.at("count").get<std::size_t>();
        std::vector<double> data(count);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw NumericFailure("truncated array data in " + path);
        c.arrays.push_back(std::move(data));
    }
    // no trailing garbage
    char extra;
    in.read(&extra, 1);
    if (!in.eof()) throw NumericFailure("trailing bytes in container " + path);
    return c;
}

}  // namespace abw
