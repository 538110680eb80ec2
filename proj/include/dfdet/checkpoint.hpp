#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dfdet/common.hpp"
#include "dfdet/tensor.hpp"

// Checkpoint container: named, shaped parameter arrays plus a version tag and
// a config echo string. Values are stored as raw little-endian scalars, so a
// save/load round trip is value-exact.
//
// Layout: magic "DFCK" | u32 version | u64 config_len | config bytes |
//         u64 entry_count | entries. Entry: u64 name_len | name | u8 dtype
//         (0 = f32, 1 = f64) | u32 ndim | u64 dims[] | raw values.

namespace dfdet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckptdetail {

template <class T>
constexpr std::uint8_t dtype_tag();
template <>
constexpr std::uint8_t dtype_tag<float>() {
    return 0;
}
template <>
constexpr std::uint8_t dtype_tag<double>() {
    return 1;
}

template <class V>
void write_pod(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}

}  // namespace ckptdetail

template <class T>
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string config_echo;  // JSON text of the producing config
    std::vector<std::pair<std::string, Tensor<T>>> entries;

    const Tensor<T>* find(const std::string& name) const {
        for (const auto& [n, t] : entries)
            if (n == name) return &t;
        return nullptr;
    }

    std::uint64_t value_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& [n, t] : entries) {
            h = fnv1a(n.data(), n.size(), h);
            h = fnv1a(t.data(), t.size() * sizeof(T), h);
        }
        return h;
    }
};

template <class T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for write: " + path);
    os.write("DFCK", 4);
    ckptdetail::write_pod(os, ck.version);
    ckptdetail::write_pod(os, static_cast<std::uint64_t>(ck.config_echo.size()));
    os.write(ck.config_echo.data(), static_cast<std::streamsize>(ck.config_echo.size()));
    ckptdetail::write_pod(os, static_cast<std::uint64_t>(ck.entries.size()));
    for (const auto& [name, t] : ck.entries) {
        ckptdetail::write_pod(os, static_cast<std::uint64_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        ckptdetail::write_pod(os, ckptdetail::dtype_tag<T>());
        ckptdetail::write_pod(os, static_cast<std::uint32_t>(t.ndim()));
        for (std::size_t d : t.shape()) ckptdetail::write_pod(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DFCK", 4) != 0) throw IoError("checkpoint: bad magic in " + path);
    Checkpoint<T> ck;
    ck.version = ckptdetail::read_pod<std::uint32_t>(is);
    if (ck.version != kCheckpointVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(ck.version));
    const auto cfg_len = ckptdetail::read_pod<std::uint64_t>(is);
    ck.config_echo.resize(cfg_len);
    is.read(ck.config_echo.data(), static_cast<std::streamsize>(cfg_len));
    const auto count = ckptdetail::read_pod<std::uint64_t>(is);
    for (std::uint64_t e = 0; e < count; ++e) {
        const auto name_len = ckptdetail::read_pod<std::uint64_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        const auto tag = ckptdetail::read_pod<std::uint8_t>(is);
        if (tag != ckptdetail::dtype_tag<T>())
            throw IoError("checkpoint: dtype mismatch for entry '" + name + "' in " + path);
        const auto ndim = ckptdetail::read_pod<std::uint32_t>(is);
        Shape shape(ndim);
        for (auto& d : shape) d = ckptdetail::read_pod<std::uint64_t>(is);
        Tensor<T> t(shape);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
        if (!is) throw IoError("checkpoint: truncated entry '" + name + "' in " + path);
        ck.entries.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

}  // namespace dfdet
