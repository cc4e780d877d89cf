#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairdiff/autodiff.hpp"
#include "fairdiff/tensor.hpp"

namespace fairdiff {

// Parameter container, format "FDNN1":
//   magic "FDNN1" | u32 record count | records
//   record: u32 name length | name bytes | u32 rank | u32 extents[rank] | f64 values
// All integers and floats little-endian.

namespace detail {
inline void put_u32(std::ostream& os, uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                          static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated file");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}
inline void put_f64(std::ostream& os, double x) {
    uint64_t u;
    std::memcpy(&u, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint: truncated file");
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= uint64_t(b[i]) << (8 * i);
    double x;
    std::memcpy(&x, &u, 8);
    return x;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write("FDNN1", 5);
    detail::put_u32(os, uint32_t(params.size()));
    for (const Parameter* p : params) {
        detail::put_u32(os, uint32_t(p->name.size()));
        os.write(p->name.data(), std::streamsize(p->name.size()));
        detail::put_u32(os, uint32_t(p->value.rank()));
        for (size_t e : p->value.shape) detail::put_u32(os, uint32_t(e));
        for (double x : p->value.v) detail::put_f64(os, x);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[5];
    if (!is.read(magic, 5) || std::memcmp(magic, "FDNN1", 5) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint32_t count = detail::get_u32(is);
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t nlen = detail::get_u32(is);
        std::string name(nlen, '\0');
        if (!is.read(name.data(), nlen)) throw std::runtime_error("checkpoint: truncated file");
        const uint32_t rank = detail::get_u32(is);
        std::vector<size_t> shape(rank);
        for (uint32_t r = 0; r < rank; ++r) shape[r] = detail::get_u32(is);
        Tensor t(shape);
        for (size_t j = 0; j < t.numel(); ++j) t.v[j] = detail::get_f64(is);
        if (out.count(name)) throw std::runtime_error("checkpoint: duplicate parameter '" + name + "'");
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

/// Load values into an existing parameter list; every parameter must be
/// present with a matching shape.
inline void restore_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
    auto loaded = load_checkpoint(path);
    for (Parameter* p : params) {
        auto it = loaded.find(p->name);
        if (it == loaded.end()) throw std::runtime_error("checkpoint: missing parameter '" + p->name + "' in " + path);
        if (it->second.shape != p->value.shape)
            throw std::runtime_error("checkpoint: shape mismatch for '" + p->name + "': file " + it->second.shape_str() +
                                     " vs model " + p->value.shape_str());
        p->value = it->second;
        p->zero_grad();
    }
}

}  // namespace fairdiff
