// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_CHECKPOINT_HPP
#define SPAIR_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "spair/net.hpp"

namespace spair {

// Parameter-store serialization. Layout, all integers little-endian regardless
// of host: magic "SPTN", version u16, tensor count u32; then per tensor a u16
// path length, the UTF-8 path, a u8 dtype code (1 = f32, 2 = f64), a u8 rank,
// rank u32 dims, and the raw scalar data. Save/load round-trips bitwise.

inline constexpr uint16_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace ckptdetail {

template <typename T>
constexpr uint8_t dtype_code() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "checkpoints hold f32 or f64 tensors");
    return std::is_same_v<T, float> ? 1 : 2;
}

inline void put_bytes(std::string& out, const void* p, size_t len) {
    out.append(static_cast<const char*>(p), len);
}

inline void put_u16(std::string& out, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    put_bytes(out, b, 2);
}

inline void put_u32(std::string& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(out, b, 4);
}

template <typename T>
void put_scalar(std::string& out, T v) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
    U bits;
    std::memcpy(&bits, &v, sizeof v);
    unsigned char b[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    put_bytes(out, b, sizeof(T));
}

struct Reader {
    const std::string& buf;
    const std::string& path;
    size_t at = 0;

    void need(size_t n, const char* what) const {
        if (buf.size() - at < n)
            throw CheckpointError(path + ": truncated checkpoint while reading " +
                                  std::string(what));
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[at++]);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= uint16_t(static_cast<unsigned char>(buf[at++])) << (8 * i);
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(static_cast<unsigned char>(buf[at++])) << (8 * i);
        return v;
    }
    template <typename T>
    T scalar() {
        using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
        U bits = 0;
        for (size_t i = 0; i < sizeof(T); ++i)
            bits |= U(static_cast<unsigned char>(buf[at++])) << (8 * i);
        T v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
};

} // namespace ckptdetail

template <typename T>
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor4<T>>& params) {
    std::string out;
    out.reserve(64);
    out.append("SPTN", 4);
    ckptdetail::put_u16(out, kCheckpointVersion);
    require(params.size() <= 0xffffffffu, "save_checkpoint: too many tensors");
    ckptdetail::put_u32(out, uint32_t(params.size()));
    for (const auto& [name, t] : params) {
        require(name.size() <= 0xffffu, "save_checkpoint: tensor path too long: " + name);
        ckptdetail::put_u16(out, uint16_t(name.size()));
        out.append(name);
        out.push_back(char(ckptdetail::dtype_code<T>()));
        out.push_back(char(4));
        for (int d : {t.n, t.c, t.h, t.w}) ckptdetail::put_u32(out, uint32_t(d));
        for (const T& v : t.v) ckptdetail::put_scalar(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(path + ": cannot open for writing");
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw CheckpointError(path + ": write failed");
}

template <typename T>
std::map<std::string, Tensor4<T>> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(path + ": cannot open for reading");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    ckptdetail::Reader r{buf, path};
    r.need(4, "magic");
    if (buf.compare(0, 4, "SPTN") != 0) throw CheckpointError(path + ": bad magic, not a checkpoint");
    r.at = 4;
    const uint16_t version = r.u16("version");
    if (version != kCheckpointVersion)
        throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = r.u32("tensor count");

    std::map<std::string, Tensor4<T>> params;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t len = r.u16("path length");
        r.need(len, "path");
        std::string name = buf.substr(r.at, len);
        r.at += len;
        const uint8_t dtype = r.u8("dtype");
        if (dtype != 1 && dtype != 2)
            throw CheckpointError(path + ": unknown dtype code " + std::to_string(dtype));
        if (dtype != ckptdetail::dtype_code<T>())
            throw CheckpointError(path + ": dtype mismatch for \"" + name +
                                  "\": stored code " + std::to_string(dtype));
        const uint8_t rank = r.u8("rank");
        if (rank != 4)
            throw CheckpointError(path + ": tensor \"" + name + "\" has rank " +
                                  std::to_string(rank) + ", expected 4");
        uint32_t dims[4];
        for (auto& d : dims) d = r.u32("dim");
        for (auto d : dims)
            if (d == 0 || d > 0x7fffffffu)
                throw CheckpointError(path + ": tensor \"" + name + "\" has invalid dims");
        Tensor4<T> t(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                     static_cast<int>(dims[2]), static_cast<int>(dims[3]));
        r.need(t.v.size() * sizeof(T), "tensor data");
        for (T& v : t.v) v = r.template scalar<T>();
        if (!params.emplace(std::move(name), std::move(t)).second)
            throw CheckpointError(path + ": duplicate tensor path");
    }
    if (r.at != buf.size())
        throw CheckpointError(path + ": trailing bytes after last tensor");
    return params;
}

// Loads a checkpoint into an already-built net, requiring the stored tensors
// to match the net's parameter paths and shapes exactly.
template <typename T>
void load_into(Net<T>& net, const std::string& path) {
    auto loaded = load_checkpoint<T>(path);
    if (loaded.size() != net.params.size())
        throw CheckpointError(path + ": parameter count mismatch: checkpoint has " +
                              std::to_string(loaded.size()) + ", net expects " +
                              std::to_string(net.params.size()));
    for (auto& [name, t] : loaded) {
        auto it = net.params.find(name);
        if (it == net.params.end())
            throw CheckpointError(path + ": unexpected tensor \"" + name + "\"");
        const Tensor4<T>& want = it->second;
        if (t.n != want.n || t.c != want.c || t.h != want.h || t.w != want.w)
            throw CheckpointError(path + ": shape mismatch for \"" + name + "\"");
        it->second = std::move(t);
    }
}

} // namespace spair

#endif
