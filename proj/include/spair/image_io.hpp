// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_IMAGE_IO_HPP
#define SPAIR_IMAGE_IO_HPP

#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "spair/ops.hpp"

namespace spair {

// Binary netpbm: PPM (P6) for RGB images, PGM (P5) for single-channel maps.
// Scalars map to bytes by round(clamp(v, 0, 1) * 255) and back by /255, so a
// write-then-read differs from the original by at most 1/255 per channel.

struct ImageIoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace imagedetail {

inline unsigned char to_byte(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return static_cast<unsigned char>(std::lround(v * 255.0));
}

[[noreturn]] inline void fail(const std::string& path, size_t at, const std::string& what) {
    throw ImageIoError(path + ": parse error at byte " + std::to_string(at) + ": " + what);
}

// Cursor over the raw file bytes; netpbm headers allow `#` comments between
// tokens, terminated by the first whitespace byte after the last header field.
struct Cursor {
    const std::vector<char>& buf;
    const std::string& path;
    size_t at = 0;

    bool eof() const { return at >= buf.size(); }
    unsigned char peek() const { return static_cast<unsigned char>(buf[at]); }

    void skip_space_and_comments() {
        while (!eof()) {
            const unsigned char c = peek();
            if (c == '#') {
                while (!eof() && peek() != '\n') ++at;
            } else if (std::isspace(c)) {
                ++at;
            } else {
                break;
            }
        }
    }

    int read_int(const char* name) {
        skip_space_and_comments();
        if (eof() || !std::isdigit(peek())) fail(path, at, std::string("expected ") + name);
        long long v = 0;
        while (!eof() && std::isdigit(peek())) {
            v = v * 10 + (peek() - '0');
            if (v > 1'000'000'000) fail(path, at, std::string(name) + " out of range");
            ++at;
        }
        return int(v);
    }
};

template <typename T>
Tensor4<T> read_netpbm(const std::string& path, char kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError(path + ": cannot open for reading");
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Cursor cur{buf, path};
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != kind)
        fail(path, 0, std::string("expected magic P") + kind);
    cur.at = 2;
    const int w = cur.read_int("width");
    const int h = cur.read_int("height");
    const int maxval = cur.read_int("maxval");
    if (w <= 0 || h <= 0) fail(path, cur.at, "non-positive dimensions");
    if (maxval != 255) fail(path, cur.at, "maxval must be 255, got " + std::to_string(maxval));
    if (cur.eof() || !std::isspace(cur.peek())) fail(path, cur.at, "expected whitespace after maxval");
    ++cur.at; // exactly one whitespace byte separates header and payload

    const int ch = kind == '6' ? 3 : 1;
    const size_t need = size_t(w) * h * ch;
    if (buf.size() - cur.at < need)
        fail(path, buf.size(),
             "truncated payload: need " + std::to_string(need) + " bytes, have " +
                 std::to_string(buf.size() - cur.at));

    Tensor4<T> img(1, ch, h, w);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data()) + cur.at;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c)
                img.v[img.idx(0, c, y, x)] = T(*p++) / T(255);
    return img;
}

template <typename T>
void write_netpbm(const std::string& path, const Tensor4<T>& img, char kind) {
    const int ch = kind == '6' ? 3 : 1;
    require(img.n == 1 && img.c == ch,
            std::string("write P") + kind + ": expected a single image with " +
                std::to_string(ch) + " channel(s)");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageIoError(path + ": cannot open for writing");
    out << 'P' << kind << '\n' << img.w << ' ' << img.h << '\n' << "255\n";
    std::vector<unsigned char> row(size_t(img.w) * ch);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < ch; ++c)
                row[size_t(x) * ch + c] = to_byte(double(img.v[img.idx(0, c, y, x)]));
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!out) throw ImageIoError(path + ": write failed");
}

} // namespace imagedetail

template <typename T>
Tensor4<T> read_ppm(const std::string& path) {
    return imagedetail::read_netpbm<T>(path, '6');
}

template <typename T>
void write_ppm(const std::string& path, const Tensor4<T>& img) {
    imagedetail::write_netpbm(path, img, '6');
}

template <typename T>
Tensor4<T> read_pgm(const std::string& path) {
    return imagedetail::read_netpbm<T>(path, '5');
}

template <typename T>
void write_pgm(const std::string& path, const Tensor4<T>& map) {
    imagedetail::write_netpbm(path, map, '5');
}

// Masks serialize as {0, 255} PGM and survive the round-trip exactly.
template <typename T>
void write_pgm(const std::string& path, const Mask<T>& mask) {
    Tensor4<T> map(1, 1, mask.h, mask.w);
    require(mask.n == 1, "write_pgm: expected a single mask");
    for (size_t i = 0; i < map.v.size(); ++i) map.v[i] = mask.v[i] != T(0) ? T(1) : T(0);
    imagedetail::write_netpbm(path, map, '5');
}

template <typename T>
Mask<T> read_pgm_mask(const std::string& path) {
    return threshold_mask(imagedetail::read_netpbm<T>(path, '5'), 0.5);
}

} // namespace spair

#endif
