// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_TENSOR_HPP
#define SPAIR_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "spair/rng.hpp"

namespace spair {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

// Dense NCHW tensor, row-major, contiguous.
template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(size_t(n_) * c_ * h_ * w_, T(0)) {
        require(n_ > 0 && c_ > 0 && h_ > 0 && w_ > 0, "Tensor4: dims must be positive");
    }

    size_t size() const { return v.size(); }
    size_t idx(int i, int j, int y, int x) const { return ((size_t(i) * c + j) * h + y) * w + x; }
    T& at(int i, int j, int y, int x) { return v[idx(i, j, y, x)]; }
    const T& at(int i, int j, int y, int x) const { return v[idx(i, j, y, x)]; }
    T* plane(int i, int j) { return v.data() + (size_t(i) * c + j) * h * w; }
    const T* plane(int i, int j) const { return v.data() + (size_t(i) * c + j) * h * w; }
    T* row(int i, int j, int y) { return plane(i, j) + size_t(y) * w; }
    const T* row(int i, int j, int y) const { return plane(i, j) + size_t(y) * w; }

    bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

// Binary spatial mask, one plane per batch sample, values exactly 0 or 1.
template <typename T>
struct Mask {
    int n = 0, h = 0, w = 0;
    std::vector<T> v;

    Mask() = default;
    Mask(int n_, int h_, int w_) : n(n_), h(h_), w(w_), v(size_t(n_) * h_ * w_, T(0)) {
        require(n_ > 0 && h_ > 0 && w_ > 0, "Mask: dims must be positive");
    }

    size_t size() const { return v.size(); }
    size_t idx(int i, int y, int x) const { return (size_t(i) * h + y) * w + x; }
    T& at(int i, int y, int x) { return v[idx(i, y, x)]; }
    const T& at(int i, int y, int x) const { return v[idx(i, y, x)]; }
    T* plane(int i) { return v.data() + size_t(i) * h * w; }
    const T* plane(int i) const { return v.data() + size_t(i) * h * w; }

    void validate() const {
        for (const T& m : v)
            require(m == T(0) || m == T(1), "Mask: values must be exactly 0 or 1");
    }

    size_t count_ones(int i) const {
        const T* p = plane(i);
        size_t k = 0;
        for (size_t t = 0; t < size_t(h) * w; ++t) k += (p[t] == T(1));
        return k;
    }
};

template <typename T>
Mask<T> make_mask(int n, int h, int w, const std::vector<T>& values) {
    Mask<T> m(n, h, w);
    require(values.size() == m.size(), "make_mask: value count mismatch");
    m.v = values;
    m.validate();
    return m;
}

// --- elementwise helpers ---

template <typename T, typename F>
Tensor4<T> unary_map(const Tensor4<T>& a, F f) {
    Tensor4<T> out = a;
    for (auto& x : out.v) x = f(x);
    return out;
}

template <typename T, typename F>
Tensor4<T> binary_map(const Tensor4<T>& a, const Tensor4<T>& b, F f) {
    require(a.same_shape(b), "binary_map: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor4<T> out = a;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = f(a.v[i], b.v[i]);
    return out;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
    return binary_map(a, b, [](T x, T y) { return x + y; });
}

template <typename T>
Tensor4<T> sub(const Tensor4<T>& a, const Tensor4<T>& b) {
    return binary_map(a, b, [](T x, T y) { return x - y; });
}

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
    return binary_map(a, b, [](T x, T y) { return x * y; });
}

template <typename T>
Tensor4<T> scale(const Tensor4<T>& a, T s) {
    return unary_map(a, [s](T x) { return x * s; });
}

template <typename T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b) {
    require(a.same_shape(b), "add_inplace: shape mismatch");
    for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

template <typename T>
T sum(const Tensor4<T>& a) {
    T s = 0;
    for (const T& x : a.v) s += x;
    return s;
}

template <typename T>
T dot(const Tensor4<T>& a, const Tensor4<T>& b) {
    require(a.same_shape(b), "dot: shape mismatch");
    T s = 0;
    for (size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
    return s;
}

template <typename T>
T max_abs(const Tensor4<T>& a) {
    T m = 0;
    for (const T& x : a.v) m = std::max(m, std::abs(x));
    return m;
}

template <typename T>
void fill_uniform(Tensor4<T>& a, Rng& rng, double lo, double hi) {
    for (auto& x : a.v) x = T(rng.uniform(lo, hi));
}

template <typename T>
Tensor4<T> random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor4<T> t(n, c, h, w);
    fill_uniform(t, rng, lo, hi);
    return t;
}

// Bernoulli mask with the given per-pixel probability of being degraded.
template <typename T>
Mask<T> random_mask(int n, int h, int w, double density, Rng& rng) {
    Mask<T> m(n, h, w);
    for (auto& x : m.v) x = rng.chance(density) ? T(1) : T(0);
    return m;
}

template <typename T, typename U>
Tensor4<T> cast_tensor(const Tensor4<U>& a) {
    Tensor4<T> out(a.n, a.c, a.h, a.w);
    for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = T(a.v[i]);
    return out;
}

template <typename T, typename U>
Mask<T> cast_mask(const Mask<U>& m) {
    Mask<T> out(m.n, m.h, m.w);
    for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = T(m.v[i]);
    return out;
}

} // namespace spair

#endif
