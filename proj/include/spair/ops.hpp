// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_OPS_HPP
#define SPAIR_OPS_HPP

#include <algorithm>
#include <cmath>

#include "spair/tensor.hpp"

namespace spair {

inline constexpr double kStatsEps = 1e-5;
inline constexpr double kLeakySlope = 0.2;

// Per-sample, per-channel mean and std over mask-selected pixels,
// each returned as an (n, c, 1, 1) tensor.
template <typename T>
struct ChannelStats {
    Tensor4<T> mean;
    Tensor4<T> stdev;
};

// std = sqrt(E[Q^2] - E[Q]^2 + eps), expectations over pixels with M = 1.
template <typename T>
ChannelStats<T> masked_stats(const Tensor4<T>& q, const Mask<T>& m, double eps = kStatsEps) {
    require(q.n == m.n && q.h == m.h && q.w == m.w,
            "masked_stats: mask shape mismatch " + q.shape_str());
    ChannelStats<T> st{Tensor4<T>(q.n, q.c, 1, 1), Tensor4<T>(q.n, q.c, 1, 1)};
    const size_t hw = size_t(q.h) * q.w;
    for (int i = 0; i < q.n; ++i) {
        const T* mp = m.plane(i);
        T cnt = 0;
        for (size_t t = 0; t < hw; ++t) cnt += mp[t];
        require(cnt > 0, "masked_stats: mask selects no pixels in sample " + std::to_string(i));
        for (int j = 0; j < q.c; ++j) {
            const T* qp = q.plane(i, j);
            T s1 = 0, s2 = 0;
            for (size_t t = 0; t < hw; ++t) {
                if (mp[t] != T(0)) {
                    s1 += qp[t];
                    s2 += qp[t] * qp[t];
                }
            }
            const T mean = s1 / cnt;
            st.mean.at(i, j, 0, 0) = mean;
            st.stdev.at(i, j, 0, 0) = std::sqrt(s2 / cnt - mean * mean + T(eps));
        }
    }
    return st;
}

// Numerically stable softmax over a contiguous score vector.
template <typename T>
void softmax_inplace(T* s, int len) {
    T mx = s[0];
    for (int i = 1; i < len; ++i) mx = std::max(mx, s[i]);
    T z = 0;
    for (int i = 0; i < len; ++i) {
        s[i] = std::exp(s[i] - mx);
        z += s[i];
    }
    for (int i = 0; i < len; ++i) s[i] /= z;
}

template <typename T>
std::vector<T> softmax(std::vector<T> s) {
    require(!s.empty(), "softmax: empty input");
    softmax_inplace(s.data(), int(s.size()));
    return s;
}

// Max-pool downsampling: a low-res pixel is degraded if any pixel of its
// factor x factor block is.
template <typename T>
Mask<T> downsample_mask(const Mask<T>& m, int factor) {
    require(factor >= 1, "downsample_mask: factor must be >= 1");
    require(m.h % factor == 0 && m.w % factor == 0,
            "downsample_mask: dims must be divisible by factor");
    Mask<T> out(m.n, m.h / factor, m.w / factor);
    for (int i = 0; i < m.n; ++i)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                T v = 0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        v = std::max(v, m.at(i, y * factor + dy, x * factor + dx));
                out.at(i, y, x) = v;
            }
    return out;
}

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& a, double slope = kLeakySlope) {
    return unary_map(a, [s = T(slope)](T x) { return x > T(0) ? x : s * x; });
}

template <typename T>
Tensor4<T> logistic(const Tensor4<T>& a) {
    return unary_map(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); });
}

// Probability map (n, 1, h, w) -> binary mask; strictly-greater threshold.
template <typename T>
Mask<T> threshold_mask(const Tensor4<T>& prob, double thr = 0.5) {
    require(prob.c == 1, "threshold_mask: expected a single-channel map");
    Mask<T> m(prob.n, prob.h, prob.w);
    for (size_t i = 0; i < prob.v.size(); ++i) m.v[i] = prob.v[i] > T(thr) ? T(1) : T(0);
    return m;
}

template <typename T>
Mask<T> invert_mask(const Mask<T>& m) {
    Mask<T> out(m.n, m.h, m.w);
    for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = T(1) - m.v[i];
    return out;
}

} // namespace spair

#endif
