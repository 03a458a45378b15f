// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_GUIDED_HPP
#define SPAIR_GUIDED_HPP

#include <cstdint>
#include <utility>

#include "spair/conv.hpp"
#include "spair/ops.hpp"

namespace spair {

// Exact multiply-accumulate counter for the mask-guided ops.
struct OpCount {
    uint64_t macs = 0;
};

// --- distortion-guided feature modulation ---
//
// Shifts the distribution of degraded-region features to the clean-region
// one: out = M ? (F - mu_deg) * (sd_cln / sd_deg) + mu_cln : F, with stats
// taken per sample and channel. Samples whose mask selects no degraded or
// no clean pixels pass through unchanged.
template <typename T>
Tensor4<T> sfm_modulate(const Tensor4<T>& f, const Mask<T>& m, double eps = kStatsEps) {
    require(f.n == m.n && f.h == m.h && f.w == m.w, "sfm_modulate: mask shape mismatch");
    Tensor4<T> out = f;
    const size_t hw = size_t(f.h) * f.w;
    for (int i = 0; i < f.n; ++i) {
        const T* mp = m.plane(i);
        size_t nd = m.count_ones(i);
        if (nd == 0 || nd == hw) continue;
        const T cnt_d = T(nd), cnt_c = T(hw - nd);
        for (int j = 0; j < f.c; ++j) {
            const T* fp = f.plane(i, j);
            T s1d = 0, s2d = 0, s1c = 0, s2c = 0;
            for (size_t t = 0; t < hw; ++t) {
                const T q = fp[t];
                if (mp[t] != T(0)) {
                    s1d += q;
                    s2d += q * q;
                } else {
                    s1c += q;
                    s2c += q * q;
                }
            }
            const T mu_d = s1d / cnt_d, mu_c = s1c / cnt_c;
            const T sd_d = std::sqrt(s2d / cnt_d - mu_d * mu_d + T(eps));
            const T sd_c = std::sqrt(s2c / cnt_c - mu_c * mu_c + T(eps));
            const T r = sd_c / sd_d;
            T* op = out.plane(i, j);
            for (size_t t = 0; t < hw; ++t)
                if (mp[t] != T(0)) op[t] = (fp[t] - mu_d) * r + mu_c;
        }
    }
    return out;
}

// Gradient of sfm_modulate w.r.t. f, including the paths through both
// regions' mean and std.
template <typename T>
Tensor4<T> sfm_backward(const Tensor4<T>& u, const Tensor4<T>& f, const Mask<T>& m,
                        double eps = kStatsEps) {
    require(u.same_shape(f), "sfm_backward: upstream shape mismatch");
    Tensor4<T> g = u;
    const size_t hw = size_t(f.h) * f.w;
    for (int i = 0; i < f.n; ++i) {
        const T* mp = m.plane(i);
        size_t nd = m.count_ones(i);
        if (nd == 0 || nd == hw) continue;
        const T cnt_d = T(nd), cnt_c = T(hw - nd);
        for (int j = 0; j < f.c; ++j) {
            const T* fp = f.plane(i, j);
            const T* up = u.plane(i, j);
            T s1d = 0, s2d = 0, s1c = 0, s2c = 0;
            for (size_t t = 0; t < hw; ++t) {
                const T q = fp[t];
                if (mp[t] != T(0)) {
                    s1d += q;
                    s2d += q * q;
                } else {
                    s1c += q;
                    s2c += q * q;
                }
            }
            const T mu_d = s1d / cnt_d, mu_c = s1c / cnt_c;
            const T sd_d = std::sqrt(s2d / cnt_d - mu_d * mu_d + T(eps));
            const T sd_c = std::sqrt(s2c / cnt_c - mu_c * mu_c + T(eps));
            const T r = sd_c / sd_d;
            // sums of upstream over the degraded region, plain and centered
            T u1 = 0, u2 = 0;
            for (size_t t = 0; t < hw; ++t)
                if (mp[t] != T(0)) {
                    u1 += up[t];
                    u2 += up[t] * (fp[t] - mu_d);
                }
            T* gp = g.plane(i, j);
            const T dmu_d = -r * u1, dsd_d = -r * u2 / sd_d;
            const T dmu_c = u1, dsd_c = u2 / sd_d;
            for (size_t t = 0; t < hw; ++t) {
                if (mp[t] != T(0)) {
                    gp[t] = up[t] * r + dmu_d / cnt_d +
                            dsd_d * (fp[t] - mu_d) / (cnt_d * sd_d);
                } else {
                    gp[t] = up[t] + dmu_c / cnt_c +
                            dsd_c * (fp[t] - mu_c) / (cnt_c * sd_c);
                }
            }
        }
    }
    return g;
}

// --- mask-guided sparse convolution ---
//
// Output is zero at clean positions. At degraded positions it sums kernel
// taps over degraded in-bounds neighbours only, plus bias; there is no
// normalization by the valid-neighbour count.
template <typename T>
void check_sparse_conv_args(const Tensor4<T>& f, const Mask<T>& m, const ConvParams<T>& p) {
    check_conv_args(f, p);
    require(f.n == m.n && f.h == m.h && f.w == m.w, "sparse_conv: mask shape mismatch");
    require(p.k % 2 == 1, "sparse_conv: kernel size must be odd");
    require(p.stride == 1 && p.pad == p.k / 2, "sparse_conv: resolution-preserving only");
}

template <typename T>
Tensor4<T> sparse_conv(const Tensor4<T>& f, const Mask<T>& m, const ConvParams<T>& p,
                       OpCount* probe = nullptr) {
    check_sparse_conv_args(f, m, p);
    Tensor4<T> out(f.n, p.out_ch, f.h, f.w);
    const int k = p.k, r = p.k / 2;
    const size_t hw = size_t(f.h) * f.w;
    const size_t plane_stride = hw;
    // weights regrouped as [kh][kw][co][ci] so the inner dot is contiguous
    std::vector<T> wt(size_t(k) * k * p.out_ch * p.in_ch);
    for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw)
            for (int co = 0; co < p.out_ch; ++co)
                for (int ci = 0; ci < p.in_ch; ++ci)
                    wt[((size_t(kh) * k + kw) * p.out_ch + co) * p.in_ch + ci] =
                        p.w.at(co, ci, kh, kw);
    std::vector<T> fvec(p.in_ch), acc(p.out_ch);
    uint64_t macs = 0;
    for (int i = 0; i < f.n; ++i) {
        const T* mp = m.plane(i);
        const T* fbase = f.plane(i, 0);
        for (int y = 0; y < f.h; ++y) {
            for (int x = 0; x < f.w; ++x) {
                if (mp[size_t(y) * f.w + x] == T(0)) continue;
                for (int co = 0; co < p.out_ch; ++co) acc[co] = p.b.v[co];
                for (int kh = 0; kh < k; ++kh) {
                    const int ny = y + kh - r;
                    if (ny < 0 || ny >= f.h) continue;
                    for (int kw = 0; kw < k; ++kw) {
                        const int nx = x + kw - r;
                        if (nx < 0 || nx >= f.w) continue;
                        if (mp[size_t(ny) * f.w + nx] == T(0)) continue;
                        const size_t noff = size_t(ny) * f.w + nx;
                        for (int ci = 0; ci < p.in_ch; ++ci)
                            fvec[ci] = fbase[size_t(ci) * plane_stride + noff];
                        const T* wrow = wt.data() + (size_t(kh) * k + kw) * p.out_ch * p.in_ch;
                        for (int co = 0; co < p.out_ch; ++co) {
                            const T* wr = wrow + size_t(co) * p.in_ch;
                            T s = 0;
                            for (int ci = 0; ci < p.in_ch; ++ci) s += wr[ci] * fvec[ci];
                            acc[co] += s;
                        }
                        macs += uint64_t(p.in_ch) * p.out_ch;
                    }
                }
                for (int co = 0; co < p.out_ch; ++co)
                    out.v[(size_t(i) * p.out_ch + co) * hw + size_t(y) * f.w + x] = acc[co];
            }
        }
    }
    if (probe) probe->macs += macs;
    return out;
}

// Gradients of sparse_conv. Upstream entries at clean output positions are
// ignored (the op writes zeros there regardless of input).
template <typename T>
Tensor4<T> sparse_conv_grad_input(const Tensor4<T>& u, const Tensor4<T>& f, const Mask<T>& m,
                                  const ConvParams<T>& p) {
    check_sparse_conv_args(f, m, p);
    Tensor4<T> dx(f.n, f.c, f.h, f.w);
    const int k = p.k, r = p.k / 2;
    const size_t hw = size_t(f.h) * f.w;
    // regrouped as [kh][kw][ci][co]
    std::vector<T> wt(size_t(k) * k * p.out_ch * p.in_ch);
    for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw)
            for (int ci = 0; ci < p.in_ch; ++ci)
                for (int co = 0; co < p.out_ch; ++co)
                    wt[((size_t(kh) * k + kw) * p.in_ch + ci) * p.out_ch + co] =
                        p.w.at(co, ci, kh, kw);
    std::vector<T> uvec(p.out_ch);
    for (int i = 0; i < f.n; ++i) {
        const T* mp = m.plane(i);
        const T* ubase = u.plane(i, 0);
        T* dbase = dx.plane(i, 0);
        for (int y = 0; y < f.h; ++y) {
            for (int x = 0; x < f.w; ++x) {
                if (mp[size_t(y) * f.w + x] == T(0)) continue;
                // this input position feeds outputs at q = pos - offset
                for (int kh = 0; kh < k; ++kh) {
                    const int qy = y - (kh - r);
                    if (qy < 0 || qy >= f.h) continue;
                    for (int kw = 0; kw < k; ++kw) {
                        const int qx = x - (kw - r);
                        if (qx < 0 || qx >= f.w) continue;
                        if (mp[size_t(qy) * f.w + qx] == T(0)) continue;
                        const size_t qoff = size_t(qy) * f.w + qx;
                        for (int co = 0; co < p.out_ch; ++co)
                            uvec[co] = ubase[size_t(co) * hw + qoff];
                        const T* wrow = wt.data() + (size_t(kh) * k + kw) * p.in_ch * p.out_ch;
                        const size_t off = size_t(y) * f.w + x;
                        for (int ci = 0; ci < p.in_ch; ++ci) {
                            const T* wr = wrow + size_t(ci) * p.out_ch;
                            T s = 0;
                            for (int co = 0; co < p.out_ch; ++co) s += wr[co] * uvec[co];
                            dbase[size_t(ci) * hw + off] += s;
                        }
                    }
                }
            }
        }
    }
    return dx;
}

template <typename T>
Tensor4<T> sparse_conv_grad_weight(const Tensor4<T>& u, const Tensor4<T>& f, const Mask<T>& m,
                                   const ConvParams<T>& p) {
    Tensor4<T> dw(p.out_ch, p.in_ch, p.k, p.k);
    const int k = p.k, r = p.k / 2;
    const size_t hw = size_t(f.h) * f.w;
    for (int i = 0; i < f.n; ++i) {
        const T* mp = m.plane(i);
        const T* ubase = u.plane(i, 0);
        const T* fbase = f.plane(i, 0);
        for (int y = 0; y < f.h; ++y)
            for (int x = 0; x < f.w; ++x) {
                if (mp[size_t(y) * f.w + x] == T(0)) continue;
                const size_t poff = size_t(y) * f.w + x;
                for (int kh = 0; kh < k; ++kh) {
                    const int ny = y + kh - r;
                    if (ny < 0 || ny >= f.h) continue;
                    for (int kw = 0; kw < k; ++kw) {
                        const int nx = x + kw - r;
                        if (nx < 0 || nx >= f.w) continue;
                        if (mp[size_t(ny) * f.w + nx] == T(0)) continue;
                        const size_t noff = size_t(ny) * f.w + nx;
                        for (int co = 0; co < p.out_ch; ++co) {
                            const T uv = ubase[size_t(co) * hw + poff];
                            if (uv == T(0)) continue;
                            T* dwrow = &dw.at(co, 0, kh, kw);
                            for (int ci = 0; ci < p.in_ch; ++ci)
                                dwrow[size_t(ci) * k * k] += uv * fbase[size_t(ci) * hw + noff];
                        }
                    }
                }
            }
    }
    return dw;
}

template <typename T>
Tensor4<T> sparse_conv_grad_bias(const Tensor4<T>& u, const Mask<T>& m) {
    Tensor4<T> db(1, u.c, 1, 1);
    const size_t hw = size_t(u.h) * u.w;
    for (int i = 0; i < u.n; ++i) {
        const T* mp = m.plane(i);
        for (int co = 0; co < u.c; ++co) {
            const T* up = u.plane(i, co);
            T acc = 0;
            for (size_t t = 0; t < hw; ++t)
                if (mp[t] != T(0)) acc += up[t];
            db.v[co] += acc;
        }
    }
    return db;
}

// --- sparse pointwise (1x1) layer ---
//
// Dense 1x1 conv at degraded positions, identity at clean ones; channel
// count is preserved so the identity branch is well-typed.
template <typename T>
Tensor4<T> sparse_pointwise(const Tensor4<T>& f, const Mask<T>& m, const ConvParams<T>& p,
                            OpCount* probe = nullptr) {
    require(p.k == 1 && p.stride == 1 && p.pad == 0, "sparse_pointwise: expects a 1x1 kernel");
    require(p.in_ch == p.out_ch, "sparse_pointwise: channel count must be preserved");
    check_conv_args(f, p);
    require(f.n == m.n && f.h == m.h && f.w == m.w, "sparse_pointwise: mask shape mismatch");
    Tensor4<T> out = f;
    const size_t hw = size_t(f.h) * f.w;
    uint64_t masked = 0;
    for (int i = 0; i < f.n; ++i) {
        const T* mp = m.plane(i);
        const T* fbase = f.plane(i, 0);
        T* obase = out.plane(i, 0);
        for (size_t t = 0; t < hw; ++t) {
            if (mp[t] == T(0)) continue;
            ++masked;
            for (int co = 0; co < p.out_ch; ++co) {
                T s = p.b.v[co];
                const T* wr = &p.w.at(co, 0, 0, 0);
                for (int ci = 0; ci < p.in_ch; ++ci) s += wr[ci] * fbase[size_t(ci) * hw + t];
                obase[size_t(co) * hw + t] = s;
            }
        }
    }
    if (probe) probe->macs += masked * uint64_t(p.in_ch) * p.out_ch;
    return out;
}

template <typename T>
Tensor4<T> sparse_pointwise_grad_input(const Tensor4<T>& u, const Mask<T>& m,
                                       const ConvParams<T>& p) {
    Tensor4<T> dx = u;
    const size_t hw = size_t(u.h) * u.w;
    for (int i = 0; i < u.n; ++i) {
        const T* mp = m.plane(i);
        const T* ubase = u.plane(i, 0);
        T* dbase = dx.plane(i, 0);
        for (size_t t = 0; t < hw; ++t) {
            if (mp[t] == T(0)) continue;
            for (int ci = 0; ci < p.in_ch; ++ci) {
                T s = 0;
                for (int co = 0; co < p.out_ch; ++co)
                    s += p.w.at(co, ci, 0, 0) * ubase[size_t(co) * hw + t];
                dbase[size_t(ci) * hw + t] = s;
            }
        }
    }
    return dx;
}

template <typename T>
Tensor4<T> sparse_pointwise_grad_weight(const Tensor4<T>& u, const Tensor4<T>& f,
                                        const Mask<T>& m, const ConvParams<T>& p) {
    Tensor4<T> dw(p.out_ch, p.in_ch, 1, 1);
    const size_t hw = size_t(u.h) * u.w;
    for (int i = 0; i < u.n; ++i) {
        const T* mp = m.plane(i);
        const T* ubase = u.plane(i, 0);
        const T* fbase = f.plane(i, 0);
        for (size_t t = 0; t < hw; ++t) {
            if (mp[t] == T(0)) continue;
            for (int co = 0; co < p.out_ch; ++co) {
                const T uv = ubase[size_t(co) * hw + t];
                for (int ci = 0; ci < p.in_ch; ++ci)
                    dw.at(co, ci, 0, 0) += uv * fbase[size_t(ci) * hw + t];
            }
        }
    }
    return dw;
}

// --- sparse non-local attention ---

enum class SnlPolicy { clean_only, all_pixels };

namespace detail {
// Directions are scanned in the fixed order left, right, up, down; this is
// also the channel order of the 4-channel fusion map.
struct DirStep {
    int dy, dx;
};
inline constexpr DirStep kDirs[4] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
} // namespace detail

// Attention part of the sparse non-local step, with the fusion map e given
// explicitly: out = F at clean positions; at degraded (y, x), out = F + sum
// over directions of e[k] * g_k, where g_k softmax-aggregates source
// features strictly beyond (y, x) along direction k. Empty directions
// contribute zero.
template <typename T>
Tensor4<T> snl_attend(const Tensor4<T>& f, const Tensor4<T>& e, const Mask<T>& m,
                      SnlPolicy policy, OpCount* probe = nullptr) {
    require(f.n == m.n && f.h == m.h && f.w == m.w, "snl_attend: mask shape mismatch");
    require(e.n == f.n && e.c == 4 && e.h == f.h && e.w == f.w,
            "snl_attend: fusion map must have 4 channels");
    Tensor4<T> out = f;
    const int hgt = f.h, wid = f.w, ch = f.c;
    const size_t hw = size_t(hgt) * wid;
    std::vector<T> scores(size_t(std::max(hgt, wid)));
    std::vector<size_t> srcs(size_t(std::max(hgt, wid)));
    std::vector<T> gk(ch), hacc(ch);
    uint64_t macs = 0;
    for (int i = 0; i < f.n; ++i) {
        const T* mp = m.plane(i);
        const T* fbase = f.plane(i, 0);
        const T* ebase = e.plane(i, 0);
        T* obase = out.plane(i, 0);
        for (int y = 0; y < hgt; ++y) {
            for (int x = 0; x < wid; ++x) {
                const size_t qoff = size_t(y) * wid + x;
                if (mp[qoff] == T(0)) continue;
                std::fill(hacc.begin(), hacc.end(), T(0));
                for (int k = 0; k < 4; ++k) {
                    const auto d = detail::kDirs[k];
                    int cnt = 0;
                    for (int yy = y + d.dy, xx = x + d.dx; yy >= 0 && yy < hgt && xx >= 0 && xx < wid;
                         yy += d.dy, xx += d.dx) {
                        const size_t soff = size_t(yy) * wid + xx;
                        if (policy == SnlPolicy::clean_only && mp[soff] != T(0)) continue;
                        srcs[cnt++] = soff;
                    }
                    if (cnt == 0) continue;
                    for (int t = 0; t < cnt; ++t) {
                        T s = 0;
                        for (int c = 0; c < ch; ++c)
                            s += fbase[size_t(c) * hw + qoff] * fbase[size_t(c) * hw + srcs[t]];
                        scores[t] = s;
                    }
                    macs += uint64_t(cnt) * ch;
                    softmax_inplace(scores.data(), cnt);
                    std::fill(gk.begin(), gk.end(), T(0));
                    for (int t = 0; t < cnt; ++t) {
                        const T o = scores[t];
                        for (int c = 0; c < ch; ++c) gk[c] += o * fbase[size_t(c) * hw + srcs[t]];
                    }
                    macs += uint64_t(cnt) * ch;
                    const T ev = ebase[size_t(k) * hw + qoff];
                    for (int c = 0; c < ch; ++c) hacc[c] += ev * gk[c];
                    macs += uint64_t(ch);
                }
                for (int c = 0; c < ch; ++c)
                    obase[size_t(c) * hw + qoff] = fbase[size_t(c) * hw + qoff] + hacc[c];
            }
        }
    }
    if (probe) probe->macs += macs;
    return out;
}

// Gradients of snl_attend w.r.t. the features and the fusion map.
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> snl_attend_backward(const Tensor4<T>& u, const Tensor4<T>& f,
                                                      const Tensor4<T>& e, const Mask<T>& m,
                                                      SnlPolicy policy) {
    Tensor4<T> df = u; // residual identity path
    Tensor4<T> de(e.n, e.c, e.h, e.w);
    const int hgt = f.h, wid = f.w, ch = f.c;
    const size_t hw = size_t(hgt) * wid;
    std::vector<T> scores(size_t(std::max(hgt, wid))), dsc(size_t(std::max(hgt, wid)));
    std::vector<size_t> srcs(size_t(std::max(hgt, wid)));
    std::vector<T> gk(ch), dgk(ch);
    for (int i = 0; i < f.n; ++i) {
        const T* mp = m.plane(i);
        const T* fbase = f.plane(i, 0);
        const T* ebase = e.plane(i, 0);
        const T* ubase = u.plane(i, 0);
        T* dfb = df.plane(i, 0);
        T* deb = de.plane(i, 0);
        for (int y = 0; y < hgt; ++y) {
            for (int x = 0; x < wid; ++x) {
                const size_t qoff = size_t(y) * wid + x;
                if (mp[qoff] == T(0)) continue;
                for (int k = 0; k < 4; ++k) {
                    const auto d = detail::kDirs[k];
                    int cnt = 0;
                    for (int yy = y + d.dy, xx = x + d.dx; yy >= 0 && yy < hgt && xx >= 0 && xx < wid;
                         yy += d.dy, xx += d.dx) {
                        const size_t soff = size_t(yy) * wid + xx;
                        if (policy == SnlPolicy::clean_only && mp[soff] != T(0)) continue;
                        srcs[cnt++] = soff;
                    }
                    if (cnt == 0) continue;
                    for (int t = 0; t < cnt; ++t) {
                        T s = 0;
                        for (int c = 0; c < ch; ++c)
                            s += fbase[size_t(c) * hw + qoff] * fbase[size_t(c) * hw + srcs[t]];
                        scores[t] = s;
                    }
                    softmax_inplace(scores.data(), cnt);
                    std::fill(gk.begin(), gk.end(), T(0));
                    for (int t = 0; t < cnt; ++t) {
                        const T o = scores[t];
                        for (int c = 0; c < ch; ++c) gk[c] += o * fbase[size_t(c) * hw + srcs[t]];
                    }
                    const T ev = ebase[size_t(k) * hw + qoff];
                    // de[k] = <upstream, g_k>; dg_k = upstream * e[k]
                    T des = 0;
                    for (int c = 0; c < ch; ++c) {
                        const T uv = ubase[size_t(c) * hw + qoff];
                        des += uv * gk[c];
                        dgk[c] = uv * ev;
                    }
                    deb[size_t(k) * hw + qoff] += des;
                    // through the aggregation and the softmax
                    T dot_o = 0;
                    for (int t = 0; t < cnt; ++t) {
                        T s = 0;
                        for (int c = 0; c < ch; ++c) s += dgk[c] * fbase[size_t(c) * hw + srcs[t]];
                        dsc[t] = s;
                        dot_o += scores[t] * s;
                    }
                    for (int t = 0; t < cnt; ++t) dsc[t] = scores[t] * (dsc[t] - dot_o);
                    // each score couples the query feature with one source feature
                    for (int t = 0; t < cnt; ++t) {
                        const T o = scores[t], ds = dsc[t];
                        for (int c = 0; c < ch; ++c)
                            dfb[size_t(c) * hw + srcs[t]] +=
                                o * dgk[c] + ds * fbase[size_t(c) * hw + qoff];
                        for (int c = 0; c < ch; ++c)
                            dfb[size_t(c) * hw + qoff] += ds * fbase[size_t(c) * hw + srcs[t]];
                    }
                }
            }
        }
    }
    return {std::move(df), std::move(de)};
}

// Full sparse non-local step: fusion map from a 1x1 conv over the features.
template <typename T>
Tensor4<T> snl_step(const Tensor4<T>& f, const Mask<T>& m, const ConvParams<T>& fusion,
                    SnlPolicy policy, OpCount* probe = nullptr) {
    require(fusion.out_ch == 4 && fusion.k == 1, "snl_step: fusion conv must be 1x1 -> 4");
    const Tensor4<T> e = conv2d_dense(f, fusion);
    if (probe) probe->macs += conv2d_dense_mac_count(f.n, f.h, f.w, fusion);
    return snl_attend(f, e, m, policy, probe);
}

template <typename T>
struct SnlModuleParams {
    ConvParams<T> fusion1;   // C -> 4
    ConvParams<T> pointwise; // C -> C sparse 1x1 connector
    ConvParams<T> fusion2;   // C -> 4
};

template <typename T>
SnlModuleParams<T> make_snl_module_params(int ch) {
    SnlModuleParams<T> p;
    p.fusion1 = make_conv_params<T>(ch, 4, 1, 1, 0);
    p.pointwise = make_conv_params<T>(ch, ch, 1, 1, 0);
    p.fusion2 = make_conv_params<T>(ch, 4, 1, 1, 0);
    return p;
}

// Two structurally identical steps joined by a sparse 1x1 layer. The first
// step always attends to clean sources; the second follows `policy2`.
template <typename T>
Tensor4<T> snl_module_forward(const Tensor4<T>& f, const Mask<T>& m, const SnlModuleParams<T>& p,
                              SnlPolicy policy2 = SnlPolicy::clean_only,
                              OpCount* probe = nullptr) {
    Tensor4<T> s1 = snl_step(f, m, p.fusion1, SnlPolicy::clean_only, probe);
    Tensor4<T> mid = sparse_pointwise(s1, m, p.pointwise, probe);
    return snl_step(mid, m, p.fusion2, policy2, probe);
}

// --- dense global attention (ablation-only decoder layer) ---
//
// Every position attends over the whole grid; no mask is involved. Returns
// the aggregated features, not a residual sum.
template <typename T>
Tensor4<T> nl_attend(const Tensor4<T>& f) {
    Tensor4<T> out(f.n, f.c, f.h, f.w);
    const int ch = f.c;
    const size_t hw = size_t(f.h) * f.w;
    std::vector<T> scores(hw);
    for (int i = 0; i < f.n; ++i) {
        const T* fbase = f.plane(i, 0);
        T* obase = out.plane(i, 0);
        for (size_t q = 0; q < hw; ++q) {
            for (size_t t = 0; t < hw; ++t) {
                T s = 0;
                for (int c = 0; c < ch; ++c)
                    s += fbase[size_t(c) * hw + q] * fbase[size_t(c) * hw + t];
                scores[t] = s;
            }
            softmax_inplace(scores.data(), int(hw));
            for (int c = 0; c < ch; ++c) {
                T g = 0;
                const T* fc = fbase + size_t(c) * hw;
                for (size_t t = 0; t < hw; ++t) g += scores[t] * fc[t];
                obase[size_t(c) * hw + q] = g;
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> nl_attend_backward(const Tensor4<T>& u, const Tensor4<T>& f) {
    Tensor4<T> df(f.n, f.c, f.h, f.w);
    const int ch = f.c;
    const size_t hw = size_t(f.h) * f.w;
    std::vector<T> scores(hw), dsc(hw);
    for (int i = 0; i < f.n; ++i) {
        const T* fbase = f.plane(i, 0);
        const T* ubase = u.plane(i, 0);
        T* dfb = df.plane(i, 0);
        for (size_t q = 0; q < hw; ++q) {
            for (size_t t = 0; t < hw; ++t) {
                T s = 0;
                for (int c = 0; c < ch; ++c)
                    s += fbase[size_t(c) * hw + q] * fbase[size_t(c) * hw + t];
                scores[t] = s;
            }
            softmax_inplace(scores.data(), int(hw));
            T dot_o = 0;
            for (size_t t = 0; t < hw; ++t) {
                T s = 0;
                for (int c = 0; c < ch; ++c)
                    s += ubase[size_t(c) * hw + q] * fbase[size_t(c) * hw + t];
                dsc[t] = s;
                dot_o += scores[t] * s;
            }
            for (size_t t = 0; t < hw; ++t) dsc[t] = scores[t] * (dsc[t] - dot_o);
            for (size_t t = 0; t < hw; ++t) {
                const T o = scores[t], ds = dsc[t];
                for (int c = 0; c < ch; ++c) {
                    dfb[size_t(c) * hw + t] +=
                        o * ubase[size_t(c) * hw + q] + ds * fbase[size_t(c) * hw + q];
                    dfb[size_t(c) * hw + q] += ds * fbase[size_t(c) * hw + t];
                }
            }
        }
    }
    return df;
}

// --- densely connected guided sparse conv block ---

inline constexpr int kScBlockLayers = 6;

template <typename T>
struct ScBlockParams {
    std::vector<ConvParams<T>> layers; // kScBlockLayers guided 3x3 convs
    ConvParams<T> reduce;              // 1x1 back to the input width
};

template <typename T>
ScBlockParams<T> make_sc_block_params(int ch, int growth) {
    ScBlockParams<T> p;
    for (int l = 0; l < kScBlockLayers; ++l)
        p.layers.push_back(make_conv_params<T>(ch + l * growth, growth, 3, 1, 1));
    p.reduce = make_conv_params<T>(ch + kScBlockLayers * growth, ch, 1, 1, 0);
    return p;
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    require(a.n == b.n && a.h == b.h && a.w == b.w, "concat_channels: spatial mismatch");
    Tensor4<T> out(a.n, a.c + b.c, a.h, a.w);
    const size_t hw = size_t(a.h) * a.w;
    for (int i = 0; i < a.n; ++i) {
        std::copy(a.plane(i, 0), a.plane(i, 0) + size_t(a.c) * hw, out.plane(i, 0));
        std::copy(b.plane(i, 0), b.plane(i, 0) + size_t(b.c) * hw, out.plane(i, a.c));
    }
    return out;
}

// Residual add restricted to degraded positions, so clean positions keep
// their exact bit pattern.
template <typename T>
Tensor4<T> add_masked(const Tensor4<T>& f, const Tensor4<T>& g, const Mask<T>& m) {
    require(f.same_shape(g), "add_masked: shape mismatch");
    Tensor4<T> out = f;
    const size_t hw = size_t(f.h) * f.w;
    for (int i = 0; i < f.n; ++i) {
        const T* mp = m.plane(i);
        for (int c = 0; c < f.c; ++c) {
            T* op = out.plane(i, c);
            const T* gp = g.plane(i, c);
            for (size_t t = 0; t < hw; ++t)
                if (mp[t] != T(0)) op[t] += gp[t];
        }
    }
    return out;
}

// Six densely connected guided sparse convolutions, a 1x1 reduction and a
// residual connection. The branch is zero at clean positions by
// construction, so the output equals F there bit for bit.
template <typename T>
Tensor4<T> sc_block_forward(const Tensor4<T>& f, const Mask<T>& m, const ScBlockParams<T>& p,
                            OpCount* probe = nullptr) {
    require(int(p.layers.size()) == kScBlockLayers, "sc_block: expects 6 layers");
    Tensor4<T> cat = f;
    for (const auto& layer : p.layers) {
        Tensor4<T> y = leaky_relu(sparse_conv(cat, m, layer, probe));
        cat = concat_channels(cat, y);
    }
    Tensor4<T> branch = sparse_conv(cat, m, p.reduce, probe);
    return add_masked(f, branch, m);
}

} // namespace spair

#endif
