// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_CONV_HPP
#define SPAIR_CONV_HPP

#include <algorithm>
#include <cstdint>
#include <cstring>

#include "spair/tensor.hpp"

namespace spair {

// 2-D convolution parameters. Weights are (out_ch, in_ch, k, k); the bias is
// kept as a (1, out_ch, 1, 1) tensor so checkpoints store one tensor kind.
template <typename T>
struct ConvParams {
    int in_ch = 0, out_ch = 0, k = 1, stride = 1, pad = 0;
    Tensor4<T> w;
    Tensor4<T> b;
};

template <typename T>
ConvParams<T> make_conv_params(int in_ch, int out_ch, int k, int stride, int pad) {
    require(in_ch > 0 && out_ch > 0 && k > 0 && stride > 0 && pad >= 0, "conv: bad geometry");
    ConvParams<T> p;
    p.in_ch = in_ch;
    p.out_ch = out_ch;
    p.k = k;
    p.stride = stride;
    p.pad = pad;
    p.w = Tensor4<T>(out_ch, in_ch, k, k);
    p.b = Tensor4<T>(1, out_ch, 1, 1);
    return p;
}

// Fan-in-scaled uniform init, bound 1/sqrt(in_ch * k * k).
template <typename T>
void init_conv_params(ConvParams<T>& p, Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(p.in_ch) * p.k * p.k);
    fill_uniform(p.w, rng, -bound, bound);
    fill_uniform(p.b, rng, -bound, bound);
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
    const int out = (in + 2 * pad - k) / stride + 1;
    require(in + 2 * pad >= k && out >= 1, "conv: kernel does not fit input");
    return out;
}

template <typename T>
void check_conv_args(const Tensor4<T>& f, const ConvParams<T>& p) {
    require(f.c == p.in_ch, "conv: input has " + std::to_string(f.c) + " channels, expected " +
                                std::to_string(p.in_ch));
    require(p.w.n == p.out_ch && p.w.c == p.in_ch && p.w.h == p.k && p.w.w == p.k,
            "conv: weight shape mismatch");
    require(p.b.n == 1 && p.b.c == p.out_ch && p.b.h == 1 && p.b.w == 1,
            "conv: bias shape mismatch");
}

#if defined(__GNUC__) || defined(__clang__)
#define SPAIR_RESTRICT __restrict__
#else
#define SPAIR_RESTRICT
#endif

namespace convdetail {

// Edge columns of one row: per-tap bounds checks, taps applied in kw order.
template <typename T>
void edge_taps(T* SPAIR_RESTRICT acc, const T* irow, const T* wk, int k, int pad, int xb, int xe,
               int in_w) {
    for (int x = xb; x < xe; ++x) {
        T s = acc[x];
        for (int kw = 0; kw < k; ++kw) {
            const int ix = x - pad + kw;
            if (ix >= 0 && ix < in_w) s += wk[kw] * irow[ix];
        }
        acc[x] = s;
    }
}

// Interior columns, three taps fused: acc[x] += w0*b[x] + w1*b[x+1] + w2*b[x+2].
template <typename T>
void rows1_tap3(T* SPAIR_RESTRICT acc, const T* b, const T* wk, int x0, int x1) {
    const T w0 = wk[0], w1 = wk[1], w2 = wk[2];
    for (int x = x0; x < x1; ++x) acc[x] += w0 * b[x] + w1 * b[x + 1] + w2 * b[x + 2];
}

// Four accumulator rows sharing one input row; the shared loads of b amortize
// the pass, and the 12 fused multiply-adds keep the vector units busy.
template <typename T>
void rows4_tap3(T* SPAIR_RESTRICT a0, T* SPAIR_RESTRICT a1, T* SPAIR_RESTRICT a2,
                T* SPAIR_RESTRICT a3, const T* b, const T* w0, const T* w1, const T* w2,
                const T* w3, int x0, int x1) {
    const T w00 = w0[0], w01 = w0[1], w02 = w0[2];
    const T w10 = w1[0], w11 = w1[1], w12 = w1[2];
    const T w20 = w2[0], w21 = w2[1], w22 = w2[2];
    const T w30 = w3[0], w31 = w3[1], w32 = w3[2];
    for (int x = x0; x < x1; ++x) {
        const T b0 = b[x], b1 = b[x + 1], b2 = b[x + 2];
        a0[x] += w00 * b0 + w01 * b1 + w02 * b2;
        a1[x] += w10 * b0 + w11 * b1 + w12 * b2;
        a2[x] += w20 * b0 + w21 * b1 + w22 * b2;
        a3[x] += w30 * b0 + w31 * b1 + w32 * b2;
    }
}

template <typename T>
void rows4_tap1(T* SPAIR_RESTRICT a0, T* SPAIR_RESTRICT a1, T* SPAIR_RESTRICT a2,
                T* SPAIR_RESTRICT a3, const T* b, T w0, T w1, T w2, T w3, int x0, int x1) {
    for (int x = x0; x < x1; ++x) {
        const T bv = b[x];
        a0[x] += w0 * bv;
        a1[x] += w1 * bv;
        a2[x] += w2 * bv;
        a3[x] += w3 * bv;
    }
}

// Two-row variants covering channel counts that are not multiples of four.
template <typename T>
void rows2_tap3(T* SPAIR_RESTRICT a0, T* SPAIR_RESTRICT a1, const T* b, const T* w0, const T* w1,
                int x0, int x1) {
    const T w00 = w0[0], w01 = w0[1], w02 = w0[2];
    const T w10 = w1[0], w11 = w1[1], w12 = w1[2];
    for (int x = x0; x < x1; ++x) {
        const T b0 = b[x], b1 = b[x + 1], b2 = b[x + 2];
        a0[x] += w00 * b0 + w01 * b1 + w02 * b2;
        a1[x] += w10 * b0 + w11 * b1 + w12 * b2;
    }
}

template <typename T>
void rows2_tap1(T* SPAIR_RESTRICT a0, T* SPAIR_RESTRICT a1, const T* b, T w0, T w1, int x0,
                int x1) {
    for (int x = x0; x < x1; ++x) {
        const T bv = b[x];
        a0[x] += w0 * bv;
        a1[x] += w1 * bv;
    }
}

// All nine 3x3 taps fused: the three kernel rows land in one pass, so each
// accumulator column is read and written once instead of once per kernel
// row. Weights run in (kh, kw) order matching the b0/b1/b2 input rows.
template <typename T>
void rows4_tap9(T* SPAIR_RESTRICT a0, T* SPAIR_RESTRICT a1, T* SPAIR_RESTRICT a2,
                T* SPAIR_RESTRICT a3, const T* b0, const T* b1, const T* b2, const T* w0,
                const T* w1, const T* w2, const T* w3, int x0, int x1) {
    T c0[9], c1[9], c2[9], c3[9];
    for (int t = 0; t < 9; ++t) {
        c0[t] = w0[t];
        c1[t] = w1[t];
        c2[t] = w2[t];
        c3[t] = w3[t];
    }
    for (int x = x0; x < x1; ++x) {
        const T u0 = b0[x], u1 = b0[x + 1], u2 = b0[x + 2];
        const T v0 = b1[x], v1 = b1[x + 1], v2 = b1[x + 2];
        const T t0 = b2[x], t1 = b2[x + 1], t2 = b2[x + 2];
        a0[x] += c0[0] * u0 + c0[1] * u1 + c0[2] * u2 + c0[3] * v0 + c0[4] * v1 + c0[5] * v2 +
                 c0[6] * t0 + c0[7] * t1 + c0[8] * t2;
        a1[x] += c1[0] * u0 + c1[1] * u1 + c1[2] * u2 + c1[3] * v0 + c1[4] * v1 + c1[5] * v2 +
                 c1[6] * t0 + c1[7] * t1 + c1[8] * t2;
        a2[x] += c2[0] * u0 + c2[1] * u1 + c2[2] * u2 + c2[3] * v0 + c2[4] * v1 + c2[5] * v2 +
                 c2[6] * t0 + c2[7] * t1 + c2[8] * t2;
        a3[x] += c3[0] * u0 + c3[1] * u1 + c3[2] * u2 + c3[3] * v0 + c3[4] * v1 + c3[5] * v2 +
                 c3[6] * t0 + c3[7] * t1 + c3[8] * t2;
    }
}

template <typename T>
void rows2_tap9(T* SPAIR_RESTRICT a0, T* SPAIR_RESTRICT a1, const T* b0, const T* b1, const T* b2,
                const T* w0, const T* w1, int x0, int x1) {
    T c0[9], c1[9];
    for (int t = 0; t < 9; ++t) {
        c0[t] = w0[t];
        c1[t] = w1[t];
    }
    for (int x = x0; x < x1; ++x) {
        const T u0 = b0[x], u1 = b0[x + 1], u2 = b0[x + 2];
        const T v0 = b1[x], v1 = b1[x + 1], v2 = b1[x + 2];
        const T t0 = b2[x], t1 = b2[x + 1], t2 = b2[x + 2];
        a0[x] += c0[0] * u0 + c0[1] * u1 + c0[2] * u2 + c0[3] * v0 + c0[4] * v1 + c0[5] * v2 +
                 c0[6] * t0 + c0[7] * t1 + c0[8] * t2;
        a1[x] += c1[0] * u0 + c1[1] * u1 + c1[2] * u2 + c1[3] * v0 + c1[4] * v1 + c1[5] * v2 +
                 c1[6] * t0 + c1[7] * t1 + c1[8] * t2;
    }
}

// acc[x] += sum_kw wk[kw] * irow[x - pad + kw], skipping out-of-range taps.
// Edge columns take per-tap bounds checks; interior columns run fused so the
// row loop vectorizes. Tap order per element is fixed, so results are
// reproducible run to run.
template <typename T>
void row_taps_accum(T* SPAIR_RESTRICT acc, const T* irow, const T* wk, int k, int pad, int ow,
                    int in_w) {
    const int xi0 = std::min(ow, std::max(0, pad));
    const int xi1 = std::max(xi0, std::min(ow, in_w - k + 1 + pad));
    edge_taps(acc, irow, wk, k, pad, 0, xi0, in_w);
    const T* base = irow - pad;
    if (k == 3) {
        rows1_tap3(acc, base, wk, xi0, xi1);
    } else if (k == 1) {
        const T w0 = wk[0];
        for (int x = xi0; x < xi1; ++x) acc[x] += w0 * base[x];
    } else {
        for (int kw = 0; kw < k; ++kw) {
            const T wv = wk[kw];
            const T* b = base + kw;
            for (int x = xi0; x < xi1; ++x) acc[x] += wv * b[x];
        }
    }
    edge_taps(acc, irow, wk, k, pad, xi1, ow, in_w);
}

// Fixed-width lane vectors for the weight-gradient accumulators. Lane j of an
// accumulator always receives the same terms in the same order as the scalar
// fallback, so both builds reduce identically; the native form just keeps the
// running sums in registers instead of bouncing them through the stack.
#if defined(__GNUC__) || defined(__clang__)
template <typename T>
struct LaneOps {
    typedef T vec __attribute__((vector_size(64)));
    static vec zero() { return vec{}; }
    static vec load(const T* p) {
        vec v;
        __builtin_memcpy(&v, p, sizeof v);
        return v;
    }
    static void fma(vec& acc, vec a, vec b) { acc += a * b; }
    static T lane(const vec& v, int j) { return v[j]; }
};
#else
template <typename T>
struct LaneOps {
    static constexpr int n = int(64 / sizeof(T));
    struct vec {
        T l[n];
    };
    static vec zero() { return vec{}; }
    static vec load(const T* p) {
        vec v;
        for (int j = 0; j < n; ++j) v.l[j] = p[j];
        return v;
    }
    static void fma(vec& acc, vec a, vec b) {
        for (int j = 0; j < n; ++j) acc.l[j] += a.l[j] * b.l[j];
    }
    static T lane(const vec& v, int j) { return v.l[j]; }
};
#endif

// Edge columns of the transposed form below.
template <typename T>
void edge_taps_rev(T* SPAIR_RESTRICT acc, const T* urow, const T* wk, int k, int pad, int xb,
                   int xe, int ow) {
    for (int x = xb; x < xe; ++x) {
        T s = acc[x];
        for (int kw = 0; kw < k; ++kw) {
            const int ux = x + pad - kw;
            if (ux >= 0 && ux < ow) s += wk[kw] * urow[ux];
        }
        acc[x] = s;
    }
}

// Transposed form used by the input gradient: acc[x] += sum_kw wk[kw] *
// urow[x + pad - kw], skipping source columns outside [0, ow).
template <typename T>
void row_taps_accum_rev(T* SPAIR_RESTRICT acc, const T* urow, const T* wk, int k, int pad,
                        int in_w, int ow) {
    const int xi0 = std::min(in_w, std::max(0, k - 1 - pad));
    const int xi1 = std::max(xi0, std::min(in_w, ow - pad));
    edge_taps_rev(acc, urow, wk, k, pad, 0, xi0, ow);
    const T* base = urow + pad;
    if (k == 3) {
        const T w0 = wk[0], w1 = wk[1], w2 = wk[2];
        for (int x = xi0; x < xi1; ++x) acc[x] += w0 * base[x] + w1 * base[x - 1] + w2 * base[x - 2];
    } else if (k == 1) {
        const T w0 = wk[0];
        for (int x = xi0; x < xi1; ++x) acc[x] += w0 * base[x];
    } else {
        for (int kw = 0; kw < k; ++kw) {
            const T wv = wk[kw];
            const T* b = base - kw;
            for (int x = xi0; x < xi1; ++x) acc[x] += wv * b[x];
        }
    }
    edge_taps_rev(acc, urow, wk, k, pad, xi1, in_w, ow);
}

} // namespace convdetail

// Dense convolution with zero padding. Accumulation per output element runs
// in fixed (ci, kh, kw) order, so results do not depend on caller threading.
// Stride 1 builds each output row in a stack-local accumulator with fused
// taps; other strides take the straightforward scatter path.
template <typename T>
Tensor4<T> conv2d_dense(const Tensor4<T>& f, const ConvParams<T>& p) {
    check_conv_args(f, p);
    const int oh = conv_out_dim(f.h, p.k, p.stride, p.pad);
    const int ow = conv_out_dim(f.w, p.k, p.stride, p.pad);
    Tensor4<T> out(f.n, p.out_ch, oh, ow);
    const int s = p.stride, pd = p.pad, k = p.k;
    if (s == 1) {
        // Output channels run in blocks of four sharing each input-row pass.
        const int kk = k * k;
        const int xi0 = std::min(ow, std::max(0, pd));
        const int xi1 = std::max(xi0, std::min(ow, f.w - k + 1 + pd));
        std::vector<T> accbuf(size_t(4) * ow);
        T* const a0 = accbuf.data();
        T* const a1 = a0 + ow;
        T* const a2 = a1 + ow;
        T* const a3 = a2 + ow;
        for (int i = 0; i < f.n; ++i) {
            int co = 0;
            for (; co + 4 <= p.out_ch && (k == 3 || k == 1); co += 4) {
                const T* w0 = &p.w.at(co + 0, 0, 0, 0);
                const T* w1 = &p.w.at(co + 1, 0, 0, 0);
                const T* w2 = &p.w.at(co + 2, 0, 0, 0);
                const T* w3 = &p.w.at(co + 3, 0, 0, 0);
                for (int y = 0; y < oh; ++y) {
                    for (int j = 0; j < 4; ++j)
                        for (int x = 0; x < ow; ++x) accbuf[size_t(j) * ow + x] = p.b.v[co + j];
                    // Rows whose full 3x3 support is in bounds take the fused
                    // nine-tap pass; boundary rows fall back to per-kernel-row.
                    const bool fuse = k == 3 && y - pd >= 0 && y - pd + 2 < f.h;
                    for (int ci = 0; ci < p.in_ch; ++ci) {
                        const T* ip = f.plane(i, ci);
                        const size_t wo = size_t(ci) * kk;
                        for (int kh = 0; kh < k; ++kh) {
                            const int ih = y + kh - pd;
                            if (ih < 0 || ih >= f.h) continue;
                            const T* irow = ip + size_t(ih) * f.w;
                            const T* k0 = w0 + wo + size_t(kh) * k;
                            const T* k1 = w1 + wo + size_t(kh) * k;
                            const T* k2 = w2 + wo + size_t(kh) * k;
                            const T* k3 = w3 + wo + size_t(kh) * k;
                            convdetail::edge_taps(a0, irow, k0, k, pd, 0, xi0, f.w);
                            convdetail::edge_taps(a1, irow, k1, k, pd, 0, xi0, f.w);
                            convdetail::edge_taps(a2, irow, k2, k, pd, 0, xi0, f.w);
                            convdetail::edge_taps(a3, irow, k3, k, pd, 0, xi0, f.w);
                            if (!fuse) {
                                if (k == 3)
                                    convdetail::rows4_tap3(a0, a1, a2, a3, irow - pd, k0, k1, k2,
                                                           k3, xi0, xi1);
                                else
                                    convdetail::rows4_tap1(a0, a1, a2, a3, irow - pd, k0[0], k1[0],
                                                           k2[0], k3[0], xi0, xi1);
                            }
                            convdetail::edge_taps(a0, irow, k0, k, pd, xi1, ow, f.w);
                            convdetail::edge_taps(a1, irow, k1, k, pd, xi1, ow, f.w);
                            convdetail::edge_taps(a2, irow, k2, k, pd, xi1, ow, f.w);
                            convdetail::edge_taps(a3, irow, k3, k, pd, xi1, ow, f.w);
                        }
                        if (fuse) {
                            const T* r0 = ip + size_t(y - pd) * f.w - pd;
                            convdetail::rows4_tap9(a0, a1, a2, a3, r0, r0 + f.w, r0 + 2 * f.w,
                                                   w0 + wo, w1 + wo, w2 + wo, w3 + wo, xi0, xi1);
                        }
                    }
                    for (int j = 0; j < 4; ++j)
                        std::copy_n(accbuf.data() + size_t(j) * ow, ow,
                                    out.plane(i, co + j) + size_t(y) * ow);
                }
            }
            for (; co + 2 <= p.out_ch && (k == 3 || k == 1); co += 2) {
                const T* w0 = &p.w.at(co + 0, 0, 0, 0);
                const T* w1 = &p.w.at(co + 1, 0, 0, 0);
                for (int y = 0; y < oh; ++y) {
                    for (int x = 0; x < ow; ++x) a0[x] = p.b.v[co + 0];
                    for (int x = 0; x < ow; ++x) a1[x] = p.b.v[co + 1];
                    const bool fuse = k == 3 && y - pd >= 0 && y - pd + 2 < f.h;
                    for (int ci = 0; ci < p.in_ch; ++ci) {
                        const T* ip = f.plane(i, ci);
                        const size_t wo = size_t(ci) * kk;
                        for (int kh = 0; kh < k; ++kh) {
                            const int ih = y + kh - pd;
                            if (ih < 0 || ih >= f.h) continue;
                            const T* irow = ip + size_t(ih) * f.w;
                            const T* k0 = w0 + wo + size_t(kh) * k;
                            const T* k1 = w1 + wo + size_t(kh) * k;
                            convdetail::edge_taps(a0, irow, k0, k, pd, 0, xi0, f.w);
                            convdetail::edge_taps(a1, irow, k1, k, pd, 0, xi0, f.w);
                            if (!fuse) {
                                if (k == 3)
                                    convdetail::rows2_tap3(a0, a1, irow - pd, k0, k1, xi0, xi1);
                                else
                                    convdetail::rows2_tap1(a0, a1, irow - pd, k0[0], k1[0], xi0,
                                                           xi1);
                            }
                            convdetail::edge_taps(a0, irow, k0, k, pd, xi1, ow, f.w);
                            convdetail::edge_taps(a1, irow, k1, k, pd, xi1, ow, f.w);
                        }
                        if (fuse) {
                            const T* r0 = ip + size_t(y - pd) * f.w - pd;
                            convdetail::rows2_tap9(a0, a1, r0, r0 + f.w, r0 + 2 * f.w, w0 + wo,
                                                   w1 + wo, xi0, xi1);
                        }
                    }
                    std::copy_n(a0, ow, out.plane(i, co + 0) + size_t(y) * ow);
                    std::copy_n(a1, ow, out.plane(i, co + 1) + size_t(y) * ow);
                }
            }
            for (; co < p.out_ch; ++co) {
                T* op = out.plane(i, co);
                const T bias = p.b.v[co];
                const T* wco = &p.w.at(co, 0, 0, 0);
                for (int y = 0; y < oh; ++y) {
                    for (int x = 0; x < ow; ++x) a0[x] = bias;
                    for (int ci = 0; ci < p.in_ch; ++ci) {
                        const T* ip = f.plane(i, ci);
                        const T* wci = wco + size_t(ci) * kk;
                        for (int kh = 0; kh < k; ++kh) {
                            const int ih = y + kh - pd;
                            if (ih < 0 || ih >= f.h) continue;
                            convdetail::row_taps_accum(a0, ip + size_t(ih) * f.w,
                                                       wci + size_t(kh) * k, k, pd, ow, f.w);
                        }
                    }
                    std::copy_n(a0, ow, op + size_t(y) * ow);
                }
            }
        }
        return out;
    }
    for (int i = 0; i < f.n; ++i) {
        for (int co = 0; co < p.out_ch; ++co) {
            T* op = out.plane(i, co);
            const T bias = p.b.v[co];
            for (size_t t = 0; t < size_t(oh) * ow; ++t) op[t] = bias;
            for (int ci = 0; ci < p.in_ch; ++ci) {
                const T* ip = f.plane(i, ci);
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const T wv = p.w.at(co, ci, kh, kw);
                        for (int y = 0; y < oh; ++y) {
                            const int ih = y * s + kh - pd;
                            if (ih < 0 || ih >= f.h) continue;
                            // x range keeping ix = x*s + kw - pd inside [0, w)
                            int x0 = 0;
                            while (x0 < ow && x0 * s + kw - pd < 0) ++x0;
                            int x1 = ow;
                            while (x1 > x0 && (x1 - 1) * s + kw - pd >= f.w) --x1;
                            T* orow = op + size_t(y) * ow;
                            const T* irow = ip + size_t(ih) * f.w + (kw - pd);
                            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[size_t(x) * s];
                        }
                    }
                }
            }
        }
    }
    return out;
}

// Multiply-accumulate count for conv2d_dense, counting in-bounds taps only
// (zero-padding positions do no useful work).
template <typename T>
uint64_t conv2d_dense_mac_count(int n, int h, int w, const ConvParams<T>& p) {
    const int oh = conv_out_dim(h, p.k, p.stride, p.pad);
    const int ow = conv_out_dim(w, p.k, p.stride, p.pad);
    uint64_t taps = 0;
    for (int y = 0; y < oh; ++y)
        for (int kh = 0; kh < p.k; ++kh) {
            const int ih = y * p.stride + kh - p.pad;
            if (ih < 0 || ih >= h) continue;
            for (int x = 0; x < ow; ++x)
                for (int kw = 0; kw < p.k; ++kw) {
                    const int iw = x * p.stride + kw - p.pad;
                    if (iw >= 0 && iw < w) ++taps;
                }
        }
    return uint64_t(n) * p.in_ch * p.out_ch * taps;
}

// Gradient of conv2d_dense w.r.t. its input, given upstream u on the output.
// Stride 1 gathers each input-gradient row into a stack-local accumulator;
// other strides scatter as the forward does.
template <typename T>
Tensor4<T> conv2d_dense_grad_input(const Tensor4<T>& u, const ConvParams<T>& p, int in_h, int in_w) {
    const int oh = conv_out_dim(in_h, p.k, p.stride, p.pad);
    const int ow = conv_out_dim(in_w, p.k, p.stride, p.pad);
    require(u.c == p.out_ch && u.h == oh && u.w == ow, "conv grad: upstream shape mismatch");
    Tensor4<T> dx(u.n, p.in_ch, in_h, in_w);
    const int s = p.stride, pd = p.pad, k = p.k;
    if (s == 1) {
        // Input channels run in blocks of four sharing each upstream-row pass;
        // the reversed kernels feed the same fused tap helpers.
        const int kk = k * k;
        const int xi0 = std::min(in_w, std::max(0, k - 1 - pd));
        const int xi1 = std::max(xi0, std::min(in_w, ow - pd));
        std::vector<T> accbuf(size_t(4) * in_w);
        T* const a0 = accbuf.data();
        T* const a1 = a0 + in_w;
        T* const a2 = a1 + in_w;
        T* const a3 = a2 + in_w;
        for (int i = 0; i < u.n; ++i) {
            int ci = 0;
            for (; ci + 4 <= p.in_ch && (k == 3 || k == 1); ci += 4) {
                for (int ih = 0; ih < in_h; ++ih) {
                    for (size_t t = 0; t < accbuf.size(); ++t) accbuf[t] = 0;
                    // Rows whose full reversed 3x3 support is in bounds take
                    // the fused nine-tap pass over the three upstream rows.
                    const bool fuse = k == 3 && ih + pd - 2 >= 0 && ih + pd < oh;
                    for (int co = 0; co < p.out_ch; ++co) {
                        const T* up = u.plane(i, co);
                        const T* wco = &p.w.at(co, ci, 0, 0);
                        for (int kh = 0; kh < k; ++kh) {
                            const int y = ih + pd - kh;
                            if (y < 0 || y >= oh) continue;
                            const T* urow = up + size_t(y) * ow;
                            const T* k0 = wco + size_t(kh) * k;
                            const T* k1 = k0 + kk;
                            const T* k2 = k1 + kk;
                            const T* k3 = k2 + kk;
                            convdetail::edge_taps_rev(a0, urow, k0, k, pd, 0, xi0, ow);
                            convdetail::edge_taps_rev(a1, urow, k1, k, pd, 0, xi0, ow);
                            convdetail::edge_taps_rev(a2, urow, k2, k, pd, 0, xi0, ow);
                            convdetail::edge_taps_rev(a3, urow, k3, k, pd, 0, xi0, ow);
                            if (!fuse) {
                                if (k == 3) {
                                    const T r0[3] = {k0[2], k0[1], k0[0]};
                                    const T r1[3] = {k1[2], k1[1], k1[0]};
                                    const T r2[3] = {k2[2], k2[1], k2[0]};
                                    const T r3[3] = {k3[2], k3[1], k3[0]};
                                    convdetail::rows4_tap3(a0, a1, a2, a3, urow + pd - 2, r0, r1,
                                                           r2, r3, xi0, xi1);
                                } else {
                                    convdetail::rows4_tap1(a0, a1, a2, a3, urow + pd, k0[0], k1[0],
                                                           k2[0], k3[0], xi0, xi1);
                                }
                            }
                            convdetail::edge_taps_rev(a0, urow, k0, k, pd, xi1, in_w, ow);
                            convdetail::edge_taps_rev(a1, urow, k1, k, pd, xi1, in_w, ow);
                            convdetail::edge_taps_rev(a2, urow, k2, k, pd, xi1, in_w, ow);
                            convdetail::edge_taps_rev(a3, urow, k3, k, pd, xi1, in_w, ow);
                        }
                        if (fuse) {
                            T r0[9], r1[9], r2[9], r3[9];
                            for (int j = 0; j < 3; ++j)
                                for (int t = 0; t < 3; ++t) {
                                    r0[j * 3 + t] = wco[j * 3 + 2 - t];
                                    r1[j * 3 + t] = wco[kk + j * 3 + 2 - t];
                                    r2[j * 3 + t] = wco[2 * kk + j * 3 + 2 - t];
                                    r3[j * 3 + t] = wco[3 * kk + j * 3 + 2 - t];
                                }
                            const T* b0 = up + size_t(ih + pd) * ow + pd - 2;
                            convdetail::rows4_tap9(a0, a1, a2, a3, b0, b0 - ow, b0 - 2 * ow, r0,
                                                   r1, r2, r3, xi0, xi1);
                        }
                    }
                    for (int j = 0; j < 4; ++j)
                        std::copy_n(accbuf.data() + size_t(j) * in_w, in_w,
                                    dx.plane(i, ci + j) + size_t(ih) * in_w);
                }
            }
            for (; ci + 2 <= p.in_ch && (k == 3 || k == 1); ci += 2) {
                for (int ih = 0; ih < in_h; ++ih) {
                    for (int x = 0; x < in_w; ++x) a0[x] = 0;
                    for (int x = 0; x < in_w; ++x) a1[x] = 0;
                    const bool fuse = k == 3 && ih + pd - 2 >= 0 && ih + pd < oh;
                    for (int co = 0; co < p.out_ch; ++co) {
                        const T* up = u.plane(i, co);
                        const T* wco = &p.w.at(co, ci, 0, 0);
                        for (int kh = 0; kh < k; ++kh) {
                            const int y = ih + pd - kh;
                            if (y < 0 || y >= oh) continue;
                            const T* urow = up + size_t(y) * ow;
                            const T* k0 = wco + size_t(kh) * k;
                            const T* k1 = k0 + kk;
                            convdetail::edge_taps_rev(a0, urow, k0, k, pd, 0, xi0, ow);
                            convdetail::edge_taps_rev(a1, urow, k1, k, pd, 0, xi0, ow);
                            if (!fuse) {
                                if (k == 3) {
                                    const T r0[3] = {k0[2], k0[1], k0[0]};
                                    const T r1[3] = {k1[2], k1[1], k1[0]};
                                    convdetail::rows2_tap3(a0, a1, urow + pd - 2, r0, r1, xi0,
                                                           xi1);
                                } else {
                                    convdetail::rows2_tap1(a0, a1, urow + pd, k0[0], k1[0], xi0,
                                                           xi1);
                                }
                            }
                            convdetail::edge_taps_rev(a0, urow, k0, k, pd, xi1, in_w, ow);
                            convdetail::edge_taps_rev(a1, urow, k1, k, pd, xi1, in_w, ow);
                        }
                        if (fuse) {
                            T r0[9], r1[9];
                            for (int j = 0; j < 3; ++j)
                                for (int t = 0; t < 3; ++t) {
                                    r0[j * 3 + t] = wco[j * 3 + 2 - t];
                                    r1[j * 3 + t] = wco[kk + j * 3 + 2 - t];
                                }
                            const T* b0 = up + size_t(ih + pd) * ow + pd - 2;
                            convdetail::rows2_tap9(a0, a1, b0, b0 - ow, b0 - 2 * ow, r0, r1, xi0,
                                                   xi1);
                        }
                    }
                    std::copy_n(a0, in_w, dx.plane(i, ci + 0) + size_t(ih) * in_w);
                    std::copy_n(a1, in_w, dx.plane(i, ci + 1) + size_t(ih) * in_w);
                }
            }
            for (; ci < p.in_ch; ++ci) {
                T* dp = dx.plane(i, ci);
                for (int ih = 0; ih < in_h; ++ih) {
                    for (int x = 0; x < in_w; ++x) a0[x] = 0;
                    for (int co = 0; co < p.out_ch; ++co) {
                        const T* up = u.plane(i, co);
                        const T* wci = &p.w.at(co, ci, 0, 0);
                        for (int kh = 0; kh < k; ++kh) {
                            const int y = ih + pd - kh;
                            if (y < 0 || y >= oh) continue;
                            convdetail::row_taps_accum_rev(a0, up + size_t(y) * ow,
                                                           wci + size_t(kh) * k, k, pd, in_w, ow);
                        }
                    }
                    std::copy_n(a0, in_w, dp + size_t(ih) * in_w);
                }
            }
        }
        return dx;
    }
    for (int i = 0; i < u.n; ++i) {
        for (int ci = 0; ci < p.in_ch; ++ci) {
            T* dp = dx.plane(i, ci);
            for (int co = 0; co < p.out_ch; ++co) {
                const T* up = u.plane(i, co);
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const T wv = p.w.at(co, ci, kh, kw);
                        for (int y = 0; y < oh; ++y) {
                            const int ih = y * s + kh - pd;
                            if (ih < 0 || ih >= in_h) continue;
                            int x0 = 0;
                            while (x0 < ow && x0 * s + kw - pd < 0) ++x0;
                            int x1 = ow;
                            while (x1 > x0 && (x1 - 1) * s + kw - pd >= in_w) --x1;
                            const T* urow = up + size_t(y) * ow;
                            T* drow = dp + size_t(ih) * in_w + (kw - pd);
                            for (int x = x0; x < x1; ++x) drow[size_t(x) * s] += wv * urow[x];
                        }
                    }
                }
            }
        }
    }
    return dx;
}

// Weight gradient. Rows accumulate into a fixed set of lanes that are summed
// in index order at the end: the lane count is a compile-time constant, so
// the reduction order is fixed (reproducible) yet the chunk loop vectorizes.
// The stride-1 3x3 path computes the three tap positions of each kernel row
// in one fused pass; edge columns fold into per-tap scalar terms.
template <typename T>
Tensor4<T> conv2d_dense_grad_weight(const Tensor4<T>& u, const Tensor4<T>& f, const ConvParams<T>& p) {
    const int oh = u.h, ow = u.w;
    Tensor4<T> dw(p.out_ch, p.in_ch, p.k, p.k);
    const int s = p.stride, pd = p.pad, k = p.k;
    constexpr int kLanes = int(64 / sizeof(T));
    if (s == 1 && k == 3) {
        const int xa = std::min(ow, std::max(0, pd));
        const int xb = std::max(xa, std::min(ow, f.w + pd - 2));
        int co = 0;
        // Blocks of four output channels share every load of the input row.
        for (; co + 4 <= p.out_ch; co += 4) {
            for (int ci = 0; ci < p.in_ch; ++ci) {
                for (int kh = 0; kh < k; ++kh) {
                    using LO = convdetail::LaneOps<T>;
                    typename LO::vec L00 = LO::zero(), L01 = LO::zero(), L02 = LO::zero();
                    typename LO::vec L10 = LO::zero(), L11 = LO::zero(), L12 = LO::zero();
                    typename LO::vec L20 = LO::zero(), L21 = LO::zero(), L22 = LO::zero();
                    typename LO::vec L30 = LO::zero(), L31 = LO::zero(), L32 = LO::zero();
                    T e00 = 0, e01 = 0, e02 = 0, e10 = 0, e11 = 0, e12 = 0;
                    T e20 = 0, e21 = 0, e22 = 0, e30 = 0, e31 = 0, e32 = 0;
                    for (int i = 0; i < u.n; ++i) {
                        const T* up0 = u.plane(i, co + 0);
                        const T* up1 = u.plane(i, co + 1);
                        const T* up2 = u.plane(i, co + 2);
                        const T* up3 = u.plane(i, co + 3);
                        const T* ip = f.plane(i, ci);
                        for (int y = 0; y < oh; ++y) {
                            const int ih = y + kh - pd;
                            if (ih < 0 || ih >= f.h) continue;
                            const T* u0 = up0 + size_t(y) * ow;
                            const T* u1 = up1 + size_t(y) * ow;
                            const T* u2 = up2 + size_t(y) * ow;
                            const T* u3 = up3 + size_t(y) * ow;
                            const T* irow = ip + size_t(ih) * f.w;
                            for (int x = 0; x < xa; ++x) {
                                const int ix = x - pd;
                                if (ix >= 0 && ix < f.w) {
                                    const T bv = irow[ix];
                                    e00 += u0[x] * bv;
                                    e10 += u1[x] * bv;
                                    e20 += u2[x] * bv;
                                    e30 += u3[x] * bv;
                                }
                                if (ix + 1 >= 0 && ix + 1 < f.w) {
                                    const T bv = irow[ix + 1];
                                    e01 += u0[x] * bv;
                                    e11 += u1[x] * bv;
                                    e21 += u2[x] * bv;
                                    e31 += u3[x] * bv;
                                }
                                if (ix + 2 >= 0 && ix + 2 < f.w) {
                                    const T bv = irow[ix + 2];
                                    e02 += u0[x] * bv;
                                    e12 += u1[x] * bv;
                                    e22 += u2[x] * bv;
                                    e32 += u3[x] * bv;
                                }
                            }
                            const T* a0 = u0 + xa;
                            const T* a1 = u1 + xa;
                            const T* a2 = u2 + xa;
                            const T* a3 = u3 + xa;
                            const T* b = irow + xa - pd;
                            const int len = xb - xa;
                            int x = 0;
                            for (; x + kLanes <= len; x += kLanes) {
                                const typename LO::vec b0 = LO::load(b + x);
                                const typename LO::vec b1 = LO::load(b + x + 1);
                                const typename LO::vec b2 = LO::load(b + x + 2);
                                const typename LO::vec v0 = LO::load(a0 + x);
                                LO::fma(L00, v0, b0);
                                LO::fma(L01, v0, b1);
                                LO::fma(L02, v0, b2);
                                const typename LO::vec v1 = LO::load(a1 + x);
                                LO::fma(L10, v1, b0);
                                LO::fma(L11, v1, b1);
                                LO::fma(L12, v1, b2);
                                const typename LO::vec v2 = LO::load(a2 + x);
                                LO::fma(L20, v2, b0);
                                LO::fma(L21, v2, b1);
                                LO::fma(L22, v2, b2);
                                const typename LO::vec v3 = LO::load(a3 + x);
                                LO::fma(L30, v3, b0);
                                LO::fma(L31, v3, b1);
                                LO::fma(L32, v3, b2);
                            }
                            if (x < len) {
                                // Zero-padded tail: the padded products are
                                // exact zeros, so the full-width body applies.
                                const size_t rem = size_t(len - x);
                                T ba[kLanes + 2] = {};
                                T t0[kLanes] = {}, t1[kLanes] = {}, t2[kLanes] = {},
                                  t3[kLanes] = {};
                                std::memcpy(ba, b + x, (rem + 2) * sizeof(T));
                                std::memcpy(t0, a0 + x, rem * sizeof(T));
                                std::memcpy(t1, a1 + x, rem * sizeof(T));
                                std::memcpy(t2, a2 + x, rem * sizeof(T));
                                std::memcpy(t3, a3 + x, rem * sizeof(T));
                                const typename LO::vec b0 = LO::load(ba);
                                const typename LO::vec b1 = LO::load(ba + 1);
                                const typename LO::vec b2 = LO::load(ba + 2);
                                const typename LO::vec v0 = LO::load(t0);
                                LO::fma(L00, v0, b0);
                                LO::fma(L01, v0, b1);
                                LO::fma(L02, v0, b2);
                                const typename LO::vec v1 = LO::load(t1);
                                LO::fma(L10, v1, b0);
                                LO::fma(L11, v1, b1);
                                LO::fma(L12, v1, b2);
                                const typename LO::vec v2 = LO::load(t2);
                                LO::fma(L20, v2, b0);
                                LO::fma(L21, v2, b1);
                                LO::fma(L22, v2, b2);
                                const typename LO::vec v3 = LO::load(t3);
                                LO::fma(L30, v3, b0);
                                LO::fma(L31, v3, b1);
                                LO::fma(L32, v3, b2);
                            }
                            for (int xe = xb; xe < ow; ++xe) {
                                const int ix = xe - pd;
                                if (ix >= 0 && ix < f.w) {
                                    const T bv = irow[ix];
                                    e00 += u0[xe] * bv;
                                    e10 += u1[xe] * bv;
                                    e20 += u2[xe] * bv;
                                    e30 += u3[xe] * bv;
                                }
                                if (ix + 1 >= 0 && ix + 1 < f.w) {
                                    const T bv = irow[ix + 1];
                                    e01 += u0[xe] * bv;
                                    e11 += u1[xe] * bv;
                                    e21 += u2[xe] * bv;
                                    e31 += u3[xe] * bv;
                                }
                                if (ix + 2 >= 0 && ix + 2 < f.w) {
                                    const T bv = irow[ix + 2];
                                    e02 += u0[xe] * bv;
                                    e12 += u1[xe] * bv;
                                    e22 += u2[xe] * bv;
                                    e32 += u3[xe] * bv;
                                }
                            }
                        }
                    }
                    T s00 = 0, s01 = 0, s02 = 0, s10 = 0, s11 = 0, s12 = 0;
                    T s20 = 0, s21 = 0, s22 = 0, s30 = 0, s31 = 0, s32 = 0;
                    for (int j = 0; j < kLanes; ++j) {
                        s00 += LO::lane(L00, j);
                        s01 += LO::lane(L01, j);
                        s02 += LO::lane(L02, j);
                        s10 += LO::lane(L10, j);
                        s11 += LO::lane(L11, j);
                        s12 += LO::lane(L12, j);
                        s20 += LO::lane(L20, j);
                        s21 += LO::lane(L21, j);
                        s22 += LO::lane(L22, j);
                        s30 += LO::lane(L30, j);
                        s31 += LO::lane(L31, j);
                        s32 += LO::lane(L32, j);
                    }
                    dw.at(co + 0, ci, kh, 0) = s00 + e00;
                    dw.at(co + 0, ci, kh, 1) = s01 + e01;
                    dw.at(co + 0, ci, kh, 2) = s02 + e02;
                    dw.at(co + 1, ci, kh, 0) = s10 + e10;
                    dw.at(co + 1, ci, kh, 1) = s11 + e11;
                    dw.at(co + 1, ci, kh, 2) = s12 + e12;
                    dw.at(co + 2, ci, kh, 0) = s20 + e20;
                    dw.at(co + 2, ci, kh, 1) = s21 + e21;
                    dw.at(co + 2, ci, kh, 2) = s22 + e22;
                    dw.at(co + 3, ci, kh, 0) = s30 + e30;
                    dw.at(co + 3, ci, kh, 1) = s31 + e31;
                    dw.at(co + 3, ci, kh, 2) = s32 + e32;
                }
            }
        }
        for (; co + 2 <= p.out_ch; co += 2) {
            for (int ci = 0; ci < p.in_ch; ++ci) {
                for (int kh = 0; kh < k; ++kh) {
                    using LO = convdetail::LaneOps<T>;
                    typename LO::vec L00 = LO::zero(), L01 = LO::zero(), L02 = LO::zero();
                    typename LO::vec L10 = LO::zero(), L11 = LO::zero(), L12 = LO::zero();
                    T e00 = 0, e01 = 0, e02 = 0, e10 = 0, e11 = 0, e12 = 0;
                    for (int i = 0; i < u.n; ++i) {
                        const T* up0 = u.plane(i, co + 0);
                        const T* up1 = u.plane(i, co + 1);
                        const T* ip = f.plane(i, ci);
                        for (int y = 0; y < oh; ++y) {
                            const int ih = y + kh - pd;
                            if (ih < 0 || ih >= f.h) continue;
                            const T* u0 = up0 + size_t(y) * ow;
                            const T* u1 = up1 + size_t(y) * ow;
                            const T* irow = ip + size_t(ih) * f.w;
                            for (int x = 0; x < xa; ++x) {
                                const int ix = x - pd;
                                if (ix >= 0 && ix < f.w) {
                                    const T bv = irow[ix];
                                    e00 += u0[x] * bv;
                                    e10 += u1[x] * bv;
                                }
                                if (ix + 1 >= 0 && ix + 1 < f.w) {
                                    const T bv = irow[ix + 1];
                                    e01 += u0[x] * bv;
                                    e11 += u1[x] * bv;
                                }
                                if (ix + 2 >= 0 && ix + 2 < f.w) {
                                    const T bv = irow[ix + 2];
                                    e02 += u0[x] * bv;
                                    e12 += u1[x] * bv;
                                }
                            }
                            const T* a0 = u0 + xa;
                            const T* a1 = u1 + xa;
                            const T* b = irow + xa - pd;
                            const int len = xb - xa;
                            int x = 0;
                            for (; x + kLanes <= len; x += kLanes) {
                                const typename LO::vec b0 = LO::load(b + x);
                                const typename LO::vec b1 = LO::load(b + x + 1);
                                const typename LO::vec b2 = LO::load(b + x + 2);
                                const typename LO::vec v0 = LO::load(a0 + x);
                                LO::fma(L00, v0, b0);
                                LO::fma(L01, v0, b1);
                                LO::fma(L02, v0, b2);
                                const typename LO::vec v1 = LO::load(a1 + x);
                                LO::fma(L10, v1, b0);
                                LO::fma(L11, v1, b1);
                                LO::fma(L12, v1, b2);
                            }
                            if (x < len) {
                                const size_t rem = size_t(len - x);
                                T ba[kLanes + 2] = {};
                                T t0[kLanes] = {}, t1[kLanes] = {};
                                std::memcpy(ba, b + x, (rem + 2) * sizeof(T));
                                std::memcpy(t0, a0 + x, rem * sizeof(T));
                                std::memcpy(t1, a1 + x, rem * sizeof(T));
                                const typename LO::vec b0 = LO::load(ba);
                                const typename LO::vec b1 = LO::load(ba + 1);
                                const typename LO::vec b2 = LO::load(ba + 2);
                                const typename LO::vec v0 = LO::load(t0);
                                LO::fma(L00, v0, b0);
                                LO::fma(L01, v0, b1);
                                LO::fma(L02, v0, b2);
                                const typename LO::vec v1 = LO::load(t1);
                                LO::fma(L10, v1, b0);
                                LO::fma(L11, v1, b1);
                                LO::fma(L12, v1, b2);
                            }
                            for (int xe = xb; xe < ow; ++xe) {
                                const int ix = xe - pd;
                                if (ix >= 0 && ix < f.w) {
                                    const T bv = irow[ix];
                                    e00 += u0[xe] * bv;
                                    e10 += u1[xe] * bv;
                                }
                                if (ix + 1 >= 0 && ix + 1 < f.w) {
                                    const T bv = irow[ix + 1];
                                    e01 += u0[xe] * bv;
                                    e11 += u1[xe] * bv;
                                }
                                if (ix + 2 >= 0 && ix + 2 < f.w) {
                                    const T bv = irow[ix + 2];
                                    e02 += u0[xe] * bv;
                                    e12 += u1[xe] * bv;
                                }
                            }
                        }
                    }
                    T s00 = 0, s01 = 0, s02 = 0, s10 = 0, s11 = 0, s12 = 0;
                    for (int j = 0; j < kLanes; ++j) {
                        s00 += LO::lane(L00, j);
                        s01 += LO::lane(L01, j);
                        s02 += LO::lane(L02, j);
                        s10 += LO::lane(L10, j);
                        s11 += LO::lane(L11, j);
                        s12 += LO::lane(L12, j);
                    }
                    dw.at(co + 0, ci, kh, 0) = s00 + e00;
                    dw.at(co + 0, ci, kh, 1) = s01 + e01;
                    dw.at(co + 0, ci, kh, 2) = s02 + e02;
                    dw.at(co + 1, ci, kh, 0) = s10 + e10;
                    dw.at(co + 1, ci, kh, 1) = s11 + e11;
                    dw.at(co + 1, ci, kh, 2) = s12 + e12;
                }
            }
        }
        for (; co < p.out_ch; ++co) {
            for (int ci = 0; ci < p.in_ch; ++ci) {
                for (int kh = 0; kh < k; ++kh) {
                    using LO = convdetail::LaneOps<T>;
                    typename LO::vec Ln0 = LO::zero(), Ln1 = LO::zero(), Ln2 = LO::zero();
                    T e0 = 0, e1 = 0, e2 = 0;
                    for (int i = 0; i < u.n; ++i) {
                        const T* up = u.plane(i, co);
                        const T* ip = f.plane(i, ci);
                        for (int y = 0; y < oh; ++y) {
                            const int ih = y + kh - pd;
                            if (ih < 0 || ih >= f.h) continue;
                            const T* urow = up + size_t(y) * ow;
                            const T* irow = ip + size_t(ih) * f.w;
                            for (int x = 0; x < xa; ++x) {
                                const int ix = x - pd;
                                if (ix >= 0 && ix < f.w) e0 += urow[x] * irow[ix];
                                if (ix + 1 >= 0 && ix + 1 < f.w) e1 += urow[x] * irow[ix + 1];
                                if (ix + 2 >= 0 && ix + 2 < f.w) e2 += urow[x] * irow[ix + 2];
                            }
                            const T* a = urow + xa;
                            const T* b = irow + xa - pd;
                            const int len = xb - xa;
                            int x = 0;
                            for (; x + kLanes <= len; x += kLanes) {
                                const typename LO::vec av = LO::load(a + x);
                                LO::fma(Ln0, av, LO::load(b + x));
                                LO::fma(Ln1, av, LO::load(b + x + 1));
                                LO::fma(Ln2, av, LO::load(b + x + 2));
                            }
                            if (x < len) {
                                const size_t rem = size_t(len - x);
                                T ba[kLanes + 2] = {};
                                T ta[kLanes] = {};
                                std::memcpy(ba, b + x, (rem + 2) * sizeof(T));
                                std::memcpy(ta, a + x, rem * sizeof(T));
                                const typename LO::vec av = LO::load(ta);
                                LO::fma(Ln0, av, LO::load(ba));
                                LO::fma(Ln1, av, LO::load(ba + 1));
                                LO::fma(Ln2, av, LO::load(ba + 2));
                            }
                            for (int xe = xb; xe < ow; ++xe) {
                                const int ix = xe - pd;
                                if (ix >= 0 && ix < f.w) e0 += urow[xe] * irow[ix];
                                if (ix + 1 >= 0 && ix + 1 < f.w) e1 += urow[xe] * irow[ix + 1];
                                if (ix + 2 >= 0 && ix + 2 < f.w) e2 += urow[xe] * irow[ix + 2];
                            }
                        }
                    }
                    T s0 = 0, s1 = 0, s2 = 0;
                    for (int j = 0; j < kLanes; ++j) {
                        s0 += LO::lane(Ln0, j);
                        s1 += LO::lane(Ln1, j);
                        s2 += LO::lane(Ln2, j);
                    }
                    dw.at(co, ci, kh, 0) = s0 + e0;
                    dw.at(co, ci, kh, 1) = s1 + e1;
                    dw.at(co, ci, kh, 2) = s2 + e2;
                }
            }
        }
        return dw;
    }
    for (int co = 0; co < p.out_ch; ++co) {
        for (int ci = 0; ci < p.in_ch; ++ci) {
            for (int kh = 0; kh < k; ++kh) {
                for (int kw = 0; kw < k; ++kw) {
                    using LO = convdetail::LaneOps<T>;
                    typename LO::vec Lg = LO::zero();
                    for (int i = 0; i < u.n; ++i) {
                        const T* up = u.plane(i, co);
                        const T* ip = f.plane(i, ci);
                        for (int y = 0; y < oh; ++y) {
                            const int ih = y * s + kh - pd;
                            if (ih < 0 || ih >= f.h) continue;
                            int x0 = 0;
                            while (x0 < ow && x0 * s + kw - pd < 0) ++x0;
                            int x1 = ow;
                            while (x1 > x0 && (x1 - 1) * s + kw - pd >= f.w) --x1;
                            const T* urow = up + size_t(y) * ow;
                            const T* irow = ip + size_t(ih) * f.w + (kw - pd);
                            const int len = x1 - x0;
                            const T* a = urow + x0;
                            int x = 0;
                            if (s == 1) {
                                const T* b = irow + x0;
                                for (; x + kLanes <= len; x += kLanes)
                                    LO::fma(Lg, LO::load(a + x), LO::load(b + x));
                                if (x < len) {
                                    const size_t rem = size_t(len - x);
                                    T ta[kLanes] = {}, tb[kLanes] = {};
                                    std::memcpy(ta, a + x, rem * sizeof(T));
                                    std::memcpy(tb, b + x, rem * sizeof(T));
                                    LO::fma(Lg, LO::load(ta), LO::load(tb));
                                }
                            } else {
                                // Strided taps gather into a contiguous row
                                // first; the lane mapping matches unit stride.
                                T bg[kLanes];
                                for (; x + kLanes <= len; x += kLanes) {
                                    for (int j = 0; j < kLanes; ++j)
                                        bg[j] = irow[size_t(x0 + x + j) * s];
                                    LO::fma(Lg, LO::load(a + x), LO::load(bg));
                                }
                                if (x < len) {
                                    const size_t rem = size_t(len - x);
                                    T ta[kLanes] = {}, tb[kLanes] = {};
                                    std::memcpy(ta, a + x, rem * sizeof(T));
                                    for (size_t j = 0; j < rem; ++j)
                                        tb[j] = irow[size_t(x0 + x) * s + j * s];
                                    LO::fma(Lg, LO::load(ta), LO::load(tb));
                                }
                            }
                        }
                    }
                    T acc = 0;
                    for (int j = 0; j < kLanes; ++j) acc += LO::lane(Lg, j);
                    dw.at(co, ci, kh, kw) = acc;
                }
            }
        }
    }
    return dw;
}

template <typename T>
Tensor4<T> conv2d_dense_grad_bias(const Tensor4<T>& u) {
    Tensor4<T> db(1, u.c, 1, 1);
    for (int co = 0; co < u.c; ++co) {
        T acc = 0;
        for (int i = 0; i < u.n; ++i) {
            const T* up = u.plane(i, co);
            for (size_t t = 0; t < size_t(u.h) * u.w; ++t) acc += up[t];
        }
        db.v[co] = acc;
    }
    return db;
}

} // namespace spair

#endif
