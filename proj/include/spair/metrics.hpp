// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_METRICS_HPP
#define SPAIR_METRICS_HPP

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "spair/ops.hpp"

namespace spair {

// PSNR values at or above this are reported as the sentinel (identical
// images would otherwise be +inf).
inline constexpr double kPsnrCap = 99.0;

namespace metricdetail {

template <typename T>
double mse_over(const Tensor4<T>& a, const Tensor4<T>& b, const Mask<T>* region) {
    require(a.same_shape(b), "mse: shape mismatch");
    if (region)
        require(region->n == a.n && region->h == a.h && region->w == a.w,
                "mse: region shape mismatch");
    double sum = 0.0;
    uint64_t count = 0;
    for (int i = 0; i < a.n; ++i)
        for (int c = 0; c < a.c; ++c)
            for (int y = 0; y < a.h; ++y)
                for (int x = 0; x < a.w; ++x) {
                    if (region && region->v[size_t(region->idx(i, y, x))] == T(0)) continue;
                    const double d = double(a.v[size_t(a.idx(i, c, y, x))]) -
                                     double(b.v[size_t(b.idx(i, c, y, x))]);
                    sum += d * d;
                    ++count;
                }
    require(count > 0, "mse: empty region");
    return sum / double(count);
}

} // namespace metricdetail

template <typename T>
double psnr(const Tensor4<T>& a, const Tensor4<T>& b, double peak = 1.0,
            const Mask<T>* region = nullptr) {
    const double mse = metricdetail::mse_over(a, b, region);
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

// Rec. 601 luma projection of an RGB tensor.
template <typename T>
Tensor4<T> to_luma(const Tensor4<T>& rgb) {
    require(rgb.c == 3, "to_luma: expected 3 channels");
    Tensor4<T> y(rgb.n, 1, rgb.h, rgb.w);
    for (int i = 0; i < rgb.n; ++i)
        for (int p = 0; p < rgb.h * rgb.w; ++p) {
            const T* r = rgb.v.data() + rgb.idx(i, 0, 0, 0);
            const T* g = rgb.v.data() + rgb.idx(i, 1, 0, 0);
            const T* b = rgb.v.data() + rgb.idx(i, 2, 0, 0);
            y.v[size_t(y.idx(i, 0, 0, 0) + p)] =
                T(0.299) * r[p] + T(0.587) * g[p] + T(0.114) * b[p];
        }
    return y;
}

template <typename T>
double psnr_y(const Tensor4<T>& a, const Tensor4<T>& b, double peak = 1.0,
              const Mask<T>* region = nullptr) {
    return psnr(to_luma(a), to_luma(b), peak, region);
}

// Mean SSIM with the standard 11x11 Gaussian window (sigma 1.5), valid
// windows only, averaged over channels.
template <typename T>
double ssim(const Tensor4<T>& a, const Tensor4<T>& b, double peak = 1.0) {
    require(a.same_shape(b), "ssim: shape mismatch");
    constexpr int kWin = 11;
    require(a.h >= kWin && a.w >= kWin, "ssim: image smaller than the 11x11 window");
    double g1[kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - (kWin - 1) / 2.0;
        g1[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        wsum += g1[i];
    }
    for (double& g : g1) g /= wsum;
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);

    double total = 0.0;
    uint64_t windows = 0;
    for (int i = 0; i < a.n; ++i)
        for (int c = 0; c < a.c; ++c)
            for (int y = 0; y + kWin <= a.h; ++y)
                for (int x = 0; x + kWin <= a.w; ++x) {
                    double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                    for (int ky = 0; ky < kWin; ++ky) {
                        const T* ra = a.row(i, c, y + ky) + x;
                        const T* rb = b.row(i, c, y + ky) + x;
                        for (int kx = 0; kx < kWin; ++kx) {
                            const double w = g1[ky] * g1[kx];
                            const double va = ra[kx];
                            const double vb = rb[kx];
                            mx += w * va;
                            my += w * vb;
                            mxx += w * va * va;
                            myy += w * vb * vb;
                            mxy += w * va * vb;
                        }
                    }
                    const double vx = mxx - mx * mx;
                    const double vy = myy - my * my;
                    const double cov = mxy - mx * my;
                    total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                             ((mx * mx + my * my + c1) * (vx + vy + c2));
                    ++windows;
                }
    return total / double(windows);
}

// Relative error reduction of `method` against `ref`, both as fractions.
// PSNR maps to RMSE via rmse ∝ 10^{-psnr/20}; SSIM maps to DSSIM=(1-s)/2.
struct ErrorReduction {
    double rmse_reduction;
    double dssim_reduction;
};

inline ErrorReduction error_reduction(double psnr_ref, double psnr_method, double ssim_ref,
                                      double ssim_method) {
    ErrorReduction r;
    r.rmse_reduction = 1.0 - std::pow(10.0, -(psnr_method - psnr_ref) / 20.0);
    const double d_ref = (1.0 - ssim_ref) / 2.0;
    const double d_m = (1.0 - ssim_method) / 2.0;
    if (d_ref == d_m)
        r.dssim_reduction = 0.0;
    else
        r.dssim_reduction = d_ref == 0.0 ? 0.0 : 1.0 - d_m / d_ref;
    return r;
}

struct MaskPRF {
    double precision;
    double recall;
    double f1;
};

template <typename T>
MaskPRF mask_prf(const Mask<T>& pred, const Mask<T>& gt) {
    require(pred.n == gt.n && pred.h == gt.h && pred.w == gt.w, "mask_prf: shape mismatch");
    uint64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool p = pred.v[i] != T(0);
        const bool g = gt.v[i] != T(0);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    MaskPRF r;
    r.precision = (tp + fp) == 0 ? (fn == 0 ? 1.0 : 0.0) : double(tp) / double(tp + fp);
    r.recall = (tp + fn) == 0 ? 1.0 : double(tp) / double(tp + fn);
    r.f1 = (r.precision + r.recall) == 0.0
               ? 0.0
               : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

struct QualityReport {
    double psnr_db;
    double ssim_val;
    double psnr_clean_region_db;   // over GT-clean pixels
    double psnr_degraded_region_db; // over GT-degraded pixels
    double mask_precision;
    double mask_recall;
    double mask_f1;
};

// A region with no pixels carries no error; its PSNR reports the cap.
template <typename T>
QualityReport evaluate_sample(const Tensor4<T>& restored, const Tensor4<T>& clean,
                              const Mask<T>& pred_mask, const Mask<T>& gt_mask) {
    QualityReport q;
    q.psnr_db = psnr(restored, clean);
    q.ssim_val = ssim(restored, clean);
    const Mask<T> clean_region = invert_mask(gt_mask);
    uint64_t deg = 0;
    for (int i = 0; i < gt_mask.n; ++i) deg += gt_mask.count_ones(i);
    const uint64_t total = uint64_t(gt_mask.n) * gt_mask.h * gt_mask.w;
    q.psnr_clean_region_db = deg == total ? kPsnrCap : psnr(restored, clean, 1.0, &clean_region);
    q.psnr_degraded_region_db = deg == 0 ? kPsnrCap : psnr(restored, clean, 1.0, &gt_mask);
    const MaskPRF prf = mask_prf(pred_mask, gt_mask);
    q.mask_precision = prf.precision;
    q.mask_recall = prf.recall;
    q.mask_f1 = prf.f1;
    return q;
}

inline std::string report_line(int idx, const QualityReport& q) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "sample=%d psnr=%.4f ssim=%.6f psnr_clean=%.4f psnr_deg=%.4f f1=%.6f",
                  idx, q.psnr_db, q.ssim_val, q.psnr_clean_region_db, q.psnr_degraded_region_db,
                  q.mask_f1);
    return buf;
}

inline std::string aggregate_line(const std::vector<QualityReport>& rs) {
    QualityReport m{};
    for (const auto& q : rs) {
        m.psnr_db += q.psnr_db;
        m.ssim_val += q.ssim_val;
        m.psnr_clean_region_db += q.psnr_clean_region_db;
        m.psnr_degraded_region_db += q.psnr_degraded_region_db;
        m.mask_f1 += q.mask_f1;
    }
    const double n = rs.empty() ? 1.0 : double(rs.size());
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "aggregate n=%zu psnr=%.4f ssim=%.6f psnr_clean=%.4f psnr_deg=%.4f f1=%.6f",
                  rs.size(), m.psnr_db / n, m.ssim_val / n, m.psnr_clean_region_db / n,
                  m.psnr_degraded_region_db / n, m.mask_f1 / n);
    return buf;
}

} // namespace spair

#endif
