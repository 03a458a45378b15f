// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_SYNTH_HPP
#define SPAIR_SYNTH_HPP

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "spair/ops.hpp"
#include "spair/rng.hpp"

namespace spair {

// Intensity-difference threshold separating "degraded" from "clean" pixels.
inline constexpr double kMaskTau = 0.1;

enum class Kind { streak, blob, shadow, region_blur };

inline const char* kind_name(Kind k) {
    switch (k) {
        case Kind::streak: return "streak";
        case Kind::blob: return "blob";
        case Kind::shadow: return "shadow";
        case Kind::region_blur: return "region_blur";
    }
    return "?";
}

inline Kind kind_from_name(const std::string& s) {
    if (s == "streak") return Kind::streak;
    if (s == "blob") return Kind::blob;
    if (s == "shadow") return Kind::shadow;
    if (s == "region_blur") return Kind::region_blur;
    throw ShapeError("unknown degradation kind: " + s);
}

inline const std::vector<Kind>& all_kinds() {
    static const std::vector<Kind> k{Kind::streak, Kind::blob, Kind::shadow, Kind::region_blur};
    return k;
}

// mask = 1 where any channel differs by strictly more than tau.
template <typename T>
Mask<T> gt_mask_from_pair(const Tensor4<T>& clean, const Tensor4<T>& degraded,
                          double tau = kMaskTau) {
    require(clean.same_shape(degraded), "gt_mask_from_pair: shape mismatch");
    Mask<T> m(clean.n, clean.h, clean.w);
    for (int i = 0; i < clean.n; ++i)
        for (int y = 0; y < clean.h; ++y)
            for (int x = 0; x < clean.w; ++x) {
                double best = 0.0;
                for (int c = 0; c < clean.c; ++c) {
                    const double d = std::abs(double(degraded.v[size_t(degraded.idx(i, c, y, x))]) -
                                              double(clean.v[size_t(clean.idx(i, c, y, x))]));
                    if (d > best) best = d;
                }
                m.v[size_t(m.idx(i, y, x))] = best > tau ? T(1) : T(0);
            }
    return m;
}

template <typename T>
struct Sample {
    Tensor4<T> clean;
    Tensor4<T> degraded;
    Mask<T> gt_mask;
    Kind kind = Kind::streak;
    uint64_t seed = 0;
    double severity = 1.0;
};

// --- clean image synthesis: sinusoid mixtures plus lattice value noise ---

template <typename T>
Tensor4<T> gen_clean(int h, int w, uint64_t seed, int ch = 3) {
    require(h >= 16 && w >= 16, "gen_clean: image must be at least 16x16");
    Rng rng(seed);
    Tensor4<T> img(1, ch, h, w);
    constexpr int kCell = 8;
    const int gw = w / kCell + 2;
    const int gh = h / kCell + 2;
    std::vector<double> lattice(size_t(gw) * gh);
    struct Wave {
        double amp, fx, fy, phase;
    };
    std::vector<Wave> waves;
    for (int c = 0; c < ch; ++c) {
        const int nw = int(rng.range(4, 8));
        waves.clear();
        for (int k = 0; k < nw; ++k)
            waves.push_back({rng.uniform(0.3, 1.0), rng.uniform(0.5, 5.0), rng.uniform(0.5, 5.0),
                             rng.uniform(0.0, 2.0 * M_PI)});
        for (double& g : lattice) g = rng.uniform(-1.0, 1.0);
        double lo = 1e300, hi = -1e300;
        T* plane = img.plane(0, c);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double v = 0.0;
                for (const Wave& wv : waves)
                    v += wv.amp *
                         std::sin(2.0 * M_PI * (wv.fx * x / w + wv.fy * y / h) + wv.phase);
                const double gx = double(x) / kCell;
                const double gy = double(y) / kCell;
                const int ix = int(gx), iy = int(gy);
                const double tx = gx - ix, ty = gy - iy;
                const double n00 = lattice[size_t(iy) * gw + ix];
                const double n01 = lattice[size_t(iy) * gw + ix + 1];
                const double n10 = lattice[size_t(iy + 1) * gw + ix];
                const double n11 = lattice[size_t(iy + 1) * gw + ix + 1];
                v += 0.3 * ((1 - ty) * ((1 - tx) * n00 + tx * n01) +
                            ty * ((1 - tx) * n10 + tx * n11));
                plane[y * w + x] = T(v);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        const double span = hi - lo;
        for (int p = 0; p < h * w; ++p)
            plane[p] = span < 1e-12
                           ? T(0.5)
                           : T(std::clamp(0.05 + 0.9 * (double(plane[p]) - lo) / span, 0.05, 0.95));
    }
    return img;
}

// --- degradation primitives ---

namespace synthdetail {

struct Streak {
    double x0, y0, x1, y1, half_thick, amount;
};
struct Blob {
    double cx, cy, r, dx, dy, shift;
};
struct Quad {
    double px[4], py[4];
    double factor;
};
struct BlurRegion {
    double cx, cy, rx, ry;
    int k;
};

struct Prims {
    std::vector<Streak> streaks;
    std::vector<Blob> blobs;
    std::vector<Quad> quads;
    std::vector<BlurRegion> blurs;

    size_t total() const { return streaks.size() + blobs.size() + quads.size() + blurs.size(); }
    void drop_last() {
        if (!blurs.empty()) blurs.pop_back();
        else if (!quads.empty()) quads.pop_back();
        else if (!blobs.empty()) blobs.pop_back();
        else if (!streaks.empty()) streaks.pop_back();
    }
};

// Box blur over the valid (clipped) window, separable, count-normalized.
template <typename T>
Tensor4<T> box_blur(const Tensor4<T>& img, int k) {
    require(k >= 1 && k % 2 == 1, "box_blur: odd kernel required");
    const int r = k / 2;
    Tensor4<T> tmp(img.n, img.c, img.h, img.w);
    Tensor4<T> out(img.n, img.c, img.h, img.w);
    for (int i = 0; i < img.n; ++i)
        for (int c = 0; c < img.c; ++c) {
            for (int y = 0; y < img.h; ++y) {
                const T* src = img.row(i, c, y);
                T* dst = tmp.plane(i, c) + size_t(y) * img.w;
                for (int x = 0; x < img.w; ++x) {
                    const int lo = std::max(0, x - r), hi = std::min(img.w - 1, x + r);
                    double s = 0;
                    for (int t = lo; t <= hi; ++t) s += src[t];
                    dst[x] = T(s / (hi - lo + 1));
                }
            }
            for (int x = 0; x < img.w; ++x)
                for (int y = 0; y < img.h; ++y) {
                    const int lo = std::max(0, y - r), hi = std::min(img.h - 1, y + r);
                    double s = 0;
                    for (int t = lo; t <= hi; ++t) s += tmp.plane(i, c)[size_t(t) * img.w + x];
                    out.plane(i, c)[size_t(y) * img.w + x] = T(s / (hi - lo + 1));
                }
        }
    return out;
}

inline double dist_to_segment(double px, double py, double x0, double y0, double x1, double y1) {
    const double vx = x1 - x0, vy = y1 - y0;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - x0) * vx + (py - y0) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (x0 + t * vx), dy = py - (y0 + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

// Additive anti-aliased bright line, equal boost in every channel.
template <typename T>
void apply_streak(Tensor4<T>& img, const Streak& s) {
    const double pad = s.half_thick + 1.0;
    const int y0 = std::max(0, int(std::floor(std::min(s.y0, s.y1) - pad)));
    const int y1 = std::min(img.h - 1, int(std::ceil(std::max(s.y0, s.y1) + pad)));
    const int x0 = std::max(0, int(std::floor(std::min(s.x0, s.x1) - pad)));
    const int x1 = std::min(img.w - 1, int(std::ceil(std::max(s.x0, s.x1) + pad)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d = dist_to_segment(x + 0.5, y + 0.5, s.x0, s.y0, s.x1, s.y1);
            const double cov = std::clamp(s.half_thick + 0.5 - d, 0.0, 1.0);
            if (cov <= 0.0) continue;
            for (int c = 0; c < img.c; ++c)
                img.v[size_t(img.idx(0, c, y, x))] += T(s.amount * cov);
        }
}

// Disk filled with smoothed content copied from a displaced location plus a
// constant intensity shift; 1px anti-aliased rim.
template <typename T>
void apply_blob(Tensor4<T>& img, const Tensor4<T>& smoothed, const Blob& b) {
    const int y0 = std::max(0, int(std::floor(b.cy - b.r - 1)));
    const int y1 = std::min(img.h - 1, int(std::ceil(b.cy + b.r + 1)));
    const int x0 = std::max(0, int(std::floor(b.cx - b.r - 1)));
    const int x1 = std::min(img.w - 1, int(std::ceil(b.cx + b.r + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d = std::hypot(x + 0.5 - b.cx, y + 0.5 - b.cy);
            const double cov = std::clamp(b.r + 0.5 - d, 0.0, 1.0);
            if (cov <= 0.0) continue;
            const int sy = std::clamp(int(std::lround(y + b.dy)), 0, img.h - 1);
            const int sx = std::clamp(int(std::lround(x + b.dx)), 0, img.w - 1);
            for (int c = 0; c < img.c; ++c) {
                T& dst = img.v[size_t(img.idx(0, c, y, x))];
                const double src = double(smoothed.v[size_t(smoothed.idx(0, c, sy, sx))]) + b.shift;
                dst += T(cov * (src - double(dst)));
            }
        }
}

inline bool point_in_quad(const Quad& q, double px, double py) {
    bool pos = false, neg = false;
    for (int i = 0; i < 4; ++i) {
        const int j = (i + 1) % 4;
        const double cross = (q.px[j] - q.px[i]) * (py - q.py[i]) -
                             (q.py[j] - q.py[i]) * (px - q.px[i]);
        pos = pos || cross > 0;
        neg = neg || cross < 0;
    }
    return !(pos && neg);
}

// Multiplicative shade over pixels whose center falls inside the quad.
template <typename T>
void apply_quad(Tensor4<T>& img, const Quad& q) {
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            if (!point_in_quad(q, x + 0.5, y + 0.5)) continue;
            for (int c = 0; c < img.c; ++c) img.v[size_t(img.idx(0, c, y, x))] *= T(q.factor);
        }
}

// Blend a box-blurred copy inside a soft-edged ellipse.
template <typename T>
void apply_blur_region(Tensor4<T>& img, const BlurRegion& rg) {
    const Tensor4<T> blurred = box_blur(img, rg.k);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const double tx = (x + 0.5 - rg.cx) / rg.rx;
            const double ty = (y + 0.5 - rg.cy) / rg.ry;
            const double t = std::sqrt(tx * tx + ty * ty);
            double wgt = std::clamp((1.0 - t) / 0.35, 0.0, 1.0);
            wgt = wgt * wgt * (3.0 - 2.0 * wgt);
            if (wgt <= 0.0) continue;
            for (int c = 0; c < img.c; ++c) {
                T& dst = img.v[size_t(img.idx(0, c, y, x))];
                dst += T(wgt * (double(blurred.v[size_t(blurred.idx(0, c, y, x))]) - double(dst)));
            }
        }
}

inline Prims draw_prims(Kind kind, Rng& rng, double severity, int h, int w) {
    Prims p;
    const double dim = std::min(h, w);
    switch (kind) {
        case Kind::streak: {
            const int count = int(std::lround(severity * rng.uniform(5.0, 40.0)));
            const double theta0 = rng.uniform(0.0, M_PI);
            for (int i = 0; i < count; ++i) {
                const double theta = theta0 + rng.uniform(-M_PI / 6.0, M_PI / 6.0);
                const double len = rng.uniform(0.25, 0.7) * dim;
                const double cx = rng.uniform(0.0, w), cy = rng.uniform(0.0, h);
                const double ux = std::cos(theta) * len / 2.0, uy = std::sin(theta) * len / 2.0;
                p.streaks.push_back({cx - ux, cy - uy, cx + ux, cy + uy,
                                     rng.uniform(0.5, 1.25), rng.uniform(0.3, 0.8)});
            }
            break;
        }
        case Kind::blob: {
            const int count = int(std::lround(severity * rng.uniform(2.0, 10.0)));
            for (int i = 0; i < count; ++i) {
                const double r = rng.uniform(0.03, 0.12) * dim;
                const double cx = rng.uniform(0.0, w), cy = rng.uniform(0.0, h);
                const double dx = rng.uniform(-3.0 * r, 3.0 * r);
                const double dy = rng.uniform(-3.0 * r, 3.0 * r);
                const double mag = rng.uniform(0.2, 0.45);
                p.blobs.push_back({cx, cy, r, dx, dy, rng.chance(0.5) ? mag : -mag});
            }
            break;
        }
        case Kind::shadow: {
            const int count = int(std::lround(severity * rng.uniform(1.0, 3.0)));
            for (int i = 0; i < count; ++i) {
                const double cx = rng.uniform(0.2, 0.8) * w, cy = rng.uniform(0.2, 0.8) * h;
                const double ex = rng.uniform(0.08, 0.25) * dim;
                const double ey = rng.uniform(0.08, 0.25) * dim;
                const double rot = rng.uniform(0.0, M_PI);
                const double cs = std::cos(rot), sn = std::sin(rot);
                Quad q{};
                const double sx[4] = {-ex, ex, ex, -ex};
                const double sy[4] = {-ey, -ey, ey, ey};
                for (int v = 0; v < 4; ++v) {
                    q.px[v] = cx + cs * sx[v] - sn * sy[v];
                    q.py[v] = cy + sn * sx[v] + cs * sy[v];
                }
                q.factor = rng.uniform(0.3, 0.6);
                p.quads.push_back(q);
            }
            break;
        }
        case Kind::region_blur: {
            const int count = int(std::lround(severity * rng.uniform(1.0, 3.0)));
            const int kk[3] = {5, 7, 9};
            for (int i = 0; i < count; ++i) {
                const int k = kk[rng.below(3)];
                p.blurs.push_back({rng.uniform(0.0, double(w)), rng.uniform(0.0, double(h)),
                                   rng.uniform(0.15, 0.35) * w, rng.uniform(0.15, 0.35) * h, k});
            }
            break;
        }
    }
    return p;
}

template <typename T>
Tensor4<T> apply_prims(const Tensor4<T>& clean, const Prims& p) {
    Tensor4<T> img = clean;
    if (!p.blobs.empty()) {
        const Tensor4<T> smoothed = box_blur(clean, 5);
        for (const Streak& s : p.streaks) apply_streak(img, s);
        for (const Blob& b : p.blobs) apply_blob(img, smoothed, b);
    } else {
        for (const Streak& s : p.streaks) apply_streak(img, s);
    }
    for (const Quad& q : p.quads) apply_quad(img, q);
    for (const BlurRegion& r : p.blurs) apply_blur_region(img, r);
    for (T& v : img.v) v = std::clamp(v, T(0), T(1));
    return img;
}

} // namespace synthdetail

// Applies the seeded degradation; trailing primitives are dropped until the
// degraded-pixel fraction is at most one half.
template <typename T>
Sample<T> degrade(const Tensor4<T>& clean, Kind kind, uint64_t seed, double severity) {
    require(clean.n == 1, "degrade: one sample at a time");
    require(severity > 0.0 && severity <= 1.0, "degrade: severity must be in (0,1]");
    Rng rng(seed);
    synthdetail::Prims prims = synthdetail::draw_prims(kind, rng, severity, clean.h, clean.w);
    for (;;) {
        Tensor4<T> deg = synthdetail::apply_prims(clean, prims);
        Mask<T> m = gt_mask_from_pair(clean, deg);
        const double frac = double(m.count_ones(0)) / (double(clean.h) * clean.w);
        if (frac <= 0.5 || prims.total() == 0) {
            Sample<T> s;
            s.clean = clean;
            s.degraded = std::move(deg);
            s.gt_mask = std::move(m);
            s.kind = kind;
            s.seed = seed;
            s.severity = severity;
            return s;
        }
        prims.drop_last();
    }
}

// One sample fully determined by (h, w, kind, seed, severity): the clean
// image and the degradation derive their streams from the same seed.
template <typename T>
Sample<T> make_sample(int h, int w, Kind kind, uint64_t seed, double severity) {
    const Tensor4<T> clean = gen_clean<T>(h, w, derive_seed(seed, 0));
    Sample<T> s = degrade(clean, kind, derive_seed(seed, 1), severity);
    s.seed = seed;
    return s;
}

template <typename T>
std::vector<Sample<T>> make_dataset(int n, const std::vector<Kind>& kinds, uint64_t seed, int h,
                                    int w) {
    require(n >= 1, "make_dataset: need at least one sample");
    require(!kinds.empty(), "make_dataset: need at least one kind");
    std::vector<Sample<T>> out;
    out.reserve(size_t(n));
    for (int i = 0; i < n; ++i) {
        const uint64_t ss = derive_seed(seed, uint64_t(i));
        Rng sev_rng(derive_seed(ss, 2));
        const double severity = sev_rng.uniform(0.35, 1.0);
        out.push_back(make_sample<T>(h, w, kinds[size_t(i) % kinds.size()], ss, severity));
    }
    return out;
}

// --- manifest: one line per sample, %.17g severities round-trip exactly ---

inline std::string manifest_line(int idx, Kind kind, uint64_t seed, double severity) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "idx=%d kind=%s seed=%llu severity=%.17g", idx, kind_name(kind),
                  (unsigned long long)seed, severity);
    return buf;
}

template <typename T>
std::string dataset_manifest(const std::vector<Sample<T>>& samples) {
    std::string out;
    for (size_t i = 0; i < samples.size(); ++i)
        out += manifest_line(int(i), samples[i].kind, samples[i].seed, samples[i].severity) + "\n";
    return out;
}

struct ManifestEntry {
    int idx;
    Kind kind;
    uint64_t seed;
    double severity;
};

inline std::vector<ManifestEntry> parse_manifest(const std::string& text) {
    std::vector<ManifestEntry> entries;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        ManifestEntry e;
        char kind_buf[32];
        unsigned long long seed = 0;
        if (std::sscanf(line.c_str(), "idx=%d kind=%31[a-z_] seed=%llu severity=%lg", &e.idx,
                        kind_buf, &seed, &e.severity) != 4)
            throw ShapeError("manifest: malformed line: " + line);
        e.kind = kind_from_name(kind_buf);
        e.seed = seed;
        entries.push_back(e);
    }
    return entries;
}

template <typename T>
std::vector<Sample<T>> dataset_from_manifest(const std::string& text, int h, int w) {
    std::vector<Sample<T>> out;
    for (const ManifestEntry& e : parse_manifest(text))
        out.push_back(make_sample<T>(h, w, e.kind, e.seed, e.severity));
    return out;
}

} // namespace spair

#endif
