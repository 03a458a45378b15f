// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_BENCH_HPP
#define SPAIR_BENCH_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <tuple>
#include <vector>

#include "spair/guided.hpp"

namespace spair {

// Sparse-vs-dense cost measurement. Wall times are medians over `repeats`
// timed runs after one untimed warm-up; MAC counts come from the exact
// per-call enumeration probes, so they are deterministic. Everything runs on
// one thread.

struct BenchRow {
    std::string op;
    int h = 0, w = 0, c = 0;
    double density = 0.0;
    int64_t wall_ns_median = 0;
    uint64_t mac_count = 0;
};

namespace benchdetail {

// Mask with exactly round(density * h * w) distorted cells, chosen uniformly.
template <typename T>
Mask<T> exact_density_mask(int h, int w, double density, Rng& rng) {
    const size_t total = size_t(h) * w;
    const size_t k = size_t(std::lround(density * double(total)));
    std::vector<size_t> cells(total);
    for (size_t i = 0; i < total; ++i) cells[i] = i;
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + size_t(rng.below(uint64_t(total - i)));
        std::swap(cells[i], cells[j]);
    }
    Mask<T> m(1, h, w);
    for (size_t i = 0; i < k; ++i) m.v[cells[i]] = T(1);
    return m;
}

template <typename Fn>
int64_t median_wall_ns(int repeats, const Fn& fn) {
    fn(); // warm-up, excluded
    std::vector<int64_t> ns(static_cast<size_t>(repeats));
    for (auto& sample : ns) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        sample = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    }
    std::sort(ns.begin(), ns.end());
    return ns[ns.size() / 2];
}

// Defeats dead-code elimination of the benchmarked calls.
inline volatile double bench_sink = 0.0;

template <typename T>
void consume(const Tensor4<T>& t) {
    bench_sink = bench_sink + double(t.v[0]) + double(t.v[t.v.size() - 1]);
}

} // namespace benchdetail

// Measures conv2d_dense (the dense reference, at density 1.0 only),
// sparse_conv (3x3, same channel count), and snl_step across mask densities.
// snl_step runs with the all-pixels source policy so the sweep varies only
// the target set; its density-1.0 row is full-grid attention.
template <typename T = float>
std::vector<BenchRow> bench_sparse(const std::vector<std::pair<int, int>>& resolutions,
                                   const std::vector<int>& widths,
                                   const std::vector<double>& densities, int repeats,
                                   uint64_t seed = 1) {
    require(repeats >= 1, "bench_sparse: repeats must be positive");
    for (double d : densities)
        require(d >= 0.0 && d <= 1.0, "bench_sparse: densities must lie in [0, 1]");

    std::vector<BenchRow> rows;
    Rng rng(seed);
    for (const auto& [h, w] : resolutions) {
        for (int c : widths) {
            const Tensor4<T> f = random_tensor<T>(1, c, h, w, rng);
            ConvParams<T> conv = make_conv_params<T>(c, c, 3, 1, 1);
            init_conv_params(conv, rng);
            ConvParams<T> fusion = make_conv_params<T>(c, 4, 1, 1, 0);
            init_conv_params(fusion, rng);

            BenchRow dense{"dense_conv", h, w, c, 1.0, 0, 0};
            dense.mac_count = conv2d_dense_mac_count(1, h, w, conv);
            dense.wall_ns_median = benchdetail::median_wall_ns(
                repeats, [&] { benchdetail::consume(conv2d_dense(f, conv)); });
            rows.push_back(dense);

            for (double d : densities) {
                const Mask<T> m = benchdetail::exact_density_mask<T>(h, w, d, rng);

                BenchRow sc{"sparse_conv", h, w, c, d, 0, 0};
                OpCount sc_cost;
                benchdetail::consume(sparse_conv(f, m, conv, &sc_cost));
                sc.mac_count = sc_cost.macs;
                sc.wall_ns_median = benchdetail::median_wall_ns(
                    repeats, [&] { benchdetail::consume(sparse_conv(f, m, conv)); });
                rows.push_back(sc);

                BenchRow snl{"snl_step", h, w, c, d, 0, 0};
                OpCount snl_cost;
                benchdetail::consume(snl_step(f, m, fusion, SnlPolicy::all_pixels, &snl_cost));
                snl.mac_count = snl_cost.macs;
                snl.wall_ns_median = benchdetail::median_wall_ns(repeats, [&] {
                    benchdetail::consume(snl_step(f, m, fusion, SnlPolicy::all_pixels));
                });
                rows.push_back(snl);
            }
        }
    }
    return rows;
}

// Stable-ordered CSV (sorted by op, h, w, c, density) with a thread-count
// metadata line. Only wall_ns_median varies between runs of the same config.
inline std::string bench_csv(std::vector<BenchRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const BenchRow& a, const BenchRow& b) {
        return std::tie(a.op, a.h, a.w, a.c, a.density) <
               std::tie(b.op, b.h, b.w, b.c, b.density);
    });
    std::string out = "# threads=1\nop,h,w,c,density,wall_ns_median,mac_count\n";
    char buf[160];
    for (const BenchRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%g,%lld,%llu\n", r.op.c_str(), r.h, r.w, r.c,
                      r.density, static_cast<long long>(r.wall_ns_median),
                      static_cast<unsigned long long>(r.mac_count));
        out += buf;
    }
    return out;
}

} // namespace spair

#endif
