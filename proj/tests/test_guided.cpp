// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "spair/guided.hpp"

using namespace spair;

namespace {

// Dense-path reference for the guided sparse conv: zero out clean inputs,
// run a plain dense conv without bias, then keep masked outputs plus bias.
template <typename T>
Tensor4<T> sparse_conv_oracle(const Tensor4<T>& f, const Mask<T>& m, const ConvParams<T>& p) {
    Tensor4<T> fm = f;
    const size_t hw = size_t(f.h) * f.w;
    for (int i = 0; i < f.n; ++i)
        for (int c = 0; c < f.c; ++c) {
            T* fp = fm.plane(i, c);
            const T* mp = m.plane(i);
            for (size_t t = 0; t < hw; ++t) fp[t] *= mp[t];
        }
    ConvParams<T> nb = p;
    for (auto& x : nb.b.v) x = 0;
    Tensor4<T> dense(f.n, p.out_ch, f.h, f.w);
    {
        // straightforward per-pixel loops, independent of the library path
        const int r = p.k / 2;
        for (int i = 0; i < f.n; ++i)
            for (int co = 0; co < p.out_ch; ++co)
                for (int y = 0; y < f.h; ++y)
                    for (int x = 0; x < f.w; ++x) {
                        T acc = 0;
                        for (int ci = 0; ci < p.in_ch; ++ci)
                            for (int kh = 0; kh < p.k; ++kh)
                                for (int kw = 0; kw < p.k; ++kw) {
                                    const int ih = y + kh - r, iw = x + kw - r;
                                    if (ih < 0 || ih >= f.h || iw < 0 || iw >= f.w) continue;
                                    acc += p.w.at(co, ci, kh, kw) * fm.at(i, ci, ih, iw);
                                }
                        dense.at(i, co, y, x) = acc;
                    }
    }
    Tensor4<T> out(f.n, p.out_ch, f.h, f.w);
    for (int i = 0; i < f.n; ++i)
        for (int co = 0; co < p.out_ch; ++co)
            for (int y = 0; y < f.h; ++y)
                for (int x = 0; x < f.w; ++x)
                    if (m.at(i, y, x) != T(0))
                        out.at(i, co, y, x) = dense.at(i, co, y, x) + p.b.v[co];
    return out;
}

uint64_t sparse_mac_formula(const Mask<double>& m, int in_ch, int out_ch, int k) {
    const int r = k / 2;
    uint64_t total = 0;
    for (int i = 0; i < m.n; ++i)
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x) {
                if (m.at(i, y, x) == 0.0) continue;
                uint64_t neigh = 0;
                for (int kh = 0; kh < k; ++kh)
                    for (int kw = 0; kw < k; ++kw) {
                        const int ny = y + kh - r, nx = x + kw - r;
                        if (ny >= 0 && ny < m.h && nx >= 0 && nx < m.w && m.at(i, ny, nx) != 0.0)
                            ++neigh;
                    }
                total += neigh * uint64_t(in_ch) * out_ch;
            }
    return total;
}

// Naive directional attention following the step definition literally,
// with an unstabilized softmax.
template <typename T>
Tensor4<T> snl_oracle(const Tensor4<T>& f, const Tensor4<T>& e, const Mask<T>& m,
                      SnlPolicy policy) {
    Tensor4<T> out = f;
    const int dirs[4][2] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
    for (int i = 0; i < f.n; ++i)
        for (int y = 0; y < f.h; ++y)
            for (int x = 0; x < f.w; ++x) {
                if (m.at(i, y, x) == T(0)) continue;
                std::vector<T> h(f.c, T(0));
                for (int k = 0; k < 4; ++k) {
                    std::vector<std::pair<int, int>> src;
                    int yy = y + dirs[k][0], xx = x + dirs[k][1];
                    while (yy >= 0 && yy < f.h && xx >= 0 && xx < f.w) {
                        if (policy == SnlPolicy::all_pixels || m.at(i, yy, xx) == T(0))
                            src.emplace_back(yy, xx);
                        yy += dirs[k][0];
                        xx += dirs[k][1];
                    }
                    if (src.empty()) continue;
                    std::vector<T> w(src.size());
                    T z = 0;
                    for (size_t t = 0; t < src.size(); ++t) {
                        T s = 0;
                        for (int c = 0; c < f.c; ++c)
                            s += f.at(i, c, y, x) * f.at(i, c, src[t].first, src[t].second);
                        w[t] = std::exp(s);
                        z += w[t];
                    }
                    for (size_t t = 0; t < src.size(); ++t) {
                        const T o = w[t] / z;
                        for (int c = 0; c < f.c; ++c)
                            h[size_t(c)] += e.at(i, k, y, x) * o * f.at(i, c, src[t].first, src[t].second);
                    }
                }
                for (int c = 0; c < f.c; ++c) out.at(i, c, y, x) = f.at(i, c, y, x) + h[size_t(c)];
            }
    return out;
}

template <typename T>
bool bitwise_equal(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (!a.same_shape(b)) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (std::memcmp(&a.v[i], &b.v[i], sizeof(T)) != 0) return false;
    return true;
}

} // namespace

TEST_CASE("sfm on the quad example") {
    Tensor4<double> f(1, 1, 1, 4);
    f.v = {1, 2, 3, 4};
    const auto m = make_mask<double>(1, 1, 4, {1, 1, 0, 0});
    const auto out = sfm_modulate(f, m);
    CHECK(out.v[0] == Catch::Approx(3.0).margin(1e-9));
    CHECK(out.v[1] == Catch::Approx(4.0).margin(1e-9));
    CHECK(out.v[2] == 3.0);
    CHECK(out.v[3] == 4.0);
}

TEST_CASE("sfm transfers degraded stats onto clean stats") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const double density = rng.uniform(0.1, 0.9);
        const auto f = random_tensor<double>(2, 3, 10, 10, rng);
        auto m = random_mask<double>(2, 10, 10, density, rng);
        // keep both regions non-empty
        m.at(0, 0, 0) = 1;
        m.at(0, 0, 1) = 0;
        m.at(1, 0, 0) = 1;
        m.at(1, 0, 1) = 0;
        const auto out = sfm_modulate(f, m);
        const auto inv = invert_mask(m);
        const auto deg = masked_stats(out, m);
        const auto cln = masked_stats(f, inv);
        for (int i = 0; i < 2; ++i)
            for (int c = 0; c < 3; ++c) {
                CHECK(deg.mean.at(i, c, 0, 0) ==
                      Catch::Approx(cln.mean.at(i, c, 0, 0)).margin(1e-5));
                CHECK(deg.stdev.at(i, c, 0, 0) ==
                      Catch::Approx(cln.stdev.at(i, c, 0, 0)).margin(1e-5));
            }
        // clean positions pass through bitwise
        for (int i = 0; i < 2; ++i)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < 10; ++y)
                    for (int x = 0; x < 10; ++x)
                        if (m.at(i, y, x) == 0.0) REQUIRE(out.at(i, c, y, x) == f.at(i, c, y, x));
    }
}

TEST_CASE("sfm passes through when either region is empty") {
    Rng rng(32);
    const auto f = random_tensor<double>(1, 2, 5, 5, rng);
    Mask<double> none(1, 5, 5);
    CHECK(bitwise_equal(sfm_modulate(f, none), f));
    Mask<double> all(1, 5, 5);
    for (auto& x : all.v) x = 1.0;
    CHECK(bitwise_equal(sfm_modulate(f, all), f));
}

TEST_CASE("sfm handles per-sample empty regions independently") {
    Rng rng(33);
    const auto f = random_tensor<double>(2, 2, 4, 4, rng);
    Mask<double> m(2, 4, 4);
    // sample 0: empty degraded region; sample 1: half and half
    for (int x = 0; x < 4; ++x) m.at(1, 0, x) = m.at(1, 1, x) = 1.0;
    const auto out = sfm_modulate(f, m);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) REQUIRE(out.at(0, c, y, x) == f.at(0, c, y, x));
    bool changed = false;
    for (int c = 0; c < 2; ++c)
        for (int x = 0; x < 4; ++x) changed |= out.at(1, c, 0, x) != f.at(1, c, 0, x);
    CHECK(changed);
}

TEST_CASE("sparse conv equals the masked dense reference at all densities") {
    Rng rng(41);
    for (double density : {0.0, 0.1, 0.5, 1.0}) {
        for (int trial = 0; trial < 3; ++trial) {
            auto p = make_conv_params<double>(3, 4, 3, 1, 1);
            init_conv_params(p, rng);
            const auto f = random_tensor<double>(2, 3, 8, 8, rng);
            const auto m = random_mask<double>(2, 8, 8, density, rng);
            const auto got = sparse_conv(f, m, p);
            const auto want = sparse_conv_oracle(f, m, p);
            REQUIRE(got.same_shape(want));
            double worst = 0;
            for (size_t i = 0; i < got.size(); ++i)
                worst = std::max(worst, std::abs(got.v[i] - want.v[i]));
            CHECK(worst <= 1e-12);
        }
    }
}

TEST_CASE("sparse conv output is zero at clean positions") {
    Rng rng(42);
    auto p = make_conv_params<double>(2, 5, 3, 1, 1);
    init_conv_params(p, rng);
    const auto f = random_tensor<double>(1, 2, 7, 7, rng);
    const auto m = random_mask<double>(1, 7, 7, 0.4, rng);
    const auto out = sparse_conv(f, m, p);
    for (int co = 0; co < 5; ++co)
        for (int y = 0; y < 7; ++y)
            for (int x = 0; x < 7; ++x)
                if (m.at(0, y, x) == 0.0) REQUIRE(out.at(0, co, y, x) == 0.0);
}

TEST_CASE("isolated masked pixel sees only itself") {
    // single masked pixel: output there is the centre tap plus bias
    Rng rng(43);
    auto p = make_conv_params<double>(2, 2, 3, 1, 1);
    init_conv_params(p, rng);
    const auto f = random_tensor<double>(1, 2, 5, 5, rng);
    Mask<double> m(1, 5, 5);
    m.at(0, 2, 3) = 1.0;
    const auto out = sparse_conv(f, m, p);
    for (int co = 0; co < 2; ++co) {
        double want = p.b.v[co];
        for (int ci = 0; ci < 2; ++ci) want += p.w.at(co, ci, 1, 1) * f.at(0, ci, 2, 3);
        CHECK(out.at(0, co, 2, 3) == Catch::Approx(want).margin(1e-14));
    }
}

TEST_CASE("sparse conv mac count matches the enumeration formula") {
    Rng rng(44);
    for (double density : {0.0, 0.15, 0.5, 0.9, 1.0}) {
        auto p = make_conv_params<double>(3, 6, 3, 1, 1);
        init_conv_params(p, rng);
        const auto f = random_tensor<double>(2, 3, 9, 9, rng);
        const auto m = random_mask<double>(2, 9, 9, density, rng);
        OpCount probe;
        sparse_conv(f, m, p, &probe);
        CHECK(probe.macs == sparse_mac_formula(m, 3, 6, 3));
    }
}

TEST_CASE("full mask makes the sparse mac count dense") {
    auto p = make_conv_params<double>(4, 7, 3, 1, 1);
    Rng rng(45);
    init_conv_params(p, rng);
    const auto f = random_tensor<double>(1, 4, 10, 12, rng);
    Mask<double> m(1, 10, 12);
    for (auto& x : m.v) x = 1.0;
    OpCount probe;
    sparse_conv(f, m, p, &probe);
    CHECK(probe.macs == conv2d_dense_mac_count(1, 10, 12, p));
}

TEST_CASE("mac count grows monotonically with the mask") {
    Rng rng(46);
    auto p = make_conv_params<double>(2, 3, 3, 1, 1);
    init_conv_params(p, rng);
    const auto f = random_tensor<double>(1, 2, 8, 8, rng);
    Mask<double> m(1, 8, 8);
    uint64_t prev = 0;
    for (int step = 0; step < 16; ++step) {
        m.at(0, int(rng.below(8)), int(rng.below(8))) = 1.0;
        OpCount probe;
        sparse_conv(f, m, p, &probe);
        CHECK(probe.macs >= prev);
        prev = probe.macs;
    }
}

TEST_CASE("sparse pointwise is a 1x1 conv on masked pixels, identity elsewhere") {
    Rng rng(51);
    auto p = make_conv_params<double>(3, 3, 1, 1, 0);
    init_conv_params(p, rng);
    const auto f = random_tensor<double>(2, 3, 6, 6, rng);
    const auto m = random_mask<double>(2, 6, 6, 0.35, rng);
    const auto out = sparse_pointwise(f, m, p);
    for (int i = 0; i < 2; ++i)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) {
                if (m.at(i, y, x) == 0.0) {
                    for (int c = 0; c < 3; ++c) REQUIRE(out.at(i, c, y, x) == f.at(i, c, y, x));
                } else {
                    for (int co = 0; co < 3; ++co) {
                        double want = p.b.v[co];
                        for (int ci = 0; ci < 3; ++ci)
                            want += p.w.at(co, ci, 0, 0) * f.at(i, ci, y, x);
                        REQUIRE(out.at(i, co, y, x) == Catch::Approx(want).margin(1e-14));
                    }
                }
            }
}

TEST_CASE("identity pointwise weights give exact pass-through") {
    Rng rng(52);
    auto p = make_conv_params<double>(4, 4, 1, 1, 0);
    for (int c = 0; c < 4; ++c) p.w.at(c, c, 0, 0) = 1.0;
    const auto f = random_tensor<double>(1, 4, 5, 5, rng);
    const auto m = random_mask<double>(1, 5, 5, 0.5, rng);
    CHECK(bitwise_equal(sparse_pointwise(f, m, p), f));
}

TEST_CASE("snl step matches the brute-force oracle") {
    Rng rng(61);
    for (const auto policy : {SnlPolicy::clean_only, SnlPolicy::all_pixels}) {
        for (int trial = 0; trial < 4; ++trial) {
            const int h = 6 + trial, w = 7;
            const int ch = trial % 2 ? 8 : 3;
            const auto f = random_tensor<double>(2, ch, h, w, rng);
            auto fusion = make_conv_params<double>(ch, 4, 1, 1, 0);
            init_conv_params(fusion, rng);
            const auto m = random_mask<double>(2, h, w, 0.2 + 0.3 * trial / 3.0, rng);
            const auto got = snl_step(f, m, fusion, policy);
            const auto e = conv2d_dense(f, fusion);
            const auto want = snl_oracle(f, e, m, policy);
            double worst = 0;
            for (size_t i = 0; i < got.size(); ++i)
                worst = std::max(worst, std::abs(got.v[i] - want.v[i]));
            CHECK(worst <= 1e-10);
        }
    }
}

TEST_CASE("snl leaves clean positions bitwise untouched") {
    Rng rng(62);
    const auto f = random_tensor<double>(1, 5, 8, 8, rng);
    auto fusion = make_conv_params<double>(5, 4, 1, 1, 0);
    init_conv_params(fusion, rng);
    const auto m = random_mask<double>(1, 8, 8, 0.3, rng);
    const auto out = snl_step(f, m, fusion, SnlPolicy::clean_only);
    for (int c = 0; c < 5; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                if (m.at(0, y, x) == 0.0) REQUIRE(out.at(0, c, y, x) == f.at(0, c, y, x));
}

TEST_CASE("snl with no admissible sources is the identity") {
    Rng rng(63);
    const auto f = random_tensor<double>(1, 3, 4, 4, rng);
    auto fusion = make_conv_params<double>(3, 4, 1, 1, 0);
    init_conv_params(fusion, rng);
    Mask<double> all(1, 4, 4);
    for (auto& x : all.v) x = 1.0;
    // every pixel degraded: under clean_only each direction is empty
    CHECK(bitwise_equal(snl_step(f, all, fusion, SnlPolicy::clean_only), f));
}

TEST_CASE("snl sources lie strictly beyond the query") {
    // one degraded pixel, one clean source to its right; attention weight
    // for a single source is 1, so the output adds e * f_source exactly
    Rng rng(64);
    Tensor4<double> f = random_tensor<double>(1, 2, 1, 3, rng);
    auto fusion = make_conv_params<double>(2, 4, 1, 1, 0);
    init_conv_params(fusion, rng);
    const auto m = make_mask<double>(1, 1, 3, {1, 1, 0});
    const auto e = conv2d_dense(f, fusion);
    const auto out = snl_step(f, m, fusion, SnlPolicy::clean_only);
    // query (0,1): left neighbour is degraded, so only the right source counts
    for (int c = 0; c < 2; ++c) {
        const double want = f.at(0, c, 0, 1) + e.at(0, 1, 0, 1) * f.at(0, c, 0, 2);
        CHECK(out.at(0, c, 0, 1) == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("snl module with identity pointwise equals two chained steps") {
    Rng rng(65);
    const int ch = 4;
    const auto f = random_tensor<double>(1, ch, 6, 6, rng);
    auto p = make_snl_module_params<double>(ch);
    init_conv_params(p.fusion1, rng);
    init_conv_params(p.fusion2, rng);
    for (int c = 0; c < ch; ++c) p.pointwise.w.at(c, c, 0, 0) = 1.0;
    const auto m = random_mask<double>(1, 6, 6, 0.4, rng);
    const auto got = snl_module_forward(f, m, p, SnlPolicy::clean_only);
    const auto s1 = snl_step(f, m, p.fusion1, SnlPolicy::clean_only);
    const auto want = snl_step(s1, m, p.fusion2, SnlPolicy::clean_only);
    CHECK(bitwise_equal(got, want));
}

TEST_CASE("snl module clean positions are bitwise stable under both policies") {
    Rng rng(66);
    const auto f = random_tensor<double>(2, 3, 7, 7, rng);
    auto p = make_snl_module_params<double>(3);
    init_conv_params(p.fusion1, rng);
    init_conv_params(p.pointwise, rng);
    init_conv_params(p.fusion2, rng);
    const auto m = random_mask<double>(2, 7, 7, 0.45, rng);
    for (const auto policy : {SnlPolicy::clean_only, SnlPolicy::all_pixels}) {
        const auto out = snl_module_forward(f, m, p, policy);
        for (int i = 0; i < 2; ++i)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < 7; ++y)
                    for (int x = 0; x < 7; ++x)
                        if (m.at(i, y, x) == 0.0)
                            REQUIRE(out.at(i, c, y, x) == f.at(i, c, y, x));
    }
}

TEST_CASE("sc block with zero weights is the identity") {
    Rng rng(71);
    const int ch = 5;
    auto p = make_sc_block_params<double>(ch, 3);
    const auto f = random_tensor<double>(1, ch, 6, 6, rng);
    const auto m = random_mask<double>(1, 6, 6, 0.5, rng);
    CHECK(bitwise_equal(sc_block_forward(f, m, p), f));
}

TEST_CASE("sc block with an all-clean mask is the identity") {
    Rng rng(72);
    const int ch = 4;
    auto p = make_sc_block_params<double>(ch, 3);
    for (auto& layer : p.layers) init_conv_params(layer, rng);
    init_conv_params(p.reduce, rng);
    const auto f = random_tensor<double>(2, ch, 6, 6, rng);
    Mask<double> none(2, 6, 6);
    CHECK(bitwise_equal(sc_block_forward(f, none, p), f));
}

TEST_CASE("sc block matches its compositional reference") {
    Rng rng(73);
    const int ch = 3, growth = 2;
    auto p = make_sc_block_params<double>(ch, growth);
    for (auto& layer : p.layers) init_conv_params(layer, rng);
    init_conv_params(p.reduce, rng);
    const auto f = random_tensor<double>(1, ch, 7, 7, rng);
    const auto m = random_mask<double>(1, 7, 7, 0.4, rng);

    Tensor4<double> cat = f;
    for (const auto& layer : p.layers) {
        const auto y = leaky_relu(sparse_conv_oracle(cat, m, layer));
        cat = concat_channels(cat, y);
    }
    const auto branch = sparse_conv_oracle(cat, m, p.reduce);
    const auto want = add_masked(f, branch, m);

    const auto got = sc_block_forward(f, m, p);
    double worst = 0;
    for (size_t i = 0; i < got.size(); ++i)
        worst = std::max(worst, std::abs(got.v[i] - want.v[i]));
    CHECK(worst <= 1e-12);
}

TEST_CASE("sc block clean positions keep their bit patterns") {
    Rng rng(74);
    const int ch = 4;
    auto p = make_sc_block_params<double>(ch, 3);
    for (auto& layer : p.layers) init_conv_params(layer, rng);
    init_conv_params(p.reduce, rng);
    auto f = random_tensor<double>(1, ch, 6, 6, rng);
    f.at(0, 1, 2, 2) = -0.0; // sign of zero must survive
    Mask<double> m = random_mask<double>(1, 6, 6, 0.5, rng);
    m.at(0, 2, 2) = 0.0;
    const auto out = sc_block_forward(f, m, p);
    for (int c = 0; c < ch; ++c)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x)
                if (m.at(0, y, x) == 0.0) {
                    REQUIRE(std::memcmp(&out.at(0, c, y, x), &f.at(0, c, y, x), sizeof(double)) ==
                            0);
                }
}

TEST_CASE("nl attention of constant features is averaging") {
    Tensor4<double> f(1, 2, 3, 3);
    for (int c = 0; c < 2; ++c)
        for (size_t t = 0; t < 9; ++t) f.plane(0, c)[t] = c + 1.0;
    const auto g = nl_attend(f);
    for (int c = 0; c < 2; ++c)
        for (size_t t = 0; t < 9; ++t) CHECK(g.plane(0, c)[t] == Catch::Approx(c + 1.0).margin(1e-12));
}

TEST_CASE("snl mac probe is monotone in the mask") {
    Rng rng(81);
    const auto f = random_tensor<double>(1, 4, 8, 8, rng);
    auto fusion = make_conv_params<double>(4, 4, 1, 1, 0);
    init_conv_params(fusion, rng);
    Mask<double> m(1, 8, 8);
    // under all_pixels policy the admissible sources do not shrink as the
    // query set grows
    uint64_t prev = 0;
    for (int step = 0; step < 10; ++step) {
        m.at(0, int(rng.below(8)), int(rng.below(8))) = 1.0;
        OpCount probe;
        snl_step(f, m, fusion, SnlPolicy::all_pixels, &probe);
        CHECK(probe.macs >= prev);
        prev = probe.macs;
    }
}
