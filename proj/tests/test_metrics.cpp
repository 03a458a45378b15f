// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "spair/metrics.hpp"
#include "spair/rng.hpp"

using namespace spair;

TEST_CASE("psnr: definition, sentinel, symmetry", "[metrics]") {
    Rng rng(1);
    auto a = random_tensor<double>(1, 3, 8, 8, rng, 0.0, 1.0);

    SECTION("uniform difference of 0.1 gives exactly 20 dB") {
        auto b = a;
        for (auto& x : b.v) x += 0.1;
        REQUIRE(psnr(a, b) == Catch::Approx(20.0).margin(1e-9));
    }
    SECTION("identical images hit the 99 dB sentinel") {
        REQUIRE(psnr(a, a) == 99.0);
        auto b = a;
        b.v[0] += 1e-9; // tiny but nonzero error still capped
        REQUIRE(psnr(a, b) == 99.0);
    }
    SECTION("symmetry") {
        auto b = random_tensor<double>(1, 3, 8, 8, rng, 0.0, 1.0);
        REQUIRE(psnr(a, b) == psnr(b, a));
    }
    SECTION("peak scaling") {
        auto b = a;
        for (auto& x : b.v) x += 0.1;
        // doubling peak adds 20*log10(2) dB
        REQUIRE(psnr(a, b, 2.0) == Catch::Approx(20.0 + 20.0 * std::log10(2.0)).margin(1e-9));
    }
}

TEST_CASE("psnr: region selection and MSE additivity", "[metrics]") {
    Rng rng(7);
    auto a = random_tensor<double>(2, 3, 8, 8, rng, 0.0, 1.0);
    auto b = random_tensor<double>(2, 3, 8, 8, rng, 0.0, 1.0);
    auto region = random_mask<double>(2, 8, 8, 0.4, rng);
    const auto inv = invert_mask(region);

    uint64_t n1 = 0, n0 = 0;
    for (int i = 0; i < 2; ++i) n1 += region.count_ones(i);
    n0 = 2 * 8 * 8 - n1;
    REQUIRE(n1 > 0);
    REQUIRE(n0 > 0);

    const double mse_full = std::pow(10.0, -psnr(a, b) / 10.0);
    const double mse_in = std::pow(10.0, -psnr(a, b, 1.0, &region) / 10.0);
    const double mse_out = std::pow(10.0, -psnr(a, b, 1.0, &inv) / 10.0);
    // disjoint regions partition the grid: squared-error mass is additive
    const double lhs = mse_full * double(3 * (n1 + n0));
    const double rhs = mse_in * double(3 * n1) + mse_out * double(3 * n0);
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-9));

    const Mask<double> empty(2, 8, 8);
    REQUIRE_THROWS_AS(psnr(a, b, 1.0, &empty), ShapeError);
}

TEST_CASE("psnr_y: matches an explicit luma-conversion oracle", "[metrics]") {
    Rng rng(21);
    const auto a = random_tensor<double>(1, 3, 8, 8, rng, 0.0, 1.0);
    const auto b = random_tensor<double>(1, 3, 8, 8, rng, 0.0, 1.0);

    double sum = 0.0;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const auto luma = [&](const Tensor4<double>& t) {
                return 0.299 * t.v[size_t(t.idx(0, 0, y, x))] +
                       0.587 * t.v[size_t(t.idx(0, 1, y, x))] +
                       0.114 * t.v[size_t(t.idx(0, 2, y, x))];
            };
            const double d = luma(a) - luma(b);
            sum += d * d;
        }
    const double expect = 10.0 * std::log10(1.0 / (sum / 64.0));
    REQUIRE(psnr_y(a, b) == Catch::Approx(expect).margin(1e-9));
}

TEST_CASE("ssim: identity, closed forms, contrast inversion", "[metrics]") {
    SECTION("identical images give exactly 1") {
        Rng rng(3);
        const auto a = random_tensor<double>(1, 3, 16, 16, rng, 0.0, 1.0);
        REQUIRE(ssim(a, a) == 1.0);
    }
    SECTION("constant vs shifted constant follows the luminance closed form") {
        Tensor4<double> a(1, 1, 16, 16), b(1, 1, 16, 16);
        std::fill(a.v.begin(), a.v.end(), 0.3);
        std::fill(b.v.begin(), b.v.end(), 0.4);
        const double c1 = 0.01 * 0.01;
        const double expect = (2.0 * 0.3 * 0.4 + c1) / (0.3 * 0.3 + 0.4 * 0.4 + c1);
        REQUIRE(ssim(a, b) == Catch::Approx(expect).margin(1e-9));
    }
    SECTION("contrast inversion scores poorly") {
        Tensor4<double> a(1, 1, 16, 16);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) a.v[size_t(a.idx(0, 0, y, x))] = (x + y) % 2 ? 0.9 : 0.1;
        auto b = a;
        for (auto& v : b.v) v = 1.0 - v;
        REQUIRE(ssim(a, b) < 0.5);
    }
    SECTION("symmetry within 1e-9") {
        Rng rng(5);
        const auto a = random_tensor<double>(1, 1, 16, 16, rng, 0.0, 1.0);
        const auto b = random_tensor<double>(1, 1, 16, 16, rng, 0.0, 1.0);
        REQUIRE(std::abs(ssim(a, b) - ssim(b, a)) < 1e-9);
    }
    SECTION("images smaller than the window are rejected") {
        Tensor4<double> a(1, 1, 8, 8);
        REQUIRE_THROWS_AS(ssim(a, a), ShapeError);
    }
}

TEST_CASE("error_reduction: arithmetic pins and edge cases", "[metrics]") {
    // frozen values computed independently from 1 - 10^(-(pm-pr)/20)
    REQUIRE(error_reduction(30.75, 32.91, 0, 0).rmse_reduction ==
            Catch::Approx(0.220169889476741).margin(1e-12));
    REQUIRE(error_reduction(22.48, 32.91, 0, 0).rmse_reduction ==
            Catch::Approx(0.6990460831126797).margin(1e-12));
    REQUIRE(error_reduction(22.48, 32.73, 0, 0).rmse_reduction ==
            Catch::Approx(0.6927442634732552).margin(1e-12));

    SECTION("method against itself is zero") {
        const auto r = error_reduction(30.0, 30.0, 0.9, 0.9);
        REQUIRE(r.rmse_reduction == 0.0);
        REQUIRE(r.dssim_reduction == 0.0);
    }
    SECTION("dssim reduction from the definition") {
        // DSSIM 0.10 -> 0.05 halves the dissimilarity
        REQUIRE(error_reduction(0, 0, 0.8, 0.9).dssim_reduction ==
                Catch::Approx(0.5).margin(1e-12));
        // perfect reference cannot be improved upon
        REQUIRE(error_reduction(0, 0, 1.0, 0.9).dssim_reduction == 0.0);
    }
    SECTION("worse method gives negative reduction") {
        REQUIRE(error_reduction(30.0, 28.0, 0, 0).rmse_reduction < 0.0);
    }
}

TEST_CASE("mask_prf: exact counting and edge cases", "[metrics]") {
    SECTION("identical non-empty masks") {
        Rng rng(2);
        const auto m = random_mask<double>(1, 8, 8, 0.4, rng);
        const auto r = mask_prf(m, m);
        REQUIRE(r.precision == 1.0);
        REQUIRE(r.recall == 1.0);
        REQUIRE(r.f1 == 1.0);
    }
    SECTION("empty prediction vs non-empty truth") {
        Mask<double> pred(1, 8, 8);
        Mask<double> gt(1, 8, 8);
        gt.v[5] = 1.0;
        const auto r = mask_prf(pred, gt);
        REQUIRE(r.precision == 0.0);
        REQUIRE(r.recall == 0.0);
        REQUIRE(r.f1 == 0.0);
    }
    SECTION("both empty counts as perfect") {
        Mask<double> z(1, 8, 8);
        const auto r = mask_prf(z, z);
        REQUIRE(r.precision == 1.0);
        REQUIRE(r.recall == 1.0);
        REQUIRE(r.f1 == 1.0);
    }
    SECTION("non-empty prediction vs empty truth") {
        Mask<double> pred(1, 8, 8);
        pred.v[3] = 1.0;
        Mask<double> gt(1, 8, 8);
        const auto r = mask_prf(pred, gt);
        REQUIRE(r.precision == 0.0);
        REQUIRE(r.recall == 1.0);
        REQUIRE(r.f1 == 0.0);
    }
    SECTION("dilated prediction: full recall, diluted precision") {
        Mask<double> gt(1, 16, 16), pred(1, 16, 16);
        for (int y = 6; y < 10; ++y)
            for (int x = 6; x < 10; ++x) gt.v[size_t(gt.idx(0, y, x))] = 1.0;
        for (int y = 5; y < 11; ++y)
            for (int x = 5; x < 11; ++x) pred.v[size_t(pred.idx(0, y, x))] = 1.0;
        const auto r = mask_prf(pred, gt);
        REQUIRE(r.recall == 1.0);
        REQUIRE(r.precision == Catch::Approx(16.0 / 36.0).margin(1e-15));
        const double p = 16.0 / 36.0;
        REQUIRE(r.f1 == Catch::Approx(2.0 * p / (p + 1.0)).margin(1e-15));
    }
}

TEST_CASE("evaluate_sample and report lines", "[metrics]") {
    Rng rng(11);
    const auto clean = random_tensor<double>(1, 3, 16, 16, rng, 0.0, 1.0);
    auto restored = clean;
    Mask<double> gt(1, 16, 16);
    for (int y = 4; y < 8; ++y)
        for (int x = 4; x < 8; ++x) {
            gt.v[size_t(gt.idx(0, y, x))] = 1.0;
            for (int c = 0; c < 3; ++c) restored.v[size_t(restored.idx(0, c, y, x))] += 0.05;
        }
    const auto pred = gt;

    const QualityReport q = evaluate_sample(restored, clean, pred, gt);
    REQUIRE(q.psnr_clean_region_db == 99.0); // clean region untouched
    REQUIRE(q.psnr_degraded_region_db == Catch::Approx(10.0 * std::log10(1.0 / 0.0025)).margin(1e-9));
    REQUIRE(q.mask_f1 == 1.0);
    REQUIRE(q.ssim_val < 1.0);
    REQUIRE(q.ssim_val > 0.9);

    SECTION("empty ground truth region reports the sentinel") {
        const Mask<double> none(1, 16, 16);
        const QualityReport z = evaluate_sample(clean, clean, none, none);
        REQUIRE(z.psnr_degraded_region_db == 99.0);
        REQUIRE(z.psnr_db == 99.0);
    }
    SECTION("line format") {
        const std::string line = report_line(3, q);
        REQUIRE(line.find("sample=3 psnr=") == 0);
        REQUIRE(line.find(" ssim=") != std::string::npos);
        REQUIRE(line.find(" psnr_clean=99.0000 ") != std::string::npos);
        REQUIRE(line.find(" f1=1.000000") != std::string::npos);
        const std::string agg = aggregate_line({q, q});
        REQUIRE(agg.find("aggregate n=2 psnr=") == 0);
    }
}
