// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "spair/net.hpp"

using namespace spair;

namespace {

NetSpec toy_spec() {
    NetSpec s;
    s.levels = 3;
    s.base_channels = 4;
    s.dense_block_depth = 2;
    s.growth = 3;
    s.sc_growth = 3;
    s.in_ch = 3;
    return s;
}

template <typename T>
bool params_bitwise_equal(const Net<T>& a, const Net<T>& b) {
    if (a.params.size() != b.params.size()) return false;
    auto ia = a.params.begin();
    auto ib = b.params.begin();
    for (; ia != a.params.end(); ++ia, ++ib) {
        if (ia->first != ib->first) return false;
        if (!ia->second.same_shape(ib->second)) return false;
        if (std::memcmp(ia->second.v.data(), ib->second.v.data(),
                        ia->second.size() * sizeof(T)) != 0)
            return false;
    }
    return true;
}

template <typename T>
std::vector<Tensor4<T>> zero_loc_feats(const NetSpec& spec, int n, int h, int w) {
    const NetSpec loc = lightweight(spec);
    std::vector<Tensor4<T>> feats;
    for (int l = 0; l < spec.levels; ++l)
        feats.emplace_back(n, loc.enc_out(l), h >> l, w >> l);
    return feats;
}

} // namespace

TEST_CASE("net: parameter store is well formed", "[net]") {
    const NetSpec s = toy_spec();
    for (int k = 1; k <= 5; ++k) {
        const auto net = build_net_r<double>(s, variant_from_int(k), 77);
        for (const auto& [path, t] : net.params) {
            INFO(path);
            const bool is_w = path.size() > 2 && path.compare(path.size() - 2, 2, ".w") == 0;
            const bool is_b = path.size() > 2 && path.compare(path.size() - 2, 2, ".b") == 0;
            REQUIRE((is_w || is_b));
            if (is_w) {
                REQUIRE(t.n >= 1);
                REQUIRE(t.c >= 1);
                REQUIRE(t.h == t.w);
            } else {
                const auto& w = net.params.at(path.substr(0, path.size() - 2) + ".w");
                REQUIRE(t.n == 1);
                REQUIRE(t.c == w.n);
                REQUIRE(t.h == 1);
                REQUIRE(t.w == 1);
            }
        }
        REQUIRE(param_count(net) == param_count_for(s, variant_from_int(k)));
    }
    const auto net_l = build_net_l<double>(s, 5);
    REQUIRE(param_count(net_l) == param_count_for(lightweight(s), Variant::net1, true));
}

TEST_CASE("net: variant specific parameters appear exactly where expected", "[net]") {
    const NetSpec s = toy_spec();
    const auto has = [](const Net<double>& n, const std::string& p) {
        return n.params.count(p) > 0;
    };
    const auto n1 = build_net_r<double>(s, Variant::net1, 1);
    const auto n2 = build_net_r<double>(s, Variant::net2, 1);
    const auto n3 = build_net_r<double>(s, Variant::net3, 1);
    const auto n4 = build_net_r<double>(s, Variant::net4, 1);
    const auto n5 = build_net_r<double>(s, Variant::net5, 1);

    REQUIRE_FALSE(has(n1, "enc0.sfm_proj.w"));
    REQUIRE(has(n2, "enc0.sfm_proj.w"));
    REQUIRE_FALSE(has(n2, "enc0.sfm_proj.b")); // projection is linear, no bias
    REQUIRE(has(n2, "enc1.sfm_proj.w"));
    REQUIRE_FALSE(has(n2, "enc2.sfm_proj.w")); // no modulation at the bottleneck

    REQUIRE(has(n2, "dec1.refine.db0.w"));
    REQUIRE_FALSE(has(n3, "dec1.refine.db0.w"));
    REQUIRE(has(n3, "dec1.sc0.w"));
    REQUIRE(has(n3, "dec1.sc5.w"));
    REQUIRE(has(n3, "dec1.sc_reduce.w"));

    REQUIRE_FALSE(has(n3, "dec2.nl.w"));
    REQUIRE(has(n4, "dec2.nl.w"));
    REQUIRE_FALSE(has(n4, "dec1.nl.w")); // dense non-local only at the deepest stage
    REQUIRE_FALSE(has(n5, "dec2.nl.w"));

    REQUIRE(has(n5, "dec0.snl.fusion1.w"));
    REQUIRE(has(n5, "dec1.snl.pw.w"));
    REQUIRE(has(n5, "dec2.snl.fusion2.w"));
    REQUIRE_FALSE(has(n4, "dec0.snl.fusion1.w"));

    // localization head emits one channel; restoration head matches input
    const auto nl = build_net_l<double>(s, 1);
    REQUIRE(nl.params.at("head.w").n == 1);
    REQUIRE(n5.params.at("head.w").n == 3);
}

TEST_CASE("net: identical seeds give bitwise identical parameters", "[net]") {
    const NetSpec s = toy_spec();
    const auto a = build_net_r<double>(s, Variant::net5, 123);
    const auto b = build_net_r<double>(s, Variant::net5, 123);
    const auto c = build_net_r<double>(s, Variant::net5, 124);
    REQUIRE(params_bitwise_equal(a, b));
    REQUIRE_FALSE(params_bitwise_equal(a, c));

    const auto la = build_net_l<double>(s, 9);
    const auto lb = build_net_l<double>(s, 9);
    REQUIRE(params_bitwise_equal(la, lb));
}

TEST_CASE("net: freshly built restoration net is the identity map", "[net]") {
    const NetSpec s = toy_spec();
    Rng rng(2024);
    const auto img = random_tensor<double>(2, 3, 16, 16, rng);
    const auto mask = random_mask<double>(2, 16, 16, 0.3, rng);
    const auto net_l = build_net_l<double>(s, 31);
    const auto loc = forward_localize(net_l, img);

    for (int k : {1, 2, 3, 4, 5}) {
        INFO("variant " << k);
        const auto net = build_net_r<double>(s, variant_from_int(k), 41);
        const auto out = forward_restore(net, img, mask, loc.feats);
        REQUIRE(out.same_shape(img));
        for (size_t i = 0; i < img.v.size(); ++i) REQUIRE(out.v[i] == img.v[i]);
    }
}

TEST_CASE("net: forward output is finite and well shaped after a parameter kick", "[net]") {
    const NetSpec s = toy_spec();
    Rng rng(555);
    const auto img = random_tensor<double>(2, 3, 16, 16, rng);
    const auto mask = random_mask<double>(2, 16, 16, 0.35, rng);
    const auto net_l = build_net_l<double>(s, 31);
    const auto loc = forward_localize(net_l, img);

    REQUIRE(loc.prob.n == 2);
    REQUIRE(loc.prob.c == 1);
    REQUIRE(loc.prob.h == 16);
    REQUIRE(loc.prob.w == 16);
    for (double p : loc.prob.v) {
        REQUIRE(p > 0.0);
        REQUIRE(p < 1.0);
    }
    REQUIRE(int(loc.feats.size()) == s.levels);
    const NetSpec ls = lightweight(s);
    for (int l = 0; l < s.levels; ++l) {
        REQUIRE(loc.feats[size_t(l)].c == ls.enc_out(l));
        REQUIRE(loc.feats[size_t(l)].h == 16 >> l);
    }

    for (int k : {1, 2, 3, 4, 5}) {
        INFO("variant " << k);
        auto net = build_net_r<double>(s, variant_from_int(k), 41);
        // break the zero head so the trunk actually contributes
        Rng kick(7);
        fill_uniform(net.params.at("head.w"), kick, -0.1, 0.1);
        for (SnlPolicy pol : {SnlPolicy::clean_only, SnlPolicy::all_pixels}) {
            const auto out = forward_restore(net, img, mask, loc.feats, pol);
            REQUIRE(out.same_shape(img));
            for (double x : out.v) REQUIRE(std::isfinite(x));
            if (k != 5) break; // policy only matters for the sparse non-local variant
        }
    }
}

TEST_CASE("net: plain baseline output depends only on the image", "[net]") {
    const NetSpec s = toy_spec();
    Rng rng(99);
    const auto img = random_tensor<double>(1, 3, 16, 16, rng);
    auto net = build_net_r<double>(s, Variant::net1, 3);
    Rng kick(8);
    fill_uniform(net.params.at("head.w"), kick, -0.1, 0.1);

    const auto mask_a = random_mask<double>(1, 16, 16, 0.2, rng);
    const auto mask_b = random_mask<double>(1, 16, 16, 0.8, rng);
    auto feats_a = zero_loc_feats<double>(s, 1, 16, 16);
    auto feats_b = zero_loc_feats<double>(s, 1, 16, 16);
    for (auto& f : feats_b) fill_uniform(f, rng, -1.0, 1.0);

    const auto out_a = forward_restore(net, img, mask_a, feats_a);
    const auto out_b = forward_restore(net, img, mask_b, feats_b);
    REQUIRE(std::memcmp(out_a.v.data(), out_b.v.data(), out_a.size() * sizeof(double)) == 0);
}

TEST_CASE("net: zero-weight net passes any input through untouched", "[net]") {
    const NetSpec s = toy_spec();
    auto net = build_net_r<double>(s, Variant::net1, 3);
    for (auto& [path, t] : net.params) std::fill(t.v.begin(), t.v.end(), 0.0);
    Rng rng(123);
    auto img = random_tensor<double>(1, 3, 8, 8, rng);
    const Mask<double> empty(1, 8, 8);
    const auto feats = zero_loc_feats<double>(s, 1, 8, 8);

    const auto out = forward_restore(net, img, empty, feats);
    for (size_t i = 0; i < img.v.size(); ++i) REQUIRE(out.v[i] == img.v[i]);

    auto shifted = img;
    for (auto& x : shifted.v) x += 0.37;
    const auto out2 = forward_restore(net, shifted, empty, feats);
    for (size_t i = 0; i < img.v.size(); ++i) REQUIRE(out2.v[i] == img.v[i] + 0.37);
}

TEST_CASE("net: full guided net degenerates to the plain baseline without guidance", "[net]") {
    // With an all-clean mask and zero localization features every guided
    // component must vanish: modulation passes through, sparse convs and
    // sparse attention write nothing. The result must match a plain net
    // holding the same trunk weights and a zeroed refinement branch.
    const NetSpec s = toy_spec();
    const auto net5 = build_net_r<double>(s, Variant::net5, 2026);
    auto net1 = build_net_r<double>(s, Variant::net1, 999);
    for (auto& [path, t] : net1.params) {
        auto it = net5.params.find(path);
        if (it != net5.params.end()) t = it->second; // shared trunk
        if (path.find(".refine.reduce.") != std::string::npos)
            std::fill(t.v.begin(), t.v.end(), 0.0); // kill the refinement branch
    }

    Rng rng(17);
    auto img = random_tensor<double>(2, 3, 16, 16, rng);
    const Mask<double> all_clean(2, 16, 16);
    const auto feats = zero_loc_feats<double>(s, 2, 16, 16);

    auto n5 = build_net_r<double>(s, Variant::net5, 2026);
    // also kick both heads identically so the comparison is not 0 == 0
    Rng kick(4);
    auto head = n5.params.at("head.w");
    fill_uniform(head, kick, -0.2, 0.2);
    n5.params.at("head.w") = head;
    net1.params.at("head.w") = head;

    const auto out5 = forward_restore(n5, img, all_clean, feats);
    const auto out1 = forward_restore(net1, img, all_clean, feats);
    REQUIRE(out5.same_shape(out1));
    for (size_t i = 0; i < out5.v.size(); ++i) REQUIRE(out5.v[i] == out1.v[i]);
}

TEST_CASE("net: widened baseline hits the guided parameter budget within 5%", "[net]") {
    for (const NetSpec& s : {toy_spec(), NetSpec{}}) {
        const uint64_t target = baseline_budget_target(s);
        const NetSpec wide = widen_to_budget(s, target);
        const uint64_t got = param_count_for(wide, Variant::net1);
        INFO("target " << target << " got " << got);
        const double rel = std::abs(double(got) - double(target)) / double(target);
        REQUIRE(rel <= 0.05);
        REQUIRE(got > param_count_for(s, Variant::net1));
    }
}

TEST_CASE("net: forward rejects malformed inputs", "[net]") {
    const NetSpec s = toy_spec();
    const auto net = build_net_r<double>(s, Variant::net5, 1);
    Rng rng(5);
    const auto img = random_tensor<double>(1, 3, 16, 16, rng);
    const auto odd = random_tensor<double>(1, 3, 18, 18, rng); // 18 not divisible by 4
    const auto mask = random_mask<double>(1, 16, 16, 0.3, rng);
    const auto bad_mask = random_mask<double>(1, 8, 8, 0.3, rng);
    const auto feats = zero_loc_feats<double>(s, 1, 16, 16);

    REQUIRE_THROWS_AS(forward_restore(net, odd, mask, feats), ShapeError);
    REQUIRE_THROWS_AS(forward_restore(net, img, bad_mask, feats), ShapeError);
    REQUIRE_THROWS_AS(forward_restore(net, img, mask, {}), ShapeError);

    const auto net_l = build_net_l<double>(s, 1);
    Tape<double> tp;
    ParamBind bind;
    const int id = tp.leaf(img);
    REQUIRE_THROWS_AS(forward_restore_tape(tp, net_l, id, mask, {}, SnlPolicy::clean_only, bind),
                      ShapeError);
}

TEST_CASE("net: gradients reach the head immediately and the trunk after one step", "[net]") {
    const NetSpec s = toy_spec();
    auto net = build_net_r<double>(s, Variant::net2, 11);
    const auto net_l = build_net_l<double>(s, 12);
    Rng rng(13);
    const auto img = random_tensor<double>(1, 3, 8, 8, rng);
    const auto target = random_tensor<double>(1, 3, 8, 8, rng);
    const auto mask = random_mask<double>(1, 8, 8, 0.4, rng);
    const auto loc = forward_localize(net_l, img);

    const auto run = [&](const Net<double>& n) {
        Tape<double> tp;
        ParamBind bind;
        const int im = tp.leaf(img);
        std::vector<int> fids;
        for (const auto& f : loc.feats) fids.push_back(tp.leaf(f));
        const int out = forward_restore_tape(tp, n, im, mask, fids, SnlPolicy::clean_only, bind);
        const int loss = tp.l1_loss(out, tp.leaf(target));
        tp.backward(loss);
        std::map<std::string, double> gmax;
        for (const auto& [path, id] : bind)
            if (n.params.count(path)) gmax[path] = max_abs(tp.grad(id));
        return gmax;
    };

    // zero-initialized head blocks gradient flow into the trunk at startup
    auto g0 = run(net);
    REQUIRE(g0.at("head.w") > 0.0);
    REQUIRE(g0.at("stem.w") == 0.0);

    Rng kick(3);
    fill_uniform(net.params.at("head.w"), kick, -0.05, 0.05);
    auto g1 = run(net);
    REQUIRE(g1.at("stem.w") > 0.0);
    REQUIRE(g1.at("enc0.sfm_proj.w") > 0.0);
    for (const auto& [path, g] : g1) REQUIRE(std::isfinite(g));
}
