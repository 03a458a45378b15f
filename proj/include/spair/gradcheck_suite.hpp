// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_GRADCHECK_SUITE_HPP
#define SPAIR_GRADCHECK_SUITE_HPP

#include <functional>
#include <string>
#include <vector>

#include "spair/autodiff.hpp"

namespace spair {

// Central-difference verification of reverse-mode gradients over the core op
// set. Each op runs `instances` random double-precision cases; the report
// carries the worst relative error seen. Inputs are sampled away from the
// ops' kinks (masks fixed per instance, values bounded off thresholds) so the
// finite-difference reference is valid.

struct GradcheckReport {
    std::string op;
    int instances = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

namespace gradsuite {

using D = double;

inline std::shared_ptr<const Tensor4<D>> projection(int n, int c, int h, int w, Rng& rng) {
    auto r = std::make_shared<Tensor4<D>>(n, c, h, w);
    fill_uniform(*r, rng, -1.0, 1.0);
    return r;
}

inline Mask<D> mask_with_both_regions(int n, int h, int w, double density, Rng& rng) {
    Mask<D> m = random_mask<D>(n, h, w, density, rng);
    for (int i = 0; i < n; ++i) {
        m.at(i, 0, 0) = 1.0;
        m.at(i, 0, 1) = 0.0;
    }
    return m;
}

using InstanceFn = std::function<double(Rng&)>;

inline GradcheckReport run_op(const std::string& name, int instances, const InstanceFn& one) {
    Rng rng(std::hash<std::string>{}(name) & 0xffffffull);
    GradcheckReport rep;
    rep.op = name;
    rep.instances = instances;
    for (int i = 0; i < instances; ++i) rep.max_rel_err = std::max(rep.max_rel_err, one(rng));
    rep.pass = rep.max_rel_err <= kGradcheckTol;
    return rep;
}

} // namespace gradsuite

inline std::vector<GradcheckReport> run_gradcheck_suite(int instances = 10) {
    using namespace gradsuite;
    std::vector<GradcheckReport> out;

    out.push_back(run_op("dense_conv", instances, [](Rng& rng) {
        const int stride = rng.chance(0.5) ? 1 : 2;
        auto x = random_tensor<D>(1, 2, 6, 6, rng);
        auto p = make_conv_params<D>(2, 3, 3, stride, 1);
        init_conv_params(p, rng);
        const int od = (6 + 2 - 3) / stride + 1;
        auto r = projection(1, 3, od, od, rng);
        GradBuildFn build = [r, stride](Tape<D>& t, const std::vector<int>& ids) {
            return t.inner_const(t.conv2d(ids[0], ids[1], ids[2], stride, 1), r);
        };
        return gradcheck_instance({x, p.w, p.b}, build);
    }));

    out.push_back(run_op("softmax", instances, [](Rng& rng) {
        auto x = random_tensor<D>(1, 5, 2, 2, rng, -2, 2);
        auto r = projection(1, 5, 2, 2, rng);
        GradBuildFn build = [r](Tape<D>& t, const std::vector<int>& ids) {
            return t.inner_const(t.softmax_op(ids[0]), r);
        };
        return gradcheck_instance({x}, build);
    }));

    out.push_back(run_op("masked_stats", instances, [](Rng& rng) {
        auto x = random_tensor<D>(1, 3, 5, 5, rng);
        auto m = share_mask(mask_with_both_regions(1, 5, 5, 0.4, rng));
        auto r1 = projection(1, 3, 1, 1, rng);
        auto r2 = projection(1, 3, 1, 1, rng);
        GradBuildFn build = [m, r1, r2](Tape<D>& t, const std::vector<int>& ids) {
            const int mean = t.masked_mean_op(ids[0], m);
            const int sd = t.masked_std_op(ids[0], m);
            return t.add(t.inner_const(mean, r1), t.inner_const(sd, r2));
        };
        return gradcheck_instance({x}, build);
    }));

    out.push_back(run_op("feature_modulation", instances, [](Rng& rng) {
        auto x = random_tensor<D>(1, 2, 6, 6, rng);
        auto m = share_mask(mask_with_both_regions(1, 6, 6, rng.uniform(0.2, 0.8), rng));
        auto r = projection(1, 2, 6, 6, rng);
        GradBuildFn build = [m, r](Tape<D>& t, const std::vector<int>& ids) {
            return t.inner_const(t.sfm(ids[0], m), r);
        };
        return gradcheck_instance({x}, build);
    }));

    out.push_back(run_op("sparse_conv", instances, [](Rng& rng) {
        auto x = random_tensor<D>(1, 2, 5, 5, rng);
        auto p = make_conv_params<D>(2, 3, 3, 1, 1);
        init_conv_params(p, rng);
        auto m = share_mask(random_mask<D>(1, 5, 5, 0.5, rng));
        auto r = projection(1, 3, 5, 5, rng);
        GradBuildFn build = [m, r](Tape<D>& t, const std::vector<int>& ids) {
            return t.inner_const(t.sparse_conv_op(ids[0], ids[1], ids[2], m), r);
        };
        return gradcheck_instance({x, p.w, p.b}, build);
    }));

    out.push_back(run_op("sparse_pointwise", instances, [](Rng& rng) {
        auto x = random_tensor<D>(1, 3, 5, 5, rng);
        auto p = make_conv_params<D>(3, 3, 1, 1, 0);
        init_conv_params(p, rng);
        auto m = share_mask(random_mask<D>(1, 5, 5, 0.5, rng));
        auto r = projection(1, 3, 5, 5, rng);
        GradBuildFn build = [m, r](Tape<D>& t, const std::vector<int>& ids) {
            return t.inner_const(t.sparse_pw(ids[0], ids[1], ids[2], m), r);
        };
        return gradcheck_instance({x, p.w, p.b}, build);
    }));

    out.push_back(run_op("snl_step", instances, [](Rng& rng) {
        const auto policy = rng.chance(0.5) ? SnlPolicy::clean_only : SnlPolicy::all_pixels;
        auto x = random_tensor<D>(1, 3, 5, 6, rng, -0.8, 0.8);
        auto p = make_conv_params<D>(3, 4, 1, 1, 0);
        init_conv_params(p, rng);
        auto m = share_mask(mask_with_both_regions(1, 5, 6, 0.4, rng));
        auto r = projection(1, 3, 5, 6, rng);
        GradBuildFn build = [m, r, policy](Tape<D>& t, const std::vector<int>& ids) {
            const int e = t.conv2d(ids[0], ids[1], ids[2], 1, 0);
            return t.inner_const(t.snl_attend_op(ids[0], e, m, policy), r);
        };
        return gradcheck_instance({x, p.w, p.b}, build);
    }));

    out.push_back(run_op("l1_loss", instances, [](Rng& rng) {
        auto a = random_tensor<D>(1, 2, 4, 4, rng);
        Tensor4<D> target = a;
        for (auto& x : target.v) {
            const double off = rng.uniform(0.2, 0.8);
            x += rng.chance(0.5) ? off : -off;
        }
        GradBuildFn build = [target](Tape<D>& t, const std::vector<int>& ids) {
            return t.l1_loss(ids[0], t.leaf(target));
        };
        return gradcheck_instance({a}, build);
    }));

    out.push_back(run_op("bce_loss", instances, [](Rng& rng) {
        auto p = random_tensor<D>(1, 1, 5, 5, rng, 0.05, 0.95);
        Tensor4<D> target(1, 1, 5, 5);
        for (auto& x : target.v) x = rng.chance(0.5) ? 1.0 : 0.0;
        GradBuildFn build = [target](Tape<D>& t, const std::vector<int>& ids) {
            return t.bce_loss(ids[0], t.leaf(target));
        };
        return gradcheck_instance({p}, build);
    }));

    return out;
}

} // namespace spair

#endif
