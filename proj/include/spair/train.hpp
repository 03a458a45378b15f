// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_TRAIN_HPP
#define SPAIR_TRAIN_HPP

#include <cinttypes>
#include <cmath>
#include <type_traits>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "spair/metrics.hpp"
#include "spair/net.hpp"
#include "spair/synth.hpp"

namespace spair {

enum class Phase { localize, restore };
enum class MaskSource { predicted, ground_truth };

struct TrainConfig {
    Phase phase = Phase::restore;
    Variant variant = Variant::net5;
    double learning_rate = 2e-4;
    int lr_halving_period_epochs = 50;
    int iters_per_epoch = 10; // an "epoch" at toy scale is a fixed iteration block
    int iters = 1000;
    int batch_size = 8;
    int patch_size = 64;
    uint64_t seed = 1;
    double mask_threshold = 0.5; // applied to the localization probability map
    bool hflip = true;
    bool vflip = true;
    SnlPolicy policy2 = SnlPolicy::clean_only;
    MaskSource mask_source = MaskSource::predicted;
    int log_every = 50;
    int val_every = 0; // 0 disables validation logging
};

inline double lr_at(int64_t iteration, const TrainConfig& cfg) {
    require(cfg.learning_rate > 0.0, "lr_at: learning_rate must be positive");
    require(cfg.iters_per_epoch >= 1 && cfg.lr_halving_period_epochs >= 1,
            "lr_at: schedule parameters must be positive");
    const int64_t epoch = iteration / cfg.iters_per_epoch;
    return cfg.learning_rate * std::exp2(-double(epoch / cfg.lr_halving_period_epochs));
}

// --- Adam with bias correction ---

template <typename T>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::map<std::string, Tensor4<T>> m, v;
};

template <typename T>
void adam_update(std::map<std::string, Tensor4<T>>& params,
                 const std::map<std::string, Tensor4<T>>& grads, AdamState<T>& st, double lr) {
    for (const auto& [path, g] : grads) {
        auto it = params.find(path);
        require(it != params.end(), "adam: unknown parameter " + path);
        require(it->second.same_shape(g), "adam: gradient shape mismatch for " + path);
        for (const T& x : g.v)
            require(std::isfinite(double(x)), "adam: non-finite gradient for " + path);
    }
    st.t += 1;
    const T bc1 = T(1.0 - std::pow(st.beta1, double(st.t)));
    const T bc2 = T(1.0 - std::pow(st.beta2, double(st.t)));
    const T b1 = T(st.beta1), b2 = T(st.beta2), e = T(st.eps), step = T(lr);
    for (const auto& [path, g] : grads) {
        Tensor4<T>& p = params.at(path);
        Tensor4<T>& m =
            st.m.try_emplace(path, Tensor4<T>(g.n, g.c, g.h, g.w)).first->second;
        Tensor4<T>& v =
            st.v.try_emplace(path, Tensor4<T>(g.n, g.c, g.h, g.w)).first->second;
        for (size_t i = 0; i < g.v.size(); ++i) {
            m.v[i] = b1 * m.v[i] + (T(1) - b1) * g.v[i];
            v.v[i] = b2 * v.v[i] + (T(1) - b2) * g.v[i] * g.v[i];
            p.v[i] -= step * (m.v[i] / bc1) / (std::sqrt(v.v[i] / bc2) + e);
        }
    }
}

// --- augmentation ---

template <typename T>
Tensor4<T> hflip_tensor(const Tensor4<T>& t) {
    Tensor4<T> o(t.n, t.c, t.h, t.w);
    for (int i = 0; i < t.n; ++i)
        for (int c = 0; c < t.c; ++c)
            for (int y = 0; y < t.h; ++y)
                for (int x = 0; x < t.w; ++x)
                    o.v[size_t(o.idx(i, c, y, x))] = t.v[size_t(t.idx(i, c, y, t.w - 1 - x))];
    return o;
}

template <typename T>
Tensor4<T> vflip_tensor(const Tensor4<T>& t) {
    Tensor4<T> o(t.n, t.c, t.h, t.w);
    for (int i = 0; i < t.n; ++i)
        for (int c = 0; c < t.c; ++c)
            for (int y = 0; y < t.h; ++y)
                for (int x = 0; x < t.w; ++x)
                    o.v[size_t(o.idx(i, c, y, x))] = t.v[size_t(t.idx(i, c, t.h - 1 - y, x))];
    return o;
}

template <typename T>
Mask<T> hflip_mask(const Mask<T>& m) {
    Mask<T> o(m.n, m.h, m.w);
    for (int i = 0; i < m.n; ++i)
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x)
                o.v[size_t(o.idx(i, y, x))] = m.v[size_t(m.idx(i, y, m.w - 1 - x))];
    return o;
}

template <typename T>
Mask<T> vflip_mask(const Mask<T>& m) {
    Mask<T> o(m.n, m.h, m.w);
    for (int i = 0; i < m.n; ++i)
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x)
                o.v[size_t(o.idx(i, y, x))] = m.v[size_t(m.idx(i, m.h - 1 - y, x))];
    return o;
}

template <typename T>
Tensor4<T> mask_to_tensor(const Mask<T>& m) {
    Tensor4<T> t(m.n, 1, m.h, m.w);
    t.v = m.v;
    return t;
}

// --- deterministic batch construction ---

template <typename T>
struct Batch {
    Tensor4<T> clean;
    Tensor4<T> degraded;
    Mask<T> gt;
};

// Epoch-wise shuffled order; a fresh permutation is drawn when exhausted.
class OrderSampler {
  public:
    OrderSampler(size_t n, uint64_t seed) : n_(n), rng_(seed) { require(n > 0, "sampler: empty"); }

    size_t next() {
        if (pos_ == perm_.size()) {
            perm_.resize(n_);
            for (size_t i = 0; i < n_; ++i) perm_[i] = i;
            for (size_t i = n_ - 1; i > 0; --i) std::swap(perm_[i], perm_[rng_.below(i + 1)]);
            pos_ = 0;
        }
        return perm_[pos_++];
    }

  private:
    size_t n_;
    Rng rng_;
    std::vector<size_t> perm_;
    size_t pos_ = 0;
};

template <typename T>
Batch<T> assemble_batch(const std::vector<Sample<T>>& data, const std::vector<size_t>& idxs,
                        int patch, bool hflip, bool vflip, Rng& aug) {
    require(!idxs.empty(), "assemble_batch: empty index list");
    const int h = data[0].clean.h, w = data[0].clean.w, ch = data[0].clean.c;
    require(patch >= 1 && patch <= h && patch <= w, "assemble_batch: patch exceeds image");
    const int b = int(idxs.size());
    Batch<T> out{Tensor4<T>(b, ch, patch, patch), Tensor4<T>(b, ch, patch, patch),
                 Mask<T>(b, patch, patch)};
    for (int bi = 0; bi < b; ++bi) {
        const Sample<T>& s = data[idxs[size_t(bi)]];
        require(s.clean.h == h && s.clean.w == w && s.clean.c == ch,
                "assemble_batch: inconsistent sample shapes");
        const int top = int(aug.below(uint64_t(h - patch + 1)));
        const int left = int(aug.below(uint64_t(w - patch + 1)));
        const bool fh = hflip && aug.chance(0.5);
        const bool fv = vflip && aug.chance(0.5);
        for (int y = 0; y < patch; ++y) {
            const int sy = top + (fv ? patch - 1 - y : y);
            for (int x = 0; x < patch; ++x) {
                const int sx = left + (fh ? patch - 1 - x : x);
                for (int c = 0; c < ch; ++c) {
                    out.clean.v[size_t(out.clean.idx(bi, c, y, x))] =
                        s.clean.v[size_t(s.clean.idx(0, c, sy, sx))];
                    out.degraded.v[size_t(out.degraded.idx(bi, c, y, x))] =
                        s.degraded.v[size_t(s.degraded.idx(0, c, sy, sx))];
                }
                out.gt.v[size_t(out.gt.idx(bi, y, x))] =
                    s.gt_mask.v[size_t(s.gt_mask.idx(0, sy, sx))];
            }
        }
    }
    return out;
}

// --- two-phase training ---

template <typename T>
struct TrainResult {
    std::vector<std::string> log;
    double final_loss = 0.0;
};

namespace traindetail {

template <typename T>
std::map<std::string, Tensor4<T>> collect_grads(Tape<T>& tp, const Net<T>& net,
                                                const ParamBind& bind) {
    std::map<std::string, Tensor4<T>> grads;
    for (const auto& [path, id] : bind)
        if (net.params.count(path)) grads.emplace(path, tp.grad(id));
    return grads;
}

// Mean PSNR of restored validation images against their clean references.
template <typename T>
double validate_psnr(const Net<T>& net, const Net<T>* net_l,
                     const std::vector<Sample<T>>& val_set, const TrainConfig& cfg) {
    double sum = 0.0;
    for (const Sample<T>& s : val_set) {
        Mask<T> guide = s.gt_mask;
        std::vector<Tensor4<T>> feats;
        if (variant_rank(net.variant) >= 2) {
            const LocResult<T> loc = forward_localize(*net_l, s.degraded, cfg.mask_threshold);
            feats = loc.feats;
            if (cfg.mask_source == MaskSource::predicted) guide = loc.mask;
        }
        const Tensor4<T> restored = forward_restore(net, s.degraded, guide, feats, cfg.policy2);
        sum += psnr(restored, s.clean);
    }
    return sum / double(val_set.size());
}

} // namespace traindetail

// Runs the configured phase. `net_l` is the frozen localization net used for
// guidance in the restore phase (required for guided variants); pass nullptr
// when training the localization net itself or a plain baseline.
template <typename T>
TrainResult<T> train(Net<T>& net, const std::type_identity_t<Net<T>>* net_l,
                     const std::vector<Sample<T>>& train_set,
                     const std::vector<Sample<std::type_identity_t<T>>>& val_set,
                     const TrainConfig& cfg) {
    require(!train_set.empty(), "train: empty training set");
    require(cfg.iters >= 1 && cfg.batch_size >= 1, "train: iters and batch_size must be positive");
    const int div = 1 << (net.spec.levels - 1);
    require(cfg.patch_size % div == 0,
            "train: patch_size must be divisible by " + std::to_string(div));
    if (cfg.phase == Phase::localize) {
        require(net.localize, "train: localize phase needs a localization net");
    } else {
        require(!net.localize, "train: restore phase needs a restoration net");
        if (variant_rank(net.variant) >= 2)
            require(net_l != nullptr, "train: guided restore phase needs a localization net");
    }

    OrderSampler order(train_set.size(), derive_seed(cfg.seed, 1));
    Rng aug(derive_seed(cfg.seed, 2));
    AdamState<T> adam;
    TrainResult<T> res;

    std::vector<size_t> idxs(size_t(cfg.batch_size));
    for (int64_t it = 0; it < cfg.iters; ++it) {
        const double lr = lr_at(it, cfg);
        for (auto& ix : idxs) ix = order.next();
        const Batch<T> batch =
            assemble_batch(train_set, idxs, cfg.patch_size, cfg.hflip, cfg.vflip, aug);

        double loss;
        std::map<std::string, Tensor4<T>> grads;
        if (cfg.phase == Phase::localize) {
            Tape<T> tp;
            ParamBind bind;
            const int img = tp.leaf(batch.degraded);
            const ForwardIds<T> ids = forward_localize_tape(tp, net, img, bind);
            const int target = tp.leaf(mask_to_tensor(batch.gt));
            const int L = tp.bce_loss(ids.out, target);
            tp.backward(L);
            loss = double(tp.val(L).v[0]);
            grads = traindetail::collect_grads(tp, net, bind);
        } else {
            Mask<T> guide = batch.gt;
            std::vector<Tensor4<T>> feats;
            if (variant_rank(net.variant) >= 2) {
                const LocResult<T> loc =
                    forward_localize(*net_l, batch.degraded, cfg.mask_threshold);
                feats = loc.feats;
                if (cfg.mask_source == MaskSource::predicted) guide = loc.mask;
            }
            Tape<T> tp;
            ParamBind bind;
            const int img = tp.leaf(batch.degraded);
            std::vector<int> fids;
            for (const auto& f : feats) fids.push_back(tp.leaf(f));
            const int out = forward_restore_tape(tp, net, img, guide, fids, cfg.policy2, bind);
            const int L = tp.l1_loss(out, tp.leaf(batch.clean));
            tp.backward(L);
            loss = double(tp.val(L).v[0]);
            grads = traindetail::collect_grads(tp, net, bind);
        }
        adam_update(net.params, grads, adam, lr);
        res.final_loss = loss;

        const int64_t done = it + 1;
        const bool want_val = cfg.phase == Phase::restore && cfg.val_every > 0 &&
                              done % cfg.val_every == 0 && !val_set.empty();
        const bool want_log = cfg.log_every > 0 && done % cfg.log_every == 0;
        if (want_log || want_val) {
            char buf[192];
            if (want_val) {
                const double vp = traindetail::validate_psnr(net, net_l, val_set, cfg);
                std::snprintf(buf, sizeof buf, "iter=%" PRId64 " loss=%.9g lr=%.9g val_psnr=%.9g",
                              done, loss, lr, vp);
            } else {
                std::snprintf(buf, sizeof buf, "iter=%" PRId64 " loss=%.9g lr=%.9g", done, loss,
                              lr);
            }
            res.log.emplace_back(buf);
        }
    }
    return res;
}

} // namespace spair

#endif
