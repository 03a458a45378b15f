// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_NET_HPP
#define SPAIR_NET_HPP

#include <map>
#include <string>

#include "spair/autodiff.hpp"

namespace spair {

// Shared shape parameters of the U-shaped nets. Channel width doubles per
// level; a dense block of `dense_block_depth` 3x3 layers with `growth`
// output channels each follows every downsampling step.
struct NetSpec {
    int levels = 3;
    int base_channels = 16;
    int dense_block_depth = 4;
    int growth = 8;
    int sc_growth = 8;
    int in_ch = 3;

    int ch(int l) const { return base_channels << l; }
    int enc_out(int l) const { return ch(l) + dense_block_depth * growth; }
};

// Localization nets use a narrower, shallower copy of the restoration spec.
inline NetSpec lightweight(const NetSpec& s) {
    NetSpec t = s;
    t.base_channels = std::max(1, s.base_channels / 2);
    t.dense_block_depth = std::max(1, (s.dense_block_depth + 1) / 2);
    return t;
}

// Ablation ladder. net1: plain encoder-decoder, widened to the guided nets'
// parameter budget. net2: +feature modulation. net3: decoder refinement
// blocks replaced by guided sparse conv blocks. net4: net3 plus one dense
// non-local layer at the deepest decoder stage. net5: net3 plus sparse
// non-local modules at every decoder stage.
enum class Variant { net1 = 1, net2 = 2, net3 = 3, net4 = 4, net5 = 5 };

inline int variant_rank(Variant v) { return int(v); }

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::net1: return "net1";
        case Variant::net2: return "net2";
        case Variant::net3: return "net3";
        case Variant::net4: return "net4";
        case Variant::net5: return "net5";
    }
    return "?";
}

inline Variant variant_from_int(int k) {
    require(k >= 1 && k <= 5, "variant index must be 1..5");
    return Variant(k);
}

inline Variant variant_from_name(const std::string& s) {
    for (int k = 1; k <= 5; ++k)
        if (s == variant_name(Variant(k))) return Variant(k);
    throw ShapeError("unknown variant name: " + s);
}

template <typename T>
struct Net {
    NetSpec spec;
    Variant variant = Variant::net5;
    bool localize = false;
    std::map<std::string, Tensor4<T>> params; // ordered; iteration = canonical order
};

template <typename T>
uint64_t param_count(const Net<T>& n) {
    uint64_t total = 0;
    for (const auto& [path, t] : n.params) total += t.size();
    return total;
}

namespace netdetail {

// Enumerates every conv layer of the architecture in a fixed canonical
// order. `visit(path, cin, cout, k, with_bias, zero_init)` is called once
// per layer; builders allocate, counters just sum.
template <typename Fn>
void walk_convs(const NetSpec& s, Variant variant, bool localize, Fn&& visit) {
    const int v = variant_rank(variant);
    const bool guided = !localize;
    const NetSpec loc = lightweight(s);

    visit("stem", s.in_ch, s.ch(0), 3, true, false);
    for (int l = 0; l < s.levels; ++l) {
        int width = s.ch(l);
        for (int i = 0; i < s.dense_block_depth; ++i) {
            visit("enc" + std::to_string(l) + ".db" + std::to_string(i), width, s.growth, 3, true,
                  false);
            width += s.growth;
        }
        if (l < s.levels - 1) {
            if (guided && v >= 2)
                visit("enc" + std::to_string(l) + ".sfm_proj", loc.enc_out(l), s.enc_out(l), 1,
                      false, false);
            visit("enc" + std::to_string(l) + ".down", s.enc_out(l), s.ch(l + 1), 3, true, false);
        }
    }
    for (int l = s.levels - 1; l >= 0; --l) {
        const std::string dec = "dec" + std::to_string(l);
        const int width = s.enc_out(l);
        if (guided && v >= 3) {
            int cat = width;
            for (int i = 0; i < kScBlockLayers; ++i) {
                visit(dec + ".sc" + std::to_string(i), cat, s.sc_growth, 3, true, false);
                cat += s.sc_growth;
            }
            visit(dec + ".sc_reduce", cat, width, 1, true, false);
        } else {
            int cat = width;
            for (int i = 0; i < s.dense_block_depth; ++i) {
                visit(dec + ".refine.db" + std::to_string(i), cat, s.growth, 3, true, false);
                cat += s.growth;
            }
            visit(dec + ".refine.reduce", cat, width, 1, true, false);
        }
        if (guided && v == 4 && l == s.levels - 1) visit(dec + ".nl", width, width, 1, true, true);
        if (guided && v == 5) {
            visit(dec + ".snl.fusion1", width, 4, 1, true, false);
            visit(dec + ".snl.pw", width, width, 1, true, false);
            visit(dec + ".snl.fusion2", width, 4, 1, true, false);
        }
        if (l > 0) {
            visit(dec + ".up", width, s.ch(l - 1), 3, true, false);
            visit(dec + ".merge", s.ch(l - 1) + s.enc_out(l - 1), s.enc_out(l - 1), 1, true, false);
        }
    }
    if (localize)
        visit("head", s.enc_out(0), 1, 3, true, false);
    else
        visit("head", s.enc_out(0), s.in_ch, 3, true, true);
}

// Parameter registration order is fixed, so equal seeds give bitwise equal
// parameter sets.
template <typename T>
void register_params(Net<T>& net, Rng& rng) {
    walk_convs(net.spec, net.variant, net.localize,
               [&](const std::string& path, int cin, int cout, int k, bool with_bias,
                   bool zero_init) {
                   auto p = make_conv_params<T>(cin, cout, k, 1, 0);
                   if (!zero_init) init_conv_params(p, rng);
                   net.params.emplace(path + ".w", std::move(p.w));
                   if (with_bias) {
                       if (zero_init)
                           net.params.emplace(path + ".b", Tensor4<T>(1, cout, 1, 1));
                       else
                           net.params.emplace(path + ".b", std::move(p.b));
                   }
               });
}

} // namespace netdetail

// Analytic parameter count for a spec without building the net.
inline uint64_t param_count_for(const NetSpec& spec, Variant variant, bool localize = false) {
    uint64_t total = 0;
    netdetail::walk_convs(spec, variant, localize,
                          [&](const std::string&, int cin, int cout, int k, bool with_bias, bool) {
                              total += uint64_t(cout) * cin * k * k + (with_bias ? cout : 0);
                          });
    return total;
}

template <typename T>
Net<T> build_net_r(const NetSpec& spec, Variant variant, uint64_t seed) {
    Net<T> net;
    net.spec = spec;
    net.variant = variant;
    Rng rng(seed);
    netdetail::register_params(net, rng);
    return net;
}

template <typename T>
Net<T> build_net_l(const NetSpec& spec, uint64_t seed) {
    Net<T> net;
    net.spec = lightweight(spec);
    net.variant = Variant::net1;
    net.localize = true;
    Rng rng(seed);
    netdetail::register_params(net, rng);
    return net;
}

// --- forward passes (emitted onto a tape) ---

using ParamBind = std::map<std::string, int>;

namespace netdetail {

template <typename T>
int bind_param(Tape<T>& tp, const Net<T>& net, const std::string& path, ParamBind& bind) {
    auto it = bind.find(path);
    if (it != bind.end()) return it->second;
    auto pit = net.params.find(path);
    require(pit != net.params.end(), "net: missing parameter " + path);
    const int id = tp.leaf(pit->second);
    bind.emplace(path, id);
    return id;
}

template <typename T>
int conv_node(Tape<T>& tp, const Net<T>& net, ParamBind& bind, const std::string& path, int x,
              int stride, int pad) {
    const int w = bind_param(tp, net, path + ".w", bind);
    int b;
    if (net.params.count(path + ".b")) {
        b = bind_param(tp, net, path + ".b", bind);
    } else {
        auto it = bind.find(path + ".zero_bias");
        if (it != bind.end()) {
            b = it->second;
        } else {
            b = tp.leaf(Tensor4<T>(1, tp.val(w).n, 1, 1));
            bind.emplace(path + ".zero_bias", b);
        }
    }
    return tp.conv2d(x, w, b, stride, pad);
}

template <typename T>
int dense_block(Tape<T>& tp, const Net<T>& net, ParamBind& bind, const std::string& prefix, int x,
                int depth) {
    for (int i = 0; i < depth; ++i)
        x = tp.concat(x, tp.leaky(conv_node(tp, net, bind, prefix + ".db" + std::to_string(i), x, 1, 1)));
    return x;
}

template <typename T>
int sc_block_nodes(Tape<T>& tp, const Net<T>& net, ParamBind& bind, const std::string& dec, int x,
                   typename Tape<T>::MaskRef m) {
    int cat = x;
    for (int i = 0; i < kScBlockLayers; ++i) {
        const std::string path = dec + ".sc" + std::to_string(i);
        const int w = bind_param(tp, net, path + ".w", bind);
        const int b = bind_param(tp, net, path + ".b", bind);
        cat = tp.concat(cat, tp.leaky(tp.sparse_conv_op(cat, w, b, m)));
    }
    const int branch = tp.sparse_conv_op(cat, bind_param(tp, net, dec + ".sc_reduce.w", bind),
                                         bind_param(tp, net, dec + ".sc_reduce.b", bind), m);
    return tp.add_masked_op(x, branch, m);
}

template <typename T>
int refine_nodes(Tape<T>& tp, const Net<T>& net, ParamBind& bind, const std::string& dec, int x,
                 int depth) {
    const int y = dense_block(tp, net, bind, dec + ".refine", x, depth);
    return tp.add(x, conv_node(tp, net, bind, dec + ".refine.reduce", y, 1, 0));
}

template <typename T>
int snl_nodes(Tape<T>& tp, const Net<T>& net, ParamBind& bind, const std::string& dec, int x,
              typename Tape<T>::MaskRef m, SnlPolicy policy2) {
    const int e1 = conv_node(tp, net, bind, dec + ".snl.fusion1", x, 1, 0);
    const int s1 = tp.snl_attend_op(x, e1, m, SnlPolicy::clean_only);
    const int mid = tp.sparse_pw(s1, bind_param(tp, net, dec + ".snl.pw.w", bind),
                                 bind_param(tp, net, dec + ".snl.pw.b", bind), m);
    const int e2 = conv_node(tp, net, bind, dec + ".snl.fusion2", mid, 1, 0);
    return tp.snl_attend_op(mid, e2, m, policy2);
}

template <typename T>
std::vector<typename Tape<T>::MaskRef> level_masks(const Mask<T>& m, int levels) {
    std::vector<typename Tape<T>::MaskRef> out;
    out.push_back(std::make_shared<const Mask<T>>(m));
    for (int l = 1; l < levels; ++l)
        out.push_back(std::make_shared<const Mask<T>>(downsample_mask(*out.back(), 2)));
    return out;
}

} // namespace netdetail

template <typename T>
struct ForwardIds {
    int out = -1;                // restored image or mask probability map
    std::vector<int> enc_feats;  // post-dense-block encoder features per level
};

// Core U-shaped forward. For restoration nets, `mask` and `loc_feats` guide
// the modulation and the sparse decoder ops; plain variants ignore them.
// For localization nets the output is the probability map.
template <typename T>
ForwardIds<T> forward_net_tape(Tape<T>& tp, const Net<T>& net, int image, const Mask<T>* mask,
                               const std::vector<int>& loc_feats, SnlPolicy policy2,
                               ParamBind& bind) {
    using netdetail::bind_param;
    using netdetail::conv_node;
    const NetSpec& s = net.spec;
    const int v = variant_rank(net.variant);
    const bool guided = !net.localize;
    const bool use_sfm = guided && v >= 2;
    const bool use_sc = guided && v >= 3;
    const bool use_nl = guided && v == 4;
    const bool use_snl = guided && v == 5;

    const Tensor4<T>& img = tp.val(image);
    require(img.c == s.in_ch, "forward: channel mismatch");
    const int div = 1 << (s.levels - 1);
    require(img.h % div == 0 && img.w % div == 0,
            "forward: spatial dims must be divisible by " + std::to_string(div));

    std::vector<typename Tape<T>::MaskRef> ml;
    if (use_sfm || use_sc || use_snl) {
        require(mask != nullptr, "forward: this variant needs a mask");
        require(mask->n == img.n && mask->h == img.h && mask->w == img.w,
                "forward: mask shape mismatch");
        ml = netdetail::level_masks(*mask, s.levels);
    }
    if (use_sfm)
        require(int(loc_feats.size()) >= s.levels - 1,
                "forward: modulation needs localization features");

    ForwardIds<T> res;
    int x = tp.leaky(conv_node(tp, net, bind, "stem", image, 1, 1));
    std::vector<int> skips;
    for (int l = 0; l < s.levels; ++l) {
        x = netdetail::dense_block(tp, net, bind, "enc" + std::to_string(l), x,
                                   s.dense_block_depth);
        res.enc_feats.push_back(x);
        if (l < s.levels - 1) {
            if (use_sfm) {
                const int proj = conv_node(tp, net, bind,
                                           "enc" + std::to_string(l) + ".sfm_proj",
                                           loc_feats[size_t(l)], 1, 0);
                x = tp.sfm(tp.add(x, proj), ml[size_t(l)]);
            }
            skips.push_back(x);
            x = tp.leaky(conv_node(tp, net, bind, "enc" + std::to_string(l) + ".down", x, 2, 1));
        }
    }
    for (int l = s.levels - 1; l >= 0; --l) {
        const std::string dec = "dec" + std::to_string(l);
        if (use_sc)
            x = netdetail::sc_block_nodes(tp, net, bind, dec, x, ml[size_t(l)]);
        else
            x = netdetail::refine_nodes(tp, net, bind, dec, x, s.dense_block_depth);
        if (use_nl && l == s.levels - 1)
            x = tp.add(x, conv_node(tp, net, bind, dec + ".nl", tp.nl_attend_op(x), 1, 0));
        if (use_snl) x = netdetail::snl_nodes(tp, net, bind, dec, x, ml[size_t(l)], policy2);
        if (l > 0) {
            x = tp.leaky(conv_node(tp, net, bind, dec + ".up", tp.up2(x), 1, 1));
            x = tp.concat(x, skips[size_t(l - 1)]);
            x = tp.leaky(conv_node(tp, net, bind, dec + ".merge", x, 1, 0));
        }
    }
    const int head = conv_node(tp, net, bind, "head", x, 1, 1);
    res.out = net.localize ? tp.logistic_op(head) : tp.add(image, head);
    return res;
}

template <typename T>
ForwardIds<T> forward_localize_tape(Tape<T>& tp, const Net<T>& net_l, int image, ParamBind& bind) {
    require(net_l.localize, "forward_localize: not a localization net");
    return forward_net_tape(tp, net_l, image, static_cast<const Mask<T>*>(nullptr),
                            std::vector<int>{}, SnlPolicy::clean_only, bind);
}

template <typename T>
int forward_restore_tape(Tape<T>& tp, const Net<T>& net_r, int image, const Mask<T>& mask,
                         const std::vector<int>& loc_feats, SnlPolicy policy2, ParamBind& bind) {
    require(!net_r.localize, "forward_restore: not a restoration net");
    return forward_net_tape(tp, net_r, image, &mask, loc_feats, policy2, bind).out;
}

// --- value-level wrappers ---

template <typename T>
struct LocResult {
    Tensor4<T> prob;             // (n, 1, h, w)
    Mask<T> mask;                // prob > threshold
    std::vector<Tensor4<T>> feats;
};

template <typename T>
LocResult<T> forward_localize(const Net<T>& net_l, const Tensor4<T>& image,
                              double threshold = 0.5) {
    Tape<T> tp;
    ParamBind bind;
    const int img = tp.leaf(image);
    const ForwardIds<T> ids = forward_localize_tape(tp, net_l, img, bind);
    LocResult<T> r;
    r.prob = tp.val(ids.out);
    r.mask = threshold_mask(r.prob, threshold);
    for (int f : ids.enc_feats) r.feats.push_back(tp.val(f));
    return r;
}

template <typename T>
Tensor4<T> forward_restore(const Net<T>& net_r, const Tensor4<T>& image, const Mask<T>& mask,
                           const std::vector<Tensor4<T>>& loc_feats,
                           SnlPolicy policy2 = SnlPolicy::clean_only) {
    Tape<T> tp;
    ParamBind bind;
    const int img = tp.leaf(image);
    std::vector<int> feat_ids;
    for (const auto& f : loc_feats) feat_ids.push_back(tp.leaf(f));
    return tp.val(forward_restore_tape(tp, net_r, img, mask, feat_ids, policy2, bind));
}

// --- parameter budget matching for the plain baseline ---

// Widens base_channels and growth of a plain encoder-decoder until its
// parameter count best approximates `target` (the guided net plus its
// localization net). Returns the widened spec.
inline NetSpec widen_to_budget(const NetSpec& spec, uint64_t target) {
    NetSpec best = spec;
    uint64_t best_err = ~0ull;
    for (int base = spec.base_channels; base <= spec.base_channels * 4; ++base) {
        for (int growth = spec.growth; growth <= spec.growth * 3; ++growth) {
            NetSpec cand = spec;
            cand.base_channels = base;
            cand.growth = growth;
            const uint64_t p = param_count_for(cand, Variant::net1);
            const uint64_t err = p > target ? p - target : target - p;
            if (err < best_err) {
                best_err = err;
                best = cand;
            }
        }
    }
    return best;
}

// Budget target for the plain baseline: the modulated net plus the
// localization net it depends on at inference time.
inline uint64_t baseline_budget_target(const NetSpec& spec) {
    return param_count_for(spec, Variant::net2) +
           param_count_for(lightweight(spec), Variant::net1, true);
}

// The plain baseline, widened so its capacity matches the guided pipeline.
template <typename T>
Net<T> build_net1_matched(const NetSpec& spec, uint64_t seed) {
    return build_net_r<T>(widen_to_budget(spec, baseline_budget_target(spec)), Variant::net1, seed);
}

} // namespace spair

#endif
