// Copyright (c) 2026 The spair authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPAIR_AUTODIFF_HPP
#define SPAIR_AUTODIFF_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "spair/guided.hpp"

namespace spair {

inline constexpr double kBceClamp = 1e-7;

// Reverse-mode tape. Nodes are appended in evaluation order, so walking ids
// backwards is a valid topological order; gradient accumulation order is
// fixed by construction and repeated backward passes are bitwise identical.
template <typename T>
class Tape {
public:
    using MaskRef = std::shared_ptr<const Mask<T>>;

    int leaf(Tensor4<T> v) { return push(std::move(v)); }

    const Tensor4<T>& val(int id) const { return nodes_[size_t(id)].val; }

    // Gradient of the last backward() target w.r.t. node id; zeros if the
    // node does not influence the target.
    Tensor4<T> grad(int id) const {
        const Node& n = nodes_[size_t(id)];
        if (n.reached) return n.grad;
        return Tensor4<T>(n.val.n, n.val.c, n.val.h, n.val.w);
    }

    void backward(int loss_id) {
        require(nodes_[size_t(loss_id)].val.size() == 1, "backward: target must be scalar");
        for (Node& n : nodes_) {
            n.grad = Tensor4<T>();
            n.reached = false;
        }
        Tensor4<T> seed(1, 1, 1, 1);
        seed.v[0] = T(1);
        accum(loss_id, std::move(seed));
        for (int id = loss_id; id >= 0; --id) {
            Node& n = nodes_[size_t(id)];
            if (n.reached && n.back) n.back(*this);
        }
    }

    size_t node_count() const { return nodes_.size(); }

    // --- elementwise and structural ops ---

    int add(int a, int b) {
        int out = push(spair::add(val(a), val(b)));
        set_back(out, [a, b, out](Tape& t) {
            t.accum(a, t.upstream(out));
            t.accum(b, t.upstream(out));
        });
        return out;
    }

    int sub(int a, int b) {
        int out = push(spair::sub(val(a), val(b)));
        set_back(out, [a, b, out](Tape& t) {
            t.accum(a, t.upstream(out));
            t.accum(b, scale(t.upstream(out), T(-1)));
        });
        return out;
    }

    int mul(int a, int b) {
        int out = push(spair::mul(val(a), val(b)));
        set_back(out, [a, b, out](Tape& t) {
            t.accum(a, spair::mul(t.upstream(out), t.val(b)));
            t.accum(b, spair::mul(t.upstream(out), t.val(a)));
        });
        return out;
    }

    int scale_by(int a, T s) {
        int out = push(scale(val(a), s));
        set_back(out, [a, s, out](Tape& t) { t.accum(a, scale(t.upstream(out), s)); });
        return out;
    }

    int leaky(int a, double slope = kLeakySlope) {
        int out = push(leaky_relu(val(a), slope));
        set_back(out, [a, slope, out](Tape& t) {
            const Tensor4<T>& x = t.val(a);
            Tensor4<T> g = t.upstream(out);
            for (size_t i = 0; i < g.v.size(); ++i)
                if (x.v[i] <= T(0)) g.v[i] *= T(slope);
            t.accum(a, std::move(g));
        });
        return out;
    }

    int logistic_op(int a) {
        int out = push(logistic(val(a)));
        set_back(out, [a, out](Tape& t) {
            const Tensor4<T>& s = t.val(out);
            Tensor4<T> g = t.upstream(out);
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] *= s.v[i] * (T(1) - s.v[i]);
            t.accum(a, std::move(g));
        });
        return out;
    }

    int concat(int a, int b) {
        int out = push(concat_channels(val(a), val(b)));
        set_back(out, [a, b, out](Tape& t) {
            const Tensor4<T>& up = t.upstream(out);
            const Tensor4<T>&va = t.val(a);
            Tensor4<T> ga(va.n, va.c, va.h, va.w);
            Tensor4<T> gb(va.n, up.c - va.c, va.h, va.w);
            const size_t hw = size_t(va.h) * va.w;
            for (int i = 0; i < va.n; ++i) {
                std::copy(up.plane(i, 0), up.plane(i, 0) + size_t(va.c) * hw, ga.plane(i, 0));
                std::copy(up.plane(i, va.c), up.plane(i, va.c) + size_t(gb.c) * hw, gb.plane(i, 0));
            }
            t.accum(a, std::move(ga));
            t.accum(b, std::move(gb));
        });
        return out;
    }

    // Nearest-neighbour 2x upsampling.
    int up2(int a) {
        const Tensor4<T>& x = val(a);
        Tensor4<T> o(x.n, x.c, x.h * 2, x.w * 2);
        for (int i = 0; i < x.n; ++i)
            for (int c = 0; c < x.c; ++c) {
                const T* ip = x.plane(i, c);
                T* op = o.plane(i, c);
                for (int y = 0; y < o.h; ++y)
                    for (int xx = 0; xx < o.w; ++xx)
                        op[size_t(y) * o.w + xx] = ip[size_t(y / 2) * x.w + xx / 2];
            }
        int out = push(std::move(o));
        set_back(out, [a, out](Tape& t) {
            const Tensor4<T>& up = t.upstream(out);
            const Tensor4<T>& x = t.val(a);
            Tensor4<T> g(x.n, x.c, x.h, x.w);
            for (int i = 0; i < x.n; ++i)
                for (int c = 0; c < x.c; ++c) {
                    const T* u = up.plane(i, c);
                    T* gp = g.plane(i, c);
                    for (int y = 0; y < up.h; ++y)
                        for (int xx = 0; xx < up.w; ++xx)
                            gp[size_t(y / 2) * x.w + xx / 2] += u[size_t(y) * up.w + xx];
                }
            t.accum(a, std::move(g));
        });
        return out;
    }

    // --- convolution ---

    int conv2d(int x, int w, int b, int stride, int pad) {
        ConvParams<T> p = params_from(val(w), val(b), stride, pad);
        int out = push(conv2d_dense(val(x), p));
        set_back(out, [x, w, b, stride, pad, out](Tape& t) {
            ConvParams<T> p = params_from(t.val(w), t.val(b), stride, pad);
            const Tensor4<T>& up = t.upstream(out);
            const Tensor4<T>& xin = t.val(x);
            t.accum(x, conv2d_dense_grad_input(up, p, xin.h, xin.w));
            t.accum(w, conv2d_dense_grad_weight(up, xin, p));
            t.accum(b, conv2d_dense_grad_bias(up));
        });
        return out;
    }

    // --- mask-guided ops (the mask is a non-differentiable constant) ---

    int sfm(int x, MaskRef m) {
        int out = push(sfm_modulate(val(x), *m));
        set_back(out, [x, m, out](Tape& t) {
            t.accum(x, sfm_backward(t.upstream(out), t.val(x), *m));
        });
        return out;
    }

    int sparse_conv_op(int x, int w, int b, MaskRef m) {
        ConvParams<T> p = params_from(val(w), val(b), 1, val(w).h / 2);
        int out = push(spair::sparse_conv(val(x), *m, p));
        set_back(out, [x, w, b, m, out](Tape& t) {
            ConvParams<T> p = params_from(t.val(w), t.val(b), 1, t.val(w).h / 2);
            const Tensor4<T>& up = t.upstream(out);
            t.accum(x, sparse_conv_grad_input(up, t.val(x), *m, p));
            t.accum(w, sparse_conv_grad_weight(up, t.val(x), *m, p));
            t.accum(b, sparse_conv_grad_bias(up, *m));
        });
        return out;
    }

    int sparse_pw(int x, int w, int b, MaskRef m) {
        ConvParams<T> p = params_from(val(w), val(b), 1, 0);
        int out = push(sparse_pointwise(val(x), *m, p));
        set_back(out, [x, w, b, m, out](Tape& t) {
            ConvParams<T> p = params_from(t.val(w), t.val(b), 1, 0);
            const Tensor4<T>& up = t.upstream(out);
            t.accum(x, sparse_pointwise_grad_input(up, *m, p));
            t.accum(w, sparse_pointwise_grad_weight(up, t.val(x), *m, p));
            t.accum(b, sparse_conv_grad_bias(up, *m));
        });
        return out;
    }

    int snl_attend_op(int f, int e, MaskRef m, SnlPolicy policy) {
        int out = push(spair::snl_attend(val(f), val(e), *m, policy));
        set_back(out, [f, e, m, policy, out](Tape& t) {
            auto [df, de] = snl_attend_backward(t.upstream(out), t.val(f), t.val(e), *m, policy);
            t.accum(f, std::move(df));
            t.accum(e, std::move(de));
        });
        return out;
    }

    int nl_attend_op(int f) {
        int out = push(spair::nl_attend(val(f)));
        set_back(out, [f, out](Tape& t) {
            t.accum(f, nl_attend_backward(t.upstream(out), t.val(f)));
        });
        return out;
    }

    int add_masked_op(int a, int b, MaskRef m) {
        int out = push(add_masked(val(a), val(b), *m));
        set_back(out, [a, b, m, out](Tape& t) {
            const Tensor4<T>& up = t.upstream(out);
            t.accum(a, up);
            Tensor4<T> gb = up;
            const size_t hw = size_t(gb.h) * gb.w;
            for (int i = 0; i < gb.n; ++i) {
                const T* mp = m->plane(i);
                for (int c = 0; c < gb.c; ++c) {
                    T* gp = gb.plane(i, c);
                    for (size_t s = 0; s < hw; ++s)
                        if (mp[s] == T(0)) gp[s] = T(0);
                }
            }
            t.accum(b, std::move(gb));
        });
        return out;
    }

    int masked_mean_op(int x, MaskRef m) {
        ChannelStats<T> st = masked_stats(val(x), *m);
        int out = push(std::move(st.mean));
        set_back(out, [x, m, out](Tape& t) {
            const Tensor4<T>& up = t.upstream(out);
            const Tensor4<T>& q = t.val(x);
            Tensor4<T> g(q.n, q.c, q.h, q.w);
            const size_t hw = size_t(q.h) * q.w;
            for (int i = 0; i < q.n; ++i) {
                const T* mp = m->plane(i);
                const T cnt = T(m->count_ones(i));
                for (int c = 0; c < q.c; ++c) {
                    const T gv = up.at(i, c, 0, 0) / cnt;
                    T* gp = g.plane(i, c);
                    for (size_t s = 0; s < hw; ++s)
                        if (mp[s] != T(0)) gp[s] = gv;
                }
            }
            t.accum(x, std::move(g));
        });
        return out;
    }

    int masked_std_op(int x, MaskRef m, double eps = kStatsEps) {
        ChannelStats<T> st = masked_stats(val(x), *m, eps);
        Tensor4<T> mean = std::move(st.mean);
        int out = push(std::move(st.stdev));
        set_back(out, [x, m, mean, out](Tape& t) {
            const Tensor4<T>& up = t.upstream(out);
            const Tensor4<T>& sd = t.val(out);
            const Tensor4<T>& q = t.val(x);
            Tensor4<T> g(q.n, q.c, q.h, q.w);
            const size_t hw = size_t(q.h) * q.w;
            for (int i = 0; i < q.n; ++i) {
                const T* mp = m->plane(i);
                const T cnt = T(m->count_ones(i));
                for (int c = 0; c < q.c; ++c) {
                    const T gv = up.at(i, c, 0, 0) / (cnt * sd.at(i, c, 0, 0));
                    const T mu = mean.at(i, c, 0, 0);
                    const T* qp = q.plane(i, c);
                    T* gp = g.plane(i, c);
                    for (size_t s = 0; s < hw; ++s)
                        if (mp[s] != T(0)) gp[s] = gv * (qp[s] - mu);
                }
            }
            t.accum(x, std::move(g));
        });
        return out;
    }

    // Softmax over the channel dimension, per (sample, y, x).
    int softmax_op(int a) {
        const Tensor4<T>& x = val(a);
        Tensor4<T> o = x;
        apply_channel_softmax(o);
        int out = push(std::move(o));
        set_back(out, [a, out](Tape& t) {
            const Tensor4<T>& o = t.val(out);
            const Tensor4<T>& up = t.upstream(out);
            Tensor4<T> g(o.n, o.c, o.h, o.w);
            const size_t hw = size_t(o.h) * o.w;
            for (int i = 0; i < o.n; ++i)
                for (size_t s = 0; s < hw; ++s) {
                    T d = 0;
                    for (int c = 0; c < o.c; ++c)
                        d += up.plane(i, c)[s] * o.plane(i, c)[s];
                    for (int c = 0; c < o.c; ++c)
                        g.plane(i, c)[s] = o.plane(i, c)[s] * (up.plane(i, c)[s] - d);
                }
            t.accum(a, std::move(g));
        });
        return out;
    }

    // --- losses and reductions (scalar outputs) ---

    int sum_all(int a) {
        Tensor4<T> o(1, 1, 1, 1);
        o.v[0] = spair::sum(val(a));
        int out = push(std::move(o));
        set_back(out, [a, out](Tape& t) {
            const T u = t.upstream(out).v[0];
            const Tensor4<T>& x = t.val(a);
            Tensor4<T> g(x.n, x.c, x.h, x.w);
            for (auto& v : g.v) v = u;
            t.accum(a, std::move(g));
        });
        return out;
    }

    // Projection against a fixed tensor; the scalar loss used by gradcheck.
    int inner_const(int a, std::shared_ptr<const Tensor4<T>> r) {
        require(val(a).same_shape(*r), "inner_const: shape mismatch");
        Tensor4<T> o(1, 1, 1, 1);
        o.v[0] = dot(val(a), *r);
        int out = push(std::move(o));
        set_back(out, [a, r, out](Tape& t) {
            t.accum(a, scale(*r, t.upstream(out).v[0]));
        });
        return out;
    }

    // Mean absolute difference.
    int l1_loss(int a, int b) {
        const Tensor4<T>& x = val(a);
        const Tensor4<T>& y = val(b);
        require(x.same_shape(y), "l1_loss: shape mismatch");
        Tensor4<T> o(1, 1, 1, 1);
        T s = 0;
        for (size_t i = 0; i < x.v.size(); ++i) s += std::abs(x.v[i] - y.v[i]);
        o.v[0] = s / T(x.v.size());
        int out = push(std::move(o));
        set_back(out, [a, b, out](Tape& t) {
            const T u = t.upstream(out).v[0];
            const Tensor4<T>& x = t.val(a);
            const Tensor4<T>& y = t.val(b);
            const T inv = u / T(x.v.size());
            Tensor4<T> ga(x.n, x.c, x.h, x.w), gb(x.n, x.c, x.h, x.w);
            for (size_t i = 0; i < x.v.size(); ++i) {
                const T d = x.v[i] - y.v[i];
                const T s = d > T(0) ? inv : (d < T(0) ? -inv : T(0));
                ga.v[i] = s;
                gb.v[i] = -s;
            }
            t.accum(a, std::move(ga));
            t.accum(b, std::move(gb));
        });
        return out;
    }

    // Mean binary cross-entropy; probabilities clamped away from {0, 1}.
    // The clamped range has zero gradient.
    int bce_loss(int p, int target) {
        const Tensor4<T>& x = val(p);
        const Tensor4<T>& y = val(target);
        require(x.same_shape(y), "bce_loss: shape mismatch");
        Tensor4<T> o(1, 1, 1, 1);
        T s = 0;
        for (size_t i = 0; i < x.v.size(); ++i) {
            const T q = clamp_prob(x.v[i]);
            s += -(y.v[i] * std::log(q) + (T(1) - y.v[i]) * std::log(T(1) - q));
        }
        o.v[0] = s / T(x.v.size());
        int out = push(std::move(o));
        set_back(out, [p, target, out](Tape& t) {
            const T u = t.upstream(out).v[0];
            const Tensor4<T>& x = t.val(p);
            const Tensor4<T>& y = t.val(target);
            const T inv = u / T(x.v.size());
            Tensor4<T> g(x.n, x.c, x.h, x.w);
            for (size_t i = 0; i < x.v.size(); ++i) {
                if (x.v[i] <= T(kBceClamp) || x.v[i] >= T(1) - T(kBceClamp)) continue;
                g.v[i] = inv * (x.v[i] - y.v[i]) / (x.v[i] * (T(1) - x.v[i]));
            }
            t.accum(p, std::move(g));
        });
        return out;
    }

private:
    struct Node {
        Tensor4<T> val;
        Tensor4<T> grad;
        bool reached = false;
        std::function<void(Tape&)> back;
    };

    static T clamp_prob(T q) {
        return std::min(std::max(q, T(kBceClamp)), T(1) - T(kBceClamp));
    }

    static ConvParams<T> params_from(const Tensor4<T>& w, const Tensor4<T>& b, int stride, int pad) {
        ConvParams<T> p;
        p.out_ch = w.n;
        p.in_ch = w.c;
        p.k = w.h;
        require(w.h == w.w, "conv weights must be square");
        p.stride = stride;
        p.pad = pad;
        p.w = w;
        p.b = b;
        return p;
    }

    static void apply_channel_softmax(Tensor4<T>& o) {
        const size_t hw = size_t(o.h) * o.w;
        std::vector<T> buf(o.c);
        for (int i = 0; i < o.n; ++i)
            for (size_t s = 0; s < hw; ++s) {
                for (int c = 0; c < o.c; ++c) buf[size_t(c)] = o.plane(i, c)[s];
                softmax_inplace(buf.data(), o.c);
                for (int c = 0; c < o.c; ++c) o.plane(i, c)[s] = buf[size_t(c)];
            }
    }

    int push(Tensor4<T> v) {
        nodes_.push_back(Node{std::move(v), Tensor4<T>(), false, nullptr});
        return int(nodes_.size()) - 1;
    }

    void set_back(int id, std::function<void(Tape&)> fn) { nodes_[size_t(id)].back = std::move(fn); }

    const Tensor4<T>& upstream(int id) const { return nodes_[size_t(id)].grad; }

    void accum(int id, Tensor4<T> g) {
        Node& n = nodes_[size_t(id)];
        if (!n.reached) {
            n.grad = std::move(g);
            n.reached = true;
        } else {
            add_inplace(n.grad, g);
        }
    }

    std::vector<Node> nodes_;
};

template <typename T>
using MaskRef = std::shared_ptr<const Mask<T>>;

template <typename T>
MaskRef<T> share_mask(Mask<T> m) {
    return std::make_shared<const Mask<T>>(std::move(m));
}

// --- finite-difference verification ---

struct GradReport {
    std::string op;
    double max_rel_err = 0.0;
    int instances = 0;
    bool pass = false;
};

inline constexpr double kGradcheckStep = 1e-4;
inline constexpr double kGradcheckTol = 1e-4;

// Builds a scalar loss from the given inputs on a fresh tape. The returned
// id must be the loss node; `ids` are the leaves for each input tensor.
using GradBuildFn =
    std::function<int(Tape<double>&, const std::vector<int>&)>;

// Compares reverse-mode gradients of one instance against central
// differences with per-element steps scaled by max(1, |x|). Returns the
// maximum relative error over all elements of all inputs.
inline double gradcheck_instance(std::vector<Tensor4<double>> inputs, const GradBuildFn& build) {
    auto eval = [&](const std::vector<Tensor4<double>>& in) {
        Tape<double> tape;
        std::vector<int> ids;
        ids.reserve(in.size());
        for (const auto& t : in) ids.push_back(tape.leaf(t));
        const int loss = build(tape, ids);
        return tape.val(loss).v[0];
    };
    Tape<double> tape;
    std::vector<int> ids;
    for (const auto& t : inputs) ids.push_back(tape.leaf(t));
    const int loss = build(tape, ids);
    tape.backward(loss);
    double worst = 0.0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        const Tensor4<double> g = tape.grad(ids[k]);
        for (size_t i = 0; i < inputs[k].v.size(); ++i) {
            const double x0 = inputs[k].v[i];
            const double h = kGradcheckStep * std::max(1.0, std::abs(x0));
            inputs[k].v[i] = x0 + h;
            const double lp = eval(inputs);
            inputs[k].v[i] = x0 - h;
            const double lm = eval(inputs);
            inputs[k].v[i] = x0;
            const double fd = (lp - lm) / (2.0 * h);
            const double ad = g.v[i];
            const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

} // namespace spair

#endif
