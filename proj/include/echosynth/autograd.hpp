// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over TensorT. Ops build a dynamic graph of
// shared nodes; GraphT::backward runs one reverse sweep and accumulates leaf
// gradients into their bound parameters. Ops whose inputs do not require
// gradients skip all caching, so the same code path serves inference.

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "echosynth/tensor.hpp"

namespace echosynth {

template <class S>
struct ParamT {
    std::string name;
    TensorT<S> value;
    TensorT<S> grad;
    bool trainable = true;

    void zero_grad() {
        grad = value;
        grad.m.setZero();
    }

    Eigen::Index size() const { return value.m.size(); }
};

template <class S>
struct NodeT {
    TensorT<S> value;
    TensorT<S> grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<NodeT<S>>> parents;
    std::function<void(NodeT<S>&)> backward;
};

template <class S>
class VarT {
public:
    VarT() = default;
    explicit VarT(std::shared_ptr<NodeT<S>> n) : node_(std::move(n)) {}

    const TensorT<S>& value() const { return node_->value; }
    const TensorT<S>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::shared_ptr<NodeT<S>>& node() const { return node_; }
    bool valid() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<NodeT<S>> node_;
};

namespace detail {

template <class S, class Expr>
void accumulate(const std::shared_ptr<NodeT<S>>& n, const Expr& g) {
    if (!n->requires_grad) {
        return;
    }
    if (!n->grad_ready) {
        n->grad = n->value;
        n->grad.m.setZero();
        n->grad_ready = true;
    }
    n->grad.m += g;
}

template <class S>
VarT<S> make_op(TensorT<S> value, std::vector<std::shared_ptr<NodeT<S>>> parents,
                std::function<void(NodeT<S>&)> backward) {
    auto n = std::make_shared<NodeT<S>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        n->requires_grad = n->requires_grad || p->requires_grad;
    }
    if (n->requires_grad) {
        n->backward = std::move(backward);
    }
    return VarT<S>(n);
}

}  // namespace detail

template <class S>
class GraphT {
public:
    VarT<S> constant(TensorT<S> v) {
        auto n = std::make_shared<NodeT<S>>();
        n->value = std::move(v);
        return VarT<S>(n);
    }

    VarT<S> leaf(TensorT<S> v, bool requires_grad) {
        auto n = std::make_shared<NodeT<S>>();
        n->value = std::move(v);
        n->requires_grad = requires_grad;
        return VarT<S>(n);
    }

    VarT<S> param(ParamT<S>& p) {
        auto n = std::make_shared<NodeT<S>>();
        n->value = p.value;
        n->requires_grad = p.trainable;
        if (p.trainable) {
            bound_.emplace_back(n, &p);
        }
        return VarT<S>(n);
    }

    // Reverse sweep from a 1x1 scalar root; adds gradients into every bound
    // parameter's grad buffer (so accumulation across calls just works).
    void backward(const VarT<S>& root) {
        if (root.value().m.size() != 1) {
            throw ShapeError("backward: root must be a scalar");
        }
        if (!root.requires_grad()) {
            return;
        }
        std::vector<NodeT<S>*> order = topo_order(root.node().get());
        root.node()->grad = TensorT<S>::scalar(S(1));
        root.node()->grad_ready = true;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            NodeT<S>* n = *it;
            if (n->grad_ready && n->backward) {
                n->backward(*n);
            }
        }
        for (auto& [node, param] : bound_) {
            if (node->grad_ready) {
                if (param->grad.m.size() != param->value.m.size()) {
                    param->zero_grad();
                }
                param->grad.m += node->grad.m;
            }
        }
    }

private:
    static std::vector<NodeT<S>*> topo_order(NodeT<S>* root) {
        std::vector<NodeT<S>*> order;
        std::unordered_set<NodeT<S>*> visited;
        std::vector<std::pair<NodeT<S>*, std::size_t>> stack;
        stack.emplace_back(root, 0);
        visited.insert(root);
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                NodeT<S>* parent = node->parents[idx].get();
                ++idx;
                if (parent->requires_grad && visited.insert(parent).second) {
                    stack.emplace_back(parent, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        return order;
    }

    std::vector<std::pair<std::shared_ptr<NodeT<S>>, ParamT<S>*>> bound_;
};

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

template <class S>
VarT<S> add(const VarT<S>& a, const VarT<S>& b) {
    require_same_shape(a.value(), b.value(), "add");
    TensorT<S> out = a.value();
    out.m += b.value().m;
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_op<S>(std::move(out), {pa, pb}, [pa, pb](NodeT<S>& n) {
        detail::accumulate(pa, n.grad.m);
        detail::accumulate(pb, n.grad.m);
    });
}

template <class S>
VarT<S> scale(const VarT<S>& x, double c) {
    TensorT<S> out = x.value();
    out.m *= static_cast<S>(c);
    auto px = x.node();
    return detail::make_op<S>(std::move(out), {px}, [px, c](NodeT<S>& n) {
        detail::accumulate(px, (n.grad.m * static_cast<S>(c)).eval());
    });
}

template <class S>
VarT<S> silu(const VarT<S>& x) {
    using Matrix = typename TensorT<S>::Matrix;
    const Matrix sig = (S(1) / (S(1) + (-x.value().m.array()).exp())).matrix();
    TensorT<S> out = x.value();
    out.m = x.value().m.cwiseProduct(sig);
    auto px = x.node();
    const bool need = x.requires_grad();
    return detail::make_op<S>(
        std::move(out), {px}, [px, sig = need ? sig : Matrix()](NodeT<S>& n) {
            const auto& xv = px->value.m;
            const auto deriv =
                sig.array() * (S(1) + xv.array() * (S(1) - sig.array()));
            detail::accumulate(px, (n.grad.m.array() * deriv).matrix().eval());
        });
}

// Adds a per-channel column vector to every pixel.
template <class S>
VarT<S> broadcast_add_cols(const VarT<S>& x, const VarT<S>& v) {
    if (v.value().m.cols() != 1 || v.value().m.rows() != x.value().m.rows()) {
        throw ShapeError("broadcast_add_cols: v must be (channels x 1)");
    }
    TensorT<S> out = x.value();
    out.m.colwise() += v.value().m.col(0);
    auto px = x.node();
    auto pv = v.node();
    return detail::make_op<S>(std::move(out), {px, pv}, [px, pv](NodeT<S>& n) {
        detail::accumulate(px, n.grad.m);
        detail::accumulate(pv, n.grad.m.rowwise().sum().eval());
    });
}

template <class S>
VarT<S> concat_channels(const VarT<S>& a, const VarT<S>& b) {
    if (a.value().m.cols() != b.value().m.cols() || a.value().height != b.value().height ||
        a.value().width != b.value().width) {
        throw ShapeError("concat_channels: spatial shapes differ");
    }
    TensorT<S> out(a.value().height, a.value().width,
                   typename TensorT<S>::Matrix(a.value().m.rows() + b.value().m.rows(),
                                               a.value().m.cols()));
    out.m.topRows(a.value().m.rows()) = a.value().m;
    out.m.bottomRows(b.value().m.rows()) = b.value().m;
    auto pa = a.node();
    auto pb = b.node();
    const Eigen::Index ra = a.value().m.rows();
    const Eigen::Index rb = b.value().m.rows();
    return detail::make_op<S>(std::move(out), {pa, pb}, [pa, pb, ra, rb](NodeT<S>& n) {
        detail::accumulate(pa, n.grad.m.topRows(ra).eval());
        detail::accumulate(pb, n.grad.m.bottomRows(rb).eval());
    });
}

// y = W x + b with x holding one column per token/pixel.
template <class S>
VarT<S> linear(const VarT<S>& x, const VarT<S>& w, const VarT<S>& b) {
    if (w.value().m.cols() != x.value().m.rows()) {
        throw ShapeError("linear: weight/input dims disagree");
    }
    if (b.value().m.rows() != w.value().m.rows() || b.value().m.cols() != 1) {
        throw ShapeError("linear: bias must be (out x 1)");
    }
    TensorT<S> out(x.value().height, x.value().width, w.value().m * x.value().m);
    out.m.colwise() += b.value().m.col(0);
    auto px = x.node();
    auto pw = w.node();
    auto pb = b.node();
    return detail::make_op<S>(std::move(out), {px, pw, pb}, [px, pw, pb](NodeT<S>& n) {
        detail::accumulate(px, (pw->value.m.transpose() * n.grad.m).eval());
        detail::accumulate(pw, (n.grad.m * px->value.m.transpose()).eval());
        detail::accumulate(pb, n.grad.m.rowwise().sum().eval());
    });
}

// ---------------------------------------------------------------------------
// Spatial ops
// ---------------------------------------------------------------------------

struct Conv2dGeom {
    int ksize = 3;
    int stride = 1;
    int pad = 1;
};

namespace detail {

inline int conv_out_dim(int in, const Conv2dGeom& g) {
    return (in + 2 * g.pad - g.ksize) / g.stride + 1;
}

template <class S>
typename TensorT<S>::Matrix im2col(const TensorT<S>& x, const Conv2dGeom& g, int oh, int ow) {
    using Matrix = typename TensorT<S>::Matrix;
    const int cin = x.channels();
    Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(cin) * g.ksize * g.ksize,
                               static_cast<Eigen::Index>(oh) * ow);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const Eigen::Index p = static_cast<Eigen::Index>(oy) * ow + ox;
            for (int ky = 0; ky < g.ksize; ++ky) {
                const int iy = oy * g.stride - g.pad + ky;
                if (iy < 0 || iy >= x.height) continue;
                for (int kx = 0; kx < g.ksize; ++kx) {
                    const int ix = ox * g.stride - g.pad + kx;
                    if (ix < 0 || ix >= x.width) continue;
                    const Eigen::Index ip = static_cast<Eigen::Index>(iy) * x.width + ix;
                    const Eigen::Index row0 = static_cast<Eigen::Index>(ky) * g.ksize + kx;
                    for (int c = 0; c < cin; ++c) {
                        cols(static_cast<Eigen::Index>(c) * g.ksize * g.ksize + row0, p) =
                            x.m(c, ip);
                    }
                }
            }
        }
    }
    return cols;
}

template <class S>
void col2im_add(typename TensorT<S>::Matrix& gx, const typename TensorT<S>::Matrix& gcols,
                int h, int w, const Conv2dGeom& g, int oh, int ow) {
    const int cin = static_cast<int>(gx.rows());
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const Eigen::Index p = static_cast<Eigen::Index>(oy) * ow + ox;
            for (int ky = 0; ky < g.ksize; ++ky) {
                const int iy = oy * g.stride - g.pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < g.ksize; ++kx) {
                    const int ix = ox * g.stride - g.pad + kx;
                    if (ix < 0 || ix >= w) continue;
                    const Eigen::Index ip = static_cast<Eigen::Index>(iy) * w + ix;
                    const Eigen::Index row0 = static_cast<Eigen::Index>(ky) * g.ksize + kx;
                    for (int c = 0; c < cin; ++c) {
                        gx(c, ip) +=
                            gcols(static_cast<Eigen::Index>(c) * g.ksize * g.ksize + row0, p);
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Weight layout (out_channels x in_channels*k*k); bias (out_channels x 1).
template <class S>
VarT<S> conv2d(const VarT<S>& x, const VarT<S>& w, const VarT<S>& b, const Conv2dGeom& g) {
    using Matrix = typename TensorT<S>::Matrix;
    const auto& xv = x.value();
    const Eigen::Index patch = static_cast<Eigen::Index>(xv.channels()) * g.ksize * g.ksize;
    if (w.value().m.cols() != patch) {
        throw ShapeError("conv2d: weight columns (" + std::to_string(w.value().m.cols()) +
                         ") != in_channels*k*k (" + std::to_string(patch) + ")");
    }
    if (b.value().m.rows() != w.value().m.rows() || b.value().m.cols() != 1) {
        throw ShapeError("conv2d: bias must be (out x 1)");
    }
    const int oh = detail::conv_out_dim(xv.height, g);
    const int ow = detail::conv_out_dim(xv.width, g);
    Matrix cols = detail::im2col(xv, g, oh, ow);
    TensorT<S> out(oh, ow, w.value().m * cols);
    out.m.colwise() += b.value().m.col(0);

    auto px = x.node();
    auto pw = w.node();
    auto pb = b.node();
    const bool need = x.requires_grad() || w.requires_grad() || b.requires_grad();
    const int h = xv.height;
    const int wdt = xv.width;
    return detail::make_op<S>(
        std::move(out), {px, pw, pb},
        [px, pw, pb, g, oh, ow, h, wdt, cols = need ? std::move(cols) : Matrix()](NodeT<S>& n) {
            detail::accumulate(pw, (n.grad.m * cols.transpose()).eval());
            detail::accumulate(pb, n.grad.m.rowwise().sum().eval());
            if (px->requires_grad) {
                Matrix gcols = pw->value.m.transpose() * n.grad.m;
                Matrix gx = Matrix::Zero(px->value.m.rows(), px->value.m.cols());
                detail::col2im_add<S>(gx, gcols, h, wdt, g, oh, ow);
                detail::accumulate(px, gx);
            }
        });
}

template <class S>
VarT<S> upsample_nearest2(const VarT<S>& x) {
    const auto& xv = x.value();
    const int oh = xv.height * 2;
    const int ow = xv.width * 2;
    TensorT<S> out = TensorT<S>::spatial(xv.channels(), oh, ow);
    for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
            out.m.col(static_cast<Eigen::Index>(y) * ow + xx) =
                xv.m.col(static_cast<Eigen::Index>(y / 2) * xv.width + xx / 2);
        }
    }
    auto px = x.node();
    const int ih = xv.height;
    const int iw = xv.width;
    return detail::make_op<S>(std::move(out), {px}, [px, ih, iw, oh, ow](NodeT<S>& n) {
        typename TensorT<S>::Matrix gx =
            TensorT<S>::Matrix::Zero(px->value.m.rows(), px->value.m.cols());
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                gx.col(static_cast<Eigen::Index>(y / 2) * iw + xx / 2) +=
                    n.grad.m.col(static_cast<Eigen::Index>(y) * ow + xx);
            }
        }
        detail::accumulate(px, gx);
    });
}

// (C, H*W) -> (C*r*r, H/r * W/r); pure index permutation.
template <class S>
VarT<S> space_to_depth(const VarT<S>& x, int r) {
    const auto& xv = x.value();
    if (xv.height % r != 0 || xv.width % r != 0) {
        throw ShapeError("space_to_depth: spatial dims not divisible by " + std::to_string(r));
    }
    const int c = xv.channels();
    const int lh = xv.height / r;
    const int lw = xv.width / r;
    TensorT<S> out = TensorT<S>::spatial(c * r * r, lh, lw);
    for (int ly = 0; ly < lh; ++ly) {
        for (int lx = 0; lx < lw; ++lx) {
            const Eigen::Index lp = static_cast<Eigen::Index>(ly) * lw + lx;
            for (int dy = 0; dy < r; ++dy) {
                for (int dx = 0; dx < r; ++dx) {
                    const Eigen::Index ip =
                        static_cast<Eigen::Index>(ly * r + dy) * xv.width + (lx * r + dx);
                    for (int ch = 0; ch < c; ++ch) {
                        out.m(static_cast<Eigen::Index>(ch) * r * r + dy * r + dx, lp) =
                            xv.m(ch, ip);
                    }
                }
            }
        }
    }
    auto px = x.node();
    const int w = xv.width;
    return detail::make_op<S>(std::move(out), {px}, [px, r, lh, lw, c, w](NodeT<S>& n) {
        typename TensorT<S>::Matrix gx =
            TensorT<S>::Matrix::Zero(px->value.m.rows(), px->value.m.cols());
        for (int ly = 0; ly < lh; ++ly) {
            for (int lx = 0; lx < lw; ++lx) {
                const Eigen::Index lp = static_cast<Eigen::Index>(ly) * lw + lx;
                for (int dy = 0; dy < r; ++dy) {
                    for (int dx = 0; dx < r; ++dx) {
                        const Eigen::Index ip =
                            static_cast<Eigen::Index>(ly * r + dy) * w + (lx * r + dx);
                        for (int ch = 0; ch < c; ++ch) {
                            gx(ch, ip) +=
                                n.grad.m(static_cast<Eigen::Index>(ch) * r * r + dy * r + dx, lp);
                        }
                    }
                }
            }
        }
        detail::accumulate(px, gx);
    });
}

// Inverse of space_to_depth: (C*r*r, H*W) -> (C, H*r * W*r).
template <class S>
VarT<S> depth_to_space(const VarT<S>& x, int r) {
    const auto& xv = x.value();
    if (xv.channels() % (r * r) != 0) {
        throw ShapeError("depth_to_space: channels not divisible by r*r");
    }
    const int c = xv.channels() / (r * r);
    const int oh = xv.height * r;
    const int ow = xv.width * r;
    TensorT<S> out = TensorT<S>::spatial(c, oh, ow);
    for (int ly = 0; ly < xv.height; ++ly) {
        for (int lx = 0; lx < xv.width; ++lx) {
            const Eigen::Index lp = static_cast<Eigen::Index>(ly) * xv.width + lx;
            for (int dy = 0; dy < r; ++dy) {
                for (int dx = 0; dx < r; ++dx) {
                    const Eigen::Index op =
                        static_cast<Eigen::Index>(ly * r + dy) * ow + (lx * r + dx);
                    for (int ch = 0; ch < c; ++ch) {
                        out.m(ch, op) = xv.m(static_cast<Eigen::Index>(ch) * r * r + dy * r + dx, lp);
                    }
                }
            }
        }
    }
    auto px = x.node();
    const int lh = xv.height;
    const int lw = xv.width;
    return detail::make_op<S>(std::move(out), {px}, [px, r, lh, lw, c, ow](NodeT<S>& n) {
        typename TensorT<S>::Matrix gx =
            TensorT<S>::Matrix::Zero(px->value.m.rows(), px->value.m.cols());
        for (int ly = 0; ly < lh; ++ly) {
            for (int lx = 0; lx < lw; ++lx) {
                const Eigen::Index lp = static_cast<Eigen::Index>(ly) * lw + lx;
                for (int dy = 0; dy < r; ++dy) {
                    for (int dx = 0; dx < r; ++dx) {
                        const Eigen::Index op =
                            static_cast<Eigen::Index>(ly * r + dy) * ow + (lx * r + dx);
                        for (int ch = 0; ch < c; ++ch) {
                            gx(static_cast<Eigen::Index>(ch) * r * r + dy * r + dx, lp) +=
                                n.grad.m(ch, op);
                        }
                    }
                }
            }
        }
        detail::accumulate(px, gx);
    });
}

// Columns of the embedding matrix selected by token id; scatter-add backward.
template <class S>
VarT<S> select_cols(const VarT<S>& table, const std::vector<int>& ids) {
    const auto& tv = table.value();
    TensorT<S> out = TensorT<S>::tokens(tv.channels(), static_cast<int>(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tv.pixels()) {
            throw IndexError("select_cols: token id out of range");
        }
        out.m.col(static_cast<Eigen::Index>(i)) = tv.m.col(ids[i]);
    }
    auto pt = table.node();
    return detail::make_op<S>(std::move(out), {pt}, [pt, ids](NodeT<S>& n) {
        if (!pt->requires_grad) return;
        typename TensorT<S>::Matrix gt =
            TensorT<S>::Matrix::Zero(pt->value.m.rows(), pt->value.m.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            gt.col(ids[i]) += n.grad.m.col(static_cast<Eigen::Index>(i));
        }
        detail::accumulate(pt, gt);
    });
}

// Global average pool to (C x 1).
template <class S>
VarT<S> rowmean(const VarT<S>& x) {
    TensorT<S> out(1, 1, x.value().m.rowwise().mean());
    auto px = x.node();
    return detail::make_op<S>(std::move(out), {px}, [px](NodeT<S>& n) {
        const S inv = S(1) / static_cast<S>(px->value.m.cols());
        detail::accumulate(px, (n.grad.m.col(0) * inv).replicate(1, px->value.m.cols()).eval());
    });
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

// Single-head cross-attention with pixels as queries and context tokens as
// keys/values. Fused into one node; returns (C x P), no residual.
template <class S>
VarT<S> cross_attention(const VarT<S>& x, const VarT<S>& ctx, const VarT<S>& wq,
                        const VarT<S>& wk, const VarT<S>& wv, const VarT<S>& wo) {
    using Matrix = typename TensorT<S>::Matrix;
    const auto& xv = x.value().m;
    const auto& cv = ctx.value().m;
    const Eigen::Index d = wq.value().m.rows();
    if (wq.value().m.cols() != xv.rows() || wk.value().m.cols() != cv.rows() ||
        wv.value().m.cols() != cv.rows() || wk.value().m.rows() != d ||
        wv.value().m.rows() != d || wo.value().m.cols() != d || wo.value().m.rows() != xv.rows()) {
        throw ShapeError("cross_attention: projection shapes disagree");
    }
    const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(d));
    Matrix q = wq.value().m * xv;                       // d x P
    Matrix k = wk.value().m * cv;                       // d x S
    Matrix v = wv.value().m * cv;                       // d x S
    Matrix scores = (q.transpose() * k) * inv_sqrt_d;   // P x S
    Matrix attn(scores.rows(), scores.cols());
    for (Eigen::Index p = 0; p < scores.rows(); ++p) {
        const S mx = scores.row(p).maxCoeff();
        attn.row(p) = (scores.row(p).array() - mx).exp().matrix();
        attn.row(p) /= attn.row(p).sum();
    }
    Matrix o = v * attn.transpose();                    // d x P
    TensorT<S> out(x.value().height, x.value().width, wo.value().m * o);

    auto px = x.node();
    auto pc = ctx.node();
    auto pq = wq.node();
    auto pk = wk.node();
    auto pv = wv.node();
    auto po = wo.node();
    const bool need = px->requires_grad || pc->requires_grad || pq->requires_grad ||
                      pk->requires_grad || pv->requires_grad || po->requires_grad;
    if (!need) {
        return detail::make_op<S>(std::move(out), {px, pc, pq, pk, pv, po}, {});
    }
    return detail::make_op<S>(
        std::move(out), {px, pc, pq, pk, pv, po},
        [px, pc, pq, pk, pv, po, inv_sqrt_d, q = std::move(q), k = std::move(k), v = std::move(v),
         attn = std::move(attn), o = std::move(o)](NodeT<S>& n) {
            const auto& gy = n.grad.m;     // C x P
            detail::accumulate(po, (gy * o.transpose()).eval());
            Matrix go = po->value.m.transpose() * gy;          // d x P
            Matrix gv = go * attn;                             // d x S
            Matrix ga = go.transpose() * v;                    // P x S
            Matrix gm(ga.rows(), ga.cols());
            for (Eigen::Index p = 0; p < ga.rows(); ++p) {
                const S dot = ga.row(p).dot(attn.row(p));
                gm.row(p) = (attn.row(p).array() * (ga.row(p).array() - dot)).matrix();
            }
            gm *= inv_sqrt_d;
            Matrix gq = k * gm.transpose();                    // d x P
            Matrix gk = q * gm;                                // d x S
            detail::accumulate(pq, (gq * px->value.m.transpose()).eval());
            detail::accumulate(pk, (gk * pc->value.m.transpose()).eval());
            detail::accumulate(pv, (gv * pc->value.m.transpose()).eval());
            detail::accumulate(px, (pq->value.m.transpose() * gq).eval());
            detail::accumulate(
                pc, (pk->value.m.transpose() * gk + pv->value.m.transpose() * gv).eval());
        });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean over all elements of (a - b)^2.
template <class S>
VarT<S> mse_loss(const VarT<S>& a, const VarT<S>& b) {
    require_same_shape(a.value(), b.value(), "mse_loss");
    const S n = static_cast<S>(a.value().m.size());
    TensorT<S> out = TensorT<S>::scalar((a.value().m - b.value().m).squaredNorm() / n);
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_op<S>(std::move(out), {pa, pb}, [pa, pb, n](NodeT<S>& node) {
        const S g = node.grad.m(0, 0) * S(2) / n;
        const auto diff = (pa->value.m - pb->value.m).eval();
        detail::accumulate(pa, (g * diff).eval());
        detail::accumulate(pb, (-g * diff).eval());
    });
}

namespace detail {

template <class S>
typename TensorT<S>::Matrix softmax_cols(const typename TensorT<S>::Matrix& z) {
    typename TensorT<S>::Matrix s(z.rows(), z.cols());
    for (Eigen::Index p = 0; p < z.cols(); ++p) {
        const S mx = z.col(p).maxCoeff();
        s.col(p) = (z.col(p).array() - mx).exp().matrix();
        s.col(p) /= s.col(p).sum();
    }
    return s;
}

}  // namespace detail

// Per-pixel softmax cross entropy against integer labels; mean over pixels.
template <class S>
VarT<S> cross_entropy_loss(const VarT<S>& logits, const std::vector<int>& labels) {
    using Matrix = typename TensorT<S>::Matrix;
    const auto& z = logits.value().m;
    if (static_cast<Eigen::Index>(labels.size()) != z.cols()) {
        throw ShapeError("cross_entropy_loss: label count != pixel count");
    }
    Matrix s = detail::softmax_cols<S>(z);
    S loss = 0;
    for (Eigen::Index p = 0; p < z.cols(); ++p) {
        if (labels[static_cast<std::size_t>(p)] < 0 ||
            labels[static_cast<std::size_t>(p)] >= z.rows()) {
            throw IndexError("cross_entropy_loss: label out of range");
        }
        loss -= std::log(std::max(s(labels[static_cast<std::size_t>(p)], p), S(1e-30)));
    }
    loss /= static_cast<S>(z.cols());
    auto pl = logits.node();
    const bool need = logits.requires_grad();
    return detail::make_op<S>(
        TensorT<S>::scalar(loss), {pl},
        [pl, labels, s = need ? std::move(s) : Matrix()](NodeT<S>& node) {
            const S g = node.grad.m(0, 0) / static_cast<S>(s.cols());
            Matrix gz = s;
            for (Eigen::Index p = 0; p < gz.cols(); ++p) {
                gz(labels[static_cast<std::size_t>(p)], p) -= S(1);
            }
            detail::accumulate(pl, (g * gz).eval());
        });
}

// Soft multi-class Dice loss on softmax probabilities against a one-hot
// target; 1 - mean_c (2*intersect + eps)/(sum + eps).
template <class S>
VarT<S> dice_loss(const VarT<S>& logits, const typename TensorT<S>::Matrix& onehot) {
    using Matrix = typename TensorT<S>::Matrix;
    const auto& z = logits.value().m;
    if (onehot.rows() != z.rows() || onehot.cols() != z.cols()) {
        throw ShapeError("dice_loss: one-hot target shape mismatch");
    }
    const S eps = S(1e-6);
    Matrix s = detail::softmax_cols<S>(z);
    const Eigen::Index c = z.rows();
    Eigen::Array<S, Eigen::Dynamic, 1> inter(c), denom(c);
    for (Eigen::Index i = 0; i < c; ++i) {
        inter(i) = s.row(i).dot(onehot.row(i));
        denom(i) = s.row(i).sum() + onehot.row(i).sum();
    }
    const S loss = S(1) - ((S(2) * inter + eps) / (denom + eps)).mean();
    auto pl = logits.node();
    const bool need = logits.requires_grad();
    return detail::make_op<S>(
        TensorT<S>::scalar(loss), {pl},
        [pl, onehot, eps, s = need ? std::move(s) : Matrix(), inter, denom](NodeT<S>& node) {
            const Eigen::Index c = s.rows();
            const S g = node.grad.m(0, 0);
            // dL/ds then chained through the per-pixel softmax Jacobian.
            Matrix gs(s.rows(), s.cols());
            for (Eigen::Index i = 0; i < c; ++i) {
                const S b = denom(i) + eps;
                const S a = S(2) * inter(i) + eps;
                gs.row(i) =
                    (-(S(1) / static_cast<S>(c)) * (S(2) * onehot.row(i).array() * b - a) / (b * b))
                        .matrix();
            }
            Matrix gz(s.rows(), s.cols());
            for (Eigen::Index p = 0; p < s.cols(); ++p) {
                const S dot = gs.col(p).dot(s.col(p));
                gz.col(p) = (s.col(p).array() * (gs.col(p).array() - dot)).matrix();
            }
            detail::accumulate(pl, (g * gz).eval());
        });
}

// Sinusoidal embedding of an integer timestep, constant w.r.t. parameters.
template <class S>
TensorT<S> sinusoidal_embedding(int t, int dim) {
    TensorT<S> out = TensorT<S>::tokens(dim, 1);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        out.m(i, 0) = static_cast<S>(std::sin(t * freq));
        out.m(half + i, 0) = static_cast<S>(std::cos(t * freq));
    }
    if (dim % 2 == 1) {
        out.m(dim - 1, 0) = S(1);
    }
    return out;
}

}  // namespace echosynth
