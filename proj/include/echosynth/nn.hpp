// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Small composable network blocks built on the autograd ops. Modules are
// value types: copying one deep-copies its parameters.

#pragma once

#include <string>
#include <vector>

#include "echosynth/autograd.hpp"
#include "echosynth/rng.hpp"

namespace echosynth {

template <class S>
struct ConvLayer {
    ParamT<S> w;
    ParamT<S> b;
    Conv2dGeom geom;

    void init(Rng& rng, const std::string& name, int in_ch, int out_ch, Conv2dGeom g,
              double gain = 1.0) {
        geom = g;
        const int fan_in = in_ch * g.ksize * g.ksize;
        const double std = gain * std::sqrt(2.0 / fan_in);
        w.name = name + ".w";
        w.value = TensorT<S>(1, 1, typename TensorT<S>::Matrix(out_ch, fan_in));
        for (Eigen::Index c = 0; c < w.value.m.cols(); ++c) {
            for (Eigen::Index r = 0; r < w.value.m.rows(); ++r) {
                w.value.m(r, c) = static_cast<S>(rng.normal() * std);
            }
        }
        b.name = name + ".b";
        b.value = TensorT<S>(1, 1, TensorT<S>::Matrix::Zero(out_ch, 1));
        w.zero_grad();
        b.zero_grad();
    }

    void init_zero(const std::string& name, int in_ch, int out_ch, Conv2dGeom g) {
        geom = g;
        w.name = name + ".w";
        w.value = TensorT<S>(1, 1,
                             TensorT<S>::Matrix::Zero(out_ch, in_ch * g.ksize * g.ksize));
        b.name = name + ".b";
        b.value = TensorT<S>(1, 1, TensorT<S>::Matrix::Zero(out_ch, 1));
        w.zero_grad();
        b.zero_grad();
    }

    VarT<S> operator()(GraphT<S>& g, const VarT<S>& x) {
        return conv2d(x, g.param(w), g.param(b), geom);
    }

    void collect(std::vector<ParamT<S>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

template <class S>
struct LinearLayer {
    ParamT<S> w;
    ParamT<S> b;

    void init(Rng& rng, const std::string& name, int in_dim, int out_dim, double gain = 1.0) {
        const double std = gain * std::sqrt(2.0 / in_dim);
        w.name = name + ".w";
        w.value = TensorT<S>(1, 1, typename TensorT<S>::Matrix(out_dim, in_dim));
        for (Eigen::Index c = 0; c < w.value.m.cols(); ++c) {
            for (Eigen::Index r = 0; r < w.value.m.rows(); ++r) {
                w.value.m(r, c) = static_cast<S>(rng.normal() * std);
            }
        }
        b.name = name + ".b";
        b.value = TensorT<S>(1, 1, TensorT<S>::Matrix::Zero(out_dim, 1));
        w.zero_grad();
        b.zero_grad();
    }

    VarT<S> operator()(GraphT<S>& g, const VarT<S>& x) {
        return linear(x, g.param(w), g.param(b));
    }

    void collect(std::vector<ParamT<S>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

// Two 3x3 convs with a timestep-embedding bias between them, residual.
template <class S>
struct ResBlock {
    ConvLayer<S> conv1;
    ConvLayer<S> conv2;
    LinearLayer<S> temb_proj;

    void init(Rng& rng, const std::string& name, int ch, int temb_dim) {
        conv1.init(rng, name + ".conv1", ch, ch, Conv2dGeom{3, 1, 1});
        conv2.init(rng, name + ".conv2", ch, ch, Conv2dGeom{3, 1, 1});
        temb_proj.init(rng, name + ".temb", temb_dim, ch);
    }

    VarT<S> operator()(GraphT<S>& g, const VarT<S>& x, const VarT<S>& temb) {
        auto h = conv1(g, silu(x));
        h = broadcast_add_cols(h, temb_proj(g, temb));
        h = conv2(g, silu(h));
        return add(x, h);
    }

    void collect(std::vector<ParamT<S>*>& out) {
        conv1.collect(out);
        conv2.collect(out);
        temb_proj.collect(out);
    }
};

// Decoder block consuming the channel-concatenated skip (2*ch -> ch).
template <class S>
struct DecoderBlock {
    ConvLayer<S> conv1;
    ConvLayer<S> conv2;
    LinearLayer<S> temb_proj;

    void init(Rng& rng, const std::string& name, int ch, int temb_dim) {
        conv1.init(rng, name + ".conv1", 2 * ch, ch, Conv2dGeom{3, 1, 1});
        conv2.init(rng, name + ".conv2", ch, ch, Conv2dGeom{3, 1, 1});
        temb_proj.init(rng, name + ".temb", temb_dim, ch);
    }

    VarT<S> operator()(GraphT<S>& g, const VarT<S>& cat, const VarT<S>& temb) {
        auto h = conv1(g, silu(cat));
        h = broadcast_add_cols(h, temb_proj(g, temb));
        return conv2(g, silu(h));
    }

    void collect(std::vector<ParamT<S>*>& out) {
        conv1.collect(out);
        conv2.collect(out);
        temb_proj.collect(out);
    }
};

// Residual single-head cross-attention over context tokens.
template <class S>
struct AttentionBlock {
    ParamT<S> wq, wk, wv, wo;

    void init(Rng& rng, const std::string& name, int ch, int ctx_dim, int head_dim) {
        auto fill = [&rng](ParamT<S>& p, const std::string& n, int rows, int cols, double std) {
            p.name = n;
            p.value = TensorT<S>(1, 1, typename TensorT<S>::Matrix(rows, cols));
            for (Eigen::Index c = 0; c < cols; ++c) {
                for (Eigen::Index r = 0; r < rows; ++r) {
                    p.value.m(r, c) = static_cast<S>(rng.normal() * std);
                }
            }
            p.zero_grad();
        };
        fill(wq, name + ".wq", head_dim, ch, 1.0 / std::sqrt(static_cast<double>(ch)));
        fill(wk, name + ".wk", head_dim, ctx_dim, 1.0 / std::sqrt(static_cast<double>(ctx_dim)));
        fill(wv, name + ".wv", head_dim, ctx_dim, 1.0 / std::sqrt(static_cast<double>(ctx_dim)));
        // Small but nonzero so a fresh model is already context sensitive.
        fill(wo, name + ".wo", ch, head_dim, 0.1 / std::sqrt(static_cast<double>(head_dim)));
    }

    VarT<S> operator()(GraphT<S>& g, const VarT<S>& x, const VarT<S>& ctx) {
        return add(x, cross_attention(x, ctx, g.param(wq), g.param(wk), g.param(wv), g.param(wo)));
    }

    void collect(std::vector<ParamT<S>*>& out) {
        out.push_back(&wq);
        out.push_back(&wk);
        out.push_back(&wv);
        out.push_back(&wo);
    }
};

template <class S>
long param_count(const std::vector<ParamT<S>*>& params) {
    long n = 0;
    for (const auto* p : params) n += static_cast<long>(p->value.m.size());
    return n;
}

// Order-stable checksum over a parameter list's raw values.
template <class S>
std::uint64_t params_checksum(const std::vector<ParamT<S>*>& params) {
    std::uint64_t h = kFnvOffset;
    for (const auto* p : params) {
        h = fnv1a64(p->name, h);
        h = tensor_checksum(p->value, h);
    }
    return h;
}

}  // namespace echosynth
