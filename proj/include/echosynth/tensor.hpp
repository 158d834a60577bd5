// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>

#include "echosynth/errors.hpp"
#include "echosynth/hashing.hpp"
#include "echosynth/rng.hpp"

namespace echosynth {

// Dense feature map: rows are channels, columns are pixels in row-major
// spatial order (p = y * width + x). Token sequences reuse the same storage
// with height == 1 and width == column count.
template <class S>
struct TensorT {
    using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

    int height = 0;
    int width = 0;
    Matrix m;

    TensorT() = default;
    TensorT(int h, int w, Matrix values) : height(h), width(w), m(std::move(values)) {}

    static TensorT spatial(int channels, int h, int w) {
        return TensorT(h, w, Matrix::Zero(channels, static_cast<Eigen::Index>(h) * w));
    }

    static TensorT tokens(int dim, int count) {
        return TensorT(1, count, Matrix::Zero(dim, count));
    }

    static TensorT scalar(S v) {
        Matrix one(1, 1);
        one(0, 0) = v;
        return TensorT(1, 1, std::move(one));
    }

    int channels() const { return static_cast<int>(m.rows()); }
    int pixels() const { return static_cast<int>(m.cols()); }

    S& at(int c, int y, int x) { return m(c, static_cast<Eigen::Index>(y) * width + x); }
    S at(int c, int y, int x) const { return m(c, static_cast<Eigen::Index>(y) * width + x); }

    bool same_shape(const TensorT& o) const {
        return height == o.height && width == o.width && m.rows() == o.m.rows() &&
               m.cols() == o.m.cols();
    }

    bool all_finite() const { return m.allFinite(); }

    template <class T>
    TensorT<T> cast() const {
        return TensorT<T>(height, width, m.template cast<T>());
    }
};

using Tensor = TensorT<float>;

// Integer class mask, height x width.
using Mask = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const std::string& who) {
    if (!a.same_shape(b)) {
        throw ShapeError(who + ": shape mismatch (" + std::to_string(a.m.rows()) + "x" +
                         std::to_string(a.m.cols()) + " vs " + std::to_string(b.m.rows()) + "x" +
                         std::to_string(b.m.cols()) + ")");
    }
}

template <class S>
TensorT<S> randn_like(Rng& rng, const TensorT<S>& ref) {
    TensorT<S> out = ref;
    for (Eigen::Index c = 0; c < out.m.cols(); ++c) {
        for (Eigen::Index r = 0; r < out.m.rows(); ++r) {
            out.m(r, c) = static_cast<S>(rng.normal());
        }
    }
    return out;
}

template <class S>
TensorT<S> randn_spatial(Rng& rng, int channels, int h, int w) {
    return randn_like(rng, TensorT<S>::spatial(channels, h, w));
}

template <class S>
S max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
    return (a.m - b.m).cwiseAbs().maxCoeff();
}

template <class S>
S l2_diff(const TensorT<S>& a, const TensorT<S>& b) {
    return (a.m - b.m).norm();
}

// ||a - b|| / max(||a||, ||b||, tiny); symmetric relative distance.
template <class S>
S relative_l2_diff(const TensorT<S>& a, const TensorT<S>& b) {
    const S denom = std::max({a.m.norm(), b.m.norm(), static_cast<S>(1e-12)});
    return (a.m - b.m).norm() / denom;
}

// Order-stable checksum of the raw float bits.
template <class S>
std::uint64_t tensor_checksum(const TensorT<S>& t, std::uint64_t seed = kFnvOffset) {
    std::uint64_t h = seed;
    for (Eigen::Index c = 0; c < t.m.cols(); ++c) {
        for (Eigen::Index r = 0; r < t.m.rows(); ++r) {
            const double v = static_cast<double>(t.m(r, c));
            const auto bits = std::bit_cast<std::uint64_t>(v);
            h = fnv1a64(&bits, sizeof(bits), h);
        }
    }
    return h;
}

}  // namespace echosynth
