// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Noise schedule and the forward/reverse diffusion arithmetic. Everything
// here is pure: same inputs, bit-identical outputs.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "echosynth/errors.hpp"
#include "echosynth/tensor.hpp"

namespace echosynth {

// Serializable description of a schedule; the beta table is always
// re-derived from these four fields, never stored elementwise.
struct ScheduleMeta {
    std::string kind = "linear";
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

class NoiseSchedule {
public:
    NoiseSchedule() = default;
    NoiseSchedule(ScheduleMeta meta, std::vector<double> betas);

    int T() const { return meta_.T; }
    const ScheduleMeta& meta() const { return meta_; }

    // Timestep accessors are 1-based, matching the cumulative product
    // convention; t outside [1, T] raises IndexError.
    double beta(int t) const { return betas_[check(t)]; }
    double alpha(int t) const { return alphas_[check(t)]; }
    double alpha_bar(int t) const { return alpha_bars_[check(t)]; }

    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas() const { return alphas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

private:
    std::size_t check(int t) const {
        if (t < 1 || t > meta_.T) {
            throw IndexError("timestep " + std::to_string(t) + " outside [1, " +
                             std::to_string(meta_.T) + "]");
        }
        return static_cast<std::size_t>(t - 1);
    }

    ScheduleMeta meta_;
    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
};

inline NoiseSchedule::NoiseSchedule(ScheduleMeta meta, std::vector<double> betas)
    : meta_(std::move(meta)), betas_(std::move(betas)) {
    alphas_.resize(betas_.size());
    alpha_bars_.resize(betas_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
        if (!(betas_[i] > 0.0 && betas_[i] < 1.0)) {
            throw ParameterError("beta_" + std::to_string(i + 1) + " = " +
                                 std::to_string(betas_[i]) + " outside (0, 1)");
        }
        alphas_[i] = 1.0 - betas_[i];
        prod *= alphas_[i];
        alpha_bars_[i] = prod;
    }
}

inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end,
                                   const std::string& kind = "linear") {
    if (kind != "linear") {
        throw ParameterError("unknown schedule kind '" + kind + "'");
    }
    if (T < 1) {
        throw ParameterError("step count T = " + std::to_string(T) + " must be >= 1");
    }
    if (!(beta_start > 0.0)) {
        throw ParameterError("beta_start = " + std::to_string(beta_start) + " must be > 0");
    }
    if (!(beta_end < 1.0)) {
        throw ParameterError("beta_end = " + std::to_string(beta_end) + " must be < 1");
    }
    if (!(beta_start <= beta_end)) {
        throw ParameterError("beta_start = " + std::to_string(beta_start) +
                             " must be <= beta_end = " + std::to_string(beta_end));
    }
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        betas[static_cast<std::size_t>(t)] =
            T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1.0);
    }
    return NoiseSchedule(ScheduleMeta{kind, T, beta_start, beta_end}, std::move(betas));
}

inline NoiseSchedule make_schedule(const ScheduleMeta& meta) {
    return make_schedule(meta.T, meta.beta_start, meta.beta_end, meta.kind);
}

// x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps, one Markov step.
template <class DA, class DB>
auto forward_step(const Eigen::MatrixBase<DA>& x_prev, int t, const Eigen::MatrixBase<DB>& eps,
                  const NoiseSchedule& s) {
    using Scalar = typename DA::Scalar;
    if (x_prev.rows() != eps.rows() || x_prev.cols() != eps.cols()) {
        throw ShapeError("forward_step: eps shape does not match x_prev");
    }
    const auto a = static_cast<Scalar>(std::sqrt(1.0 - s.beta(t)));
    const auto b = static_cast<Scalar>(std::sqrt(s.beta(t)));
    return (a * x_prev + b * eps).eval();
}

// Closed-form jump to step t: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <class DA, class DB>
auto q_sample(const Eigen::MatrixBase<DA>& x0, int t, const Eigen::MatrixBase<DB>& eps,
              const NoiseSchedule& s) {
    using Scalar = typename DA::Scalar;
    if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
        throw ShapeError("q_sample: eps shape does not match x0");
    }
    const double abar = s.alpha_bar(t);
    const auto a = static_cast<Scalar>(std::sqrt(abar));
    const auto b = static_cast<Scalar>(std::sqrt(1.0 - abar));
    return (a * x0 + b * eps).eval();
}

// Posterior step: mean (x_t - beta_t/sqrt(1-abar_t) eps_pred)/sqrt(alpha_t)
// plus sigma_t z with the fixed variance sigma_t^2 = beta_t. z must be zero
// at t = 1.
template <class DA, class DB, class DC>
auto reverse_step(const Eigen::MatrixBase<DA>& x_t, int t, const Eigen::MatrixBase<DB>& eps_pred,
                  const NoiseSchedule& s, const Eigen::MatrixBase<DC>& z) {
    using Scalar = typename DA::Scalar;
    if (t < 1) {
        throw IndexError("reverse_step: t = " + std::to_string(t) + " must be >= 1");
    }
    if (x_t.rows() != eps_pred.rows() || x_t.cols() != eps_pred.cols() ||
        x_t.rows() != z.rows() || x_t.cols() != z.cols()) {
        throw ShapeError("reverse_step: eps_pred/z shape does not match x_t");
    }
    if (t == 1 && z.cwiseAbs().maxCoeff() != Scalar(0)) {
        throw ContractError("reverse_step: z must be zero at t = 1");
    }
    const double beta = s.beta(t);
    const double abar = s.alpha_bar(t);
    const auto inv_sqrt_alpha = static_cast<Scalar>(1.0 / std::sqrt(s.alpha(t)));
    const auto eps_coeff = static_cast<Scalar>(beta / std::sqrt(1.0 - abar));
    const auto sigma = static_cast<Scalar>(std::sqrt(beta));
    return (inv_sqrt_alpha * (x_t - eps_coeff * eps_pred) + sigma * z).eval();
}

// TensorT conveniences.

template <class S>
TensorT<S> forward_step(const TensorT<S>& x_prev, int t, const TensorT<S>& eps,
                        const NoiseSchedule& s) {
    return TensorT<S>(x_prev.height, x_prev.width, forward_step(x_prev.m, t, eps.m, s));
}

template <class S>
TensorT<S> q_sample(const TensorT<S>& x0, int t, const TensorT<S>& eps, const NoiseSchedule& s) {
    return TensorT<S>(x0.height, x0.width, q_sample(x0.m, t, eps.m, s));
}

template <class S>
TensorT<S> reverse_step(const TensorT<S>& x_t, int t, const TensorT<S>& eps_pred,
                        const NoiseSchedule& s, const TensorT<S>& z) {
    return TensorT<S>(x_t.height, x_t.width, reverse_step(x_t.m, t, eps_pred.m, s, z.m));
}

}  // namespace echosynth
