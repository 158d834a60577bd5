// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checker. Independent of the autograd
// sweep: it only perturbs parameter values and re-evaluates the loss.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "echosynth/autograd.hpp"

namespace echosynth::testing {

struct FdReport {
    double max_rel_err = 0.0;
    std::string worst;
    long coords = 0;
};

// loss_fn must recompute the scalar loss from the params' current values.
// analytic gradients are read from p->grad, which the caller fills first.
inline FdReport fd_check(const std::vector<ParamT<double>*>& params,
                         const std::function<double()>& loss_fn, double h = 1e-5,
                         double floor_val = 1e-7) {
    FdReport rep;
    for (auto* p : params) {
        if (!p->trainable) continue;
        for (Eigen::Index c = 0; c < p->value.m.cols(); ++c) {
            for (Eigen::Index r = 0; r < p->value.m.rows(); ++r) {
                const double keep = p->value.m(r, c);
                p->value.m(r, c) = keep + h;
                const double up = loss_fn();
                p->value.m(r, c) = keep - h;
                const double dn = loss_fn();
                p->value.m(r, c) = keep;
                const double fd = (up - dn) / (2.0 * h);
                const double an = p->grad.m(r, c);
                const double denom = std::max({std::abs(fd), std::abs(an), floor_val});
                const double rel = std::abs(fd - an) / denom;
                ++rep.coords;
                if (rel > rep.max_rel_err) {
                    rep.max_rel_err = rel;
                    rep.worst = p->name + "(" + std::to_string(r) + "," + std::to_string(c) +
                                ") fd=" + std::to_string(fd) + " an=" + std::to_string(an);
                }
            }
        }
    }
    return rep;
}

}  // namespace echosynth::testing
