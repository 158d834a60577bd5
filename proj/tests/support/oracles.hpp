// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Independent brute-force oracles for the metric implementations. These
// deliberately avoid the library's numeric paths (EDT, Gram-matrix MMD,
// eigen square roots).

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "echosynth/tensor.hpp"

namespace echosynth::testing {

// Closed-form squared Frechet distance between diagonal Gaussians.
inline double diag_frechet(const Eigen::VectorXd& mu1, const Eigen::VectorXd& var1,
                           const Eigen::VectorXd& mu2, const Eigen::VectorXd& var2) {
    double d2 = 0.0;
    for (Eigen::Index i = 0; i < mu1.size(); ++i) {
        const double dm = mu1(i) - mu2(i);
        const double ds = std::sqrt(var1(i)) - std::sqrt(var2(i));
        d2 += dm * dm + ds * ds;
    }
    return d2;
}

// Termwise unbiased squared MMD with the cubic polynomial kernel.
inline double brute_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const double d = static_cast<double>(x.cols());
    const auto k = [d](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
        const double v = a.dot(b) / d + 1.0;
        return v * v * v;
    };
    double xx = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.rows(); ++j) {
            if (i != j) xx += k(x.row(i), x.row(j));
        }
    }
    double yy = 0.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        for (Eigen::Index j = 0; j < y.rows(); ++j) {
            if (i != j) yy += k(y.row(i), y.row(j));
        }
    }
    double xy = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < y.rows(); ++j) {
            xy += k(x.row(i), y.row(j));
        }
    }
    const double m = static_cast<double>(x.rows());
    const double n = static_cast<double>(y.rows());
    return xx / (m * (m - 1)) + yy / (n * (n - 1)) - 2.0 * xy / (m * n);
}

struct BruteSurface {
    double hd = 0.0;
    double asd = 0.0;
    bool defined = false;
};

// All-pairs boundary distances. Boundary: class pixels 4-adjacent to a
// different class, with the image border counting as different.
inline BruteSurface brute_surface(const Mask& pred, const Mask& gt, int cls) {
    auto boundary = [cls](const Mask& m) {
        std::vector<std::pair<int, int>> pts;
        for (int y = 0; y < m.rows(); ++y) {
            for (int x = 0; x < m.cols(); ++x) {
                if (m(y, x) != cls) continue;
                bool edge = y == 0 || y + 1 == m.rows() || x == 0 || x + 1 == m.cols();
                if (!edge) {
                    edge = m(y - 1, x) != cls || m(y + 1, x) != cls || m(y, x - 1) != cls ||
                           m(y, x + 1) != cls;
                }
                if (edge) pts.emplace_back(y, x);
            }
        }
        return pts;
    };
    const auto bp = boundary(pred);
    const auto bg = boundary(gt);
    BruteSurface out;
    if (bp.empty() || bg.empty()) return out;
    out.defined = true;
    auto nearest = [](const std::pair<int, int>& p, const std::vector<std::pair<int, int>>& set) {
        double best = 1e300;
        for (const auto& q : set) {
            const double dy = p.first - q.first;
            const double dx = p.second - q.second;
            best = std::min(best, dy * dy + dx * dx);
        }
        return std::sqrt(best);
    };
    double sum = 0.0;
    for (const auto& p : bp) {
        const double d = nearest(p, bg);
        out.hd = std::max(out.hd, d);
        sum += d;
    }
    for (const auto& q : bg) {
        const double d = nearest(q, bp);
        out.hd = std::max(out.hd, d);
        sum += d;
    }
    out.asd = sum / static_cast<double>(bp.size() + bg.size());
    return out;
}

struct BruteClassification {
    double acc = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Macro metrics straight from the confusion matrix.
inline BruteClassification brute_classification(const std::vector<int>& pred,
                                                const std::vector<int>& truth) {
    long cm[2][2] = {{0, 0}, {0, 0}};  // cm[true][pred]
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ++cm[truth[i]][pred[i]];
    }
    BruteClassification out;
    out.acc = static_cast<double>(cm[0][0] + cm[1][1]) / static_cast<double>(pred.size());
    for (int c = 0; c < 2; ++c) {
        const double tp = static_cast<double>(cm[c][c]);
        const double fp = static_cast<double>(cm[1 - c][c]);
        const double fn = static_cast<double>(cm[c][1 - c]);
        const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        out.precision += prec / 2.0;
        out.recall += rec / 2.0;
        out.f1 += (prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0) / 2.0;
    }
    return out;
}

}  // namespace echosynth::testing
