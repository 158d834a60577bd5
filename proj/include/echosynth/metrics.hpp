// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Generation-quality metrics (FID, KID), segmentation surface metrics
// (Dice, Hausdorff, average surface distance), and classification metrics.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "echosynth/tensor.hpp"

namespace echosynth {

struct FeatureSet {
    Eigen::MatrixXd features;   // one row per image
    std::string extractor_id;
    std::uint64_t source_hash = 0;
};

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;        // unbiased (N-1) estimate, symmetric
};

GaussianStats fit_gaussian(const FeatureSet& fs);

// Frechet distance between Gaussian fits:
// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), clamped at 0.
double fid(const FeatureSet& a, const FeatureSet& b);
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Unbiased squared MMD with the polynomial kernel (x.y/d + 1)^3.
double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct KidEstimate {
    double mean = 0.0;
    double std = 0.0;
    int subsets = 0;
};

KidEstimate kid(const FeatureSet& a, const FeatureSet& b, int subset_size, int n_subsets,
                std::uint64_t seed);

double dice(const Mask& pred, const Mask& gt, int cls);

struct SurfaceDistance {
    double value = 0.0;
    bool defined = false;       // false when either boundary is empty
};

SurfaceDistance hausdorff(const Mask& pred, const Mask& gt, int cls);
SurfaceDistance asd(const Mask& pred, const Mask& gt, int cls);

// Boundary of a class: its pixels 4-adjacent to a different class (the image
// border counts as different). Exposed for the metric oracles.
std::vector<std::pair<int, int>> class_boundary(const Mask& m, int cls);

struct ClassificationMetrics {
    double accuracy = 0.0;
    double precision = 0.0;     // macro-averaged
    double recall = 0.0;
    double f1 = 0.0;
};

ClassificationMetrics classification_metrics(const std::vector<int>& pred,
                                             const std::vector<int>& truth);

// ---------------------------------------------------------------------------
// Feature extraction backends
// ---------------------------------------------------------------------------

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    virtual Eigen::VectorXd embed(const Tensor& image) const = 0;
};

// "rproj[:res=32][:dim=64][:seed=17]" — deterministic random-projection
// embedder (test double), or "cnn:<asset path>" — a small convolutional
// embedder with weights loaded from an asset blob.
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec);

// Writes a seeded, randomly initialized CNN embedder asset to disk.
void write_cnn_embedder_asset(const std::filesystem::path& path, std::uint64_t seed);

FeatureSet extract_features(const std::vector<Tensor>& images, const FeatureExtractor& extractor,
                            std::uint64_t source_hash = 0);

}  // namespace echosynth
