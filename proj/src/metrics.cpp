// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "echosynth/checkpoint.hpp"
#include "echosynth/errors.hpp"
#include "echosynth/image_io.hpp"
#include "echosynth/nn.hpp"
#include "echosynth/rng.hpp"

namespace echosynth {

GaussianStats fit_gaussian(const FeatureSet& fs) {
    const auto& x = fs.features;
    if (x.rows() < 2) {
        throw ParameterError("Gaussian statistics need at least 2 feature rows, got " +
                             std::to_string(x.rows()));
    }
    if (!x.allFinite()) {
        throw NumericError("feature set contains non-finite entries");
    }
    GaussianStats g;
    g.mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
    g.cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
    g.cov = ((g.cov + g.cov.transpose()) / 2.0).eval();
    return g;
}

namespace {

// PSD square root via eigen-decomposition with eigenvalue clamping at 0.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) {
        throw NumericError("eigen-decomposition failed in the matrix square root (size " +
                           std::to_string(m.rows()) + ", norm " + std::to_string(m.norm()) + ")");
    }
    const Eigen::VectorXd clamped = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * clamped.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.mean.size() != b.mean.size()) {
        throw ShapeError("Frechet distance: feature dimensions disagree");
    }
    const Eigen::MatrixXd sqrt_a = psd_sqrt(a.cov);
    const Eigen::MatrixXd inner = sqrt_a * b.cov * sqrt_a;
    const Eigen::MatrixXd cross = psd_sqrt(((inner + inner.transpose()) / 2.0).eval());
    const double d2 = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() -
                      2.0 * cross.trace();
    return std::max(0.0, d2);
}

double fid(const FeatureSet& a, const FeatureSet& b) {
    if (a.features.cols() != b.features.cols()) {
        throw ShapeError("fid: feature dimensions disagree");
    }
    return frechet_distance(fit_gaussian(a), fit_gaussian(b));
}

double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const auto m = x.rows();
    const auto n = y.rows();
    if (m < 2 || n < 2) {
        throw ParameterError("mmd2_unbiased needs at least 2 rows per set");
    }
    const double d = static_cast<double>(x.cols());
    const auto kernel = [d](const Eigen::MatrixXd& u, const Eigen::MatrixXd& v) {
        return ((u * v.transpose()).array() / d + 1.0).cube().matrix().eval();
    };
    const Eigen::MatrixXd kxx = kernel(x, x);
    const Eigen::MatrixXd kyy = kernel(y, y);
    const Eigen::MatrixXd kxy = kernel(x, y);
    const double sum_xx = kxx.sum() - kxx.trace();
    const double sum_yy = kyy.sum() - kyy.trace();
    return sum_xx / (static_cast<double>(m) * (m - 1)) +
           sum_yy / (static_cast<double>(n) * (n - 1)) -
           2.0 * kxy.sum() / (static_cast<double>(m) * n);
}

KidEstimate kid(const FeatureSet& a, const FeatureSet& b, int subset_size, int n_subsets,
                std::uint64_t seed) {
    if (a.features.cols() != b.features.cols()) {
        throw ShapeError("kid: feature dimensions disagree");
    }
    const auto na = a.features.rows();
    const auto nb = b.features.rows();
    if (subset_size < 2 || subset_size > std::min(na, nb)) {
        throw ParameterError("kid subset_size " + std::to_string(subset_size) +
                             " outside [2, min(" + std::to_string(na) + ", " +
                             std::to_string(nb) + ")]");
    }
    if (n_subsets < 1) {
        throw ParameterError("kid n_subsets must be >= 1");
    }
    Rng rng(seed);
    auto draw = [&](const Eigen::MatrixXd& src) {
        // subset_size distinct rows via a partial Fisher-Yates pass.
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(src.rows()));
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
        for (int i = 0; i < subset_size; ++i) {
            const auto j = i + rng.uniform_int(static_cast<std::int64_t>(idx.size()) - i);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        Eigen::MatrixXd out(subset_size, src.cols());
        for (int i = 0; i < subset_size; ++i) {
            out.row(i) = src.row(idx[static_cast<std::size_t>(i)]);
        }
        return out;
    };
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(n_subsets));
    for (int s = 0; s < n_subsets; ++s) {
        values.push_back(mmd2_unbiased(draw(a.features), draw(b.features)));
    }
    KidEstimate est;
    est.subsets = n_subsets;
    for (double v : values) est.mean += v;
    est.mean /= n_subsets;
    if (n_subsets > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - est.mean) * (v - est.mean);
        est.std = std::sqrt(ss / (n_subsets - 1));
    }
    return est;
}

double dice(const Mask& pred, const Mask& gt, int cls) {
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
        throw ShapeError("dice: mask shapes disagree");
    }
    long p = 0, g = 0, both = 0;
    for (Eigen::Index y = 0; y < pred.rows(); ++y) {
        for (Eigen::Index x = 0; x < pred.cols(); ++x) {
            const bool in_p = pred(y, x) == cls;
            const bool in_g = gt(y, x) == cls;
            p += in_p;
            g += in_g;
            both += in_p && in_g;
        }
    }
    if (p + g == 0) return 1.0;  // both empty, by convention
    return 2.0 * both / static_cast<double>(p + g);
}

std::vector<std::pair<int, int>> class_boundary(const Mask& m, int cls) {
    std::vector<std::pair<int, int>> out;
    const int h = static_cast<int>(m.rows());
    const int w = static_cast<int>(m.cols());
    auto other = [&](int y, int x) {
        if (y < 0 || y >= h || x < 0 || x >= w) return true;  // outside counts as different
        return m(y, x) != cls;
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (m(y, x) != cls) continue;
            if (other(y - 1, x) || other(y + 1, x) || other(y, x - 1) || other(y, x + 1)) {
                out.emplace_back(y, x);
            }
        }
    }
    return out;
}

namespace {

// Exact squared Euclidean distance transform (lower-envelope parabolas),
// one 1D pass per dimension.
void edt_1d(const double* f, int n, std::vector<double>& d) {
    std::vector<int> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n) + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        d[static_cast<std::size_t>(q)] = (q - v[k]) * static_cast<double>(q - v[k]) + f[v[k]];
    }
}

Eigen::MatrixXd squared_edt(const std::vector<std::pair<int, int>>& sites, int h, int w) {
    // Large finite sentinel: infinities would turn the parabola intersection
    // into NaN. Any value far above h^2 + w^2 is exact.
    const double inf = 1e12;
    Eigen::MatrixXd dist = Eigen::MatrixXd::Constant(h, w, inf);
    for (const auto& [y, x] : sites) dist(y, x) = 0.0;
    std::vector<double> f(static_cast<std::size_t>(std::max(h, w)));
    std::vector<double> d(static_cast<std::size_t>(std::max(h, w)));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = dist(y, x);
        edt_1d(f.data(), h, d);
        for (int y = 0; y < h; ++y) dist(y, x) = d[static_cast<std::size_t>(y)];
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f[static_cast<std::size_t>(x)] = dist(y, x);
        edt_1d(f.data(), w, d);
        for (int x = 0; x < w; ++x) dist(y, x) = d[static_cast<std::size_t>(x)];
    }
    return dist;
}

struct DirectedStats {
    double max = 0.0;
    double sum = 0.0;
    long count = 0;
};

DirectedStats directed_boundary_distances(const std::vector<std::pair<int, int>>& from,
                                          const Eigen::MatrixXd& sq_dist_to_other) {
    DirectedStats s;
    for (const auto& [y, x] : from) {
        const double d = std::sqrt(sq_dist_to_other(y, x));
        s.max = std::max(s.max, d);
        s.sum += d;
        ++s.count;
    }
    return s;
}

}  // namespace

SurfaceDistance hausdorff(const Mask& pred, const Mask& gt, int cls) {
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
        throw ShapeError("hausdorff: mask shapes disagree");
    }
    const auto bp = class_boundary(pred, cls);
    const auto bg = class_boundary(gt, cls);
    if (bp.empty() || bg.empty()) {
        return {0.0, false};
    }
    const int h = static_cast<int>(pred.rows());
    const int w = static_cast<int>(pred.cols());
    const auto dist_to_g = squared_edt(bg, h, w);
    const auto dist_to_p = squared_edt(bp, h, w);
    const auto fwd = directed_boundary_distances(bp, dist_to_g);
    const auto bwd = directed_boundary_distances(bg, dist_to_p);
    return {std::max(fwd.max, bwd.max), true};
}

SurfaceDistance asd(const Mask& pred, const Mask& gt, int cls) {
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
        throw ShapeError("asd: mask shapes disagree");
    }
    const auto bp = class_boundary(pred, cls);
    const auto bg = class_boundary(gt, cls);
    if (bp.empty() || bg.empty()) {
        return {0.0, false};
    }
    const int h = static_cast<int>(pred.rows());
    const int w = static_cast<int>(pred.cols());
    const auto fwd = directed_boundary_distances(bp, squared_edt(bg, h, w));
    const auto bwd = directed_boundary_distances(bg, squared_edt(bp, h, w));
    return {(fwd.sum + bwd.sum) / static_cast<double>(fwd.count + bwd.count), true};
}

ClassificationMetrics classification_metrics(const std::vector<int>& pred,
                                             const std::vector<int>& truth) {
    if (pred.size() != truth.size()) {
        throw ShapeError("classification_metrics: prediction/label lengths disagree");
    }
    if (pred.empty()) {
        throw ParameterError("classification_metrics: empty inputs");
    }
    long correct = 0;
    long tp[2] = {0, 0}, fp[2] = {0, 0}, fn[2] = {0, 0};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = pred[i], t = truth[i];
        if (p != 0 && p != 1) throw ParameterError("predictions must be binary 0/1");
        if (t != 0 && t != 1) throw ParameterError("labels must be binary 0/1");
        correct += p == t;
        if (p == t) {
            ++tp[p];
        } else {
            ++fp[p];
            ++fn[t];
        }
    }
    ClassificationMetrics m;
    m.accuracy = static_cast<double>(correct) / pred.size();
    double pr = 0.0, rc = 0.0, f1 = 0.0;
    for (int c = 0; c < 2; ++c) {
        const double prec = tp[c] + fp[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
        const double rec = tp[c] + fn[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
        pr += prec;
        rc += rec;
        f1 += prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
    m.precision = pr / 2.0;
    m.recall = rc / 2.0;
    m.f1 = f1 / 2.0;
    return m;
}

// ---------------------------------------------------------------------------
// Extractors
// ---------------------------------------------------------------------------

namespace {

class RandomProjectionExtractor final : public FeatureExtractor {
public:
    RandomProjectionExtractor(int res, int dim, std::uint64_t seed)
        : res_(res), dim_(dim), seed_(seed) {
        Rng rng(seed);
        proj_.resize(dim, static_cast<Eigen::Index>(res) * res);
        const double scale = 1.0 / std::sqrt(static_cast<double>(res) * res);
        for (Eigen::Index c = 0; c < proj_.cols(); ++c) {
            for (Eigen::Index r = 0; r < proj_.rows(); ++r) {
                proj_(r, c) = rng.normal() * scale;
            }
        }
    }

    std::string id() const override {
        std::ostringstream os;
        os << "rproj:res=" << res_ << ":dim=" << dim_ << ":seed=" << seed_;
        return os.str();
    }

    Eigen::VectorXd embed(const Tensor& image) const override {
        const Tensor r = resample_image(image, res_, res_);
        Eigen::VectorXd flat(static_cast<Eigen::Index>(res_) * res_);
        for (Eigen::Index i = 0; i < flat.size(); ++i) {
            flat(i) = static_cast<double>(r.m(0, i));
        }
        return proj_ * flat;
    }

private:
    int res_;
    int dim_;
    std::uint64_t seed_;
    Eigen::MatrixXd proj_;
};

// Small fixed-architecture conv embedder with weights from an asset blob:
// three stride-2 conv+silu stages then global average pooling.
class CnnExtractor final : public FeatureExtractor {
public:
    explicit CnnExtractor(const std::filesystem::path& asset) {
        Rng rng(0);
        c1_.init(rng, "embed.c1", 1, 8, Conv2dGeom{3, 2, 1});
        c2_.init(rng, "embed.c2", 8, 16, Conv2dGeom{3, 2, 1});
        c3_.init(rng, "embed.c3", 16, 32, Conv2dGeom{3, 2, 1});
        std::vector<ParamT<float>*> params;
        collect(params);
        load_params_blob(asset, params);
        id_ = "cnn:" + hash_hex(file_hash(asset));
    }

    std::string id() const override { return id_; }

    Eigen::VectorXd embed(const Tensor& image) const override {
        GraphT<float> g;
        auto self = const_cast<CnnExtractor*>(this);
        auto h = silu(self->c1_(g, g.constant(image)));
        h = silu(self->c2_(g, h));
        h = silu(self->c3_(g, h));
        const auto pooled = rowmean(h).value();
        Eigen::VectorXd out(pooled.m.rows());
        for (Eigen::Index i = 0; i < out.size(); ++i) {
            out(i) = static_cast<double>(pooled.m(i, 0));
        }
        return out;
    }

    void collect(std::vector<ParamT<float>*>& out) {
        c1_.collect(out);
        c2_.collect(out);
        c3_.collect(out);
    }

private:
    ConvLayer<float> c1_, c2_, c3_;
    std::string id_;
};

}  // namespace

void write_cnn_embedder_asset(const std::filesystem::path& path, std::uint64_t seed) {
    Rng rng(seed);
    ConvLayer<float> c1, c2, c3;
    c1.init(rng, "embed.c1", 1, 8, Conv2dGeom{3, 2, 1});
    c2.init(rng, "embed.c2", 8, 16, Conv2dGeom{3, 2, 1});
    c3.init(rng, "embed.c3", 16, 32, Conv2dGeom{3, 2, 1});
    std::vector<ParamT<float>*> params;
    c1.collect(params);
    c2.collect(params);
    c3.collect(params);
    save_params_blob(path, params);
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec) {
    if (spec.rfind("rproj", 0) == 0) {
        int res = 32, dim = 64;
        std::uint64_t seed = 17;
        std::stringstream ss(spec);
        std::string part;
        std::getline(ss, part, ':');
        while (std::getline(ss, part, ':')) {
            const auto eq = part.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("bad extractor option '" + part + "'");
            }
            const auto key = part.substr(0, eq);
            const auto val = part.substr(eq + 1);
            if (key == "res") {
                res = std::stoi(val);
            } else if (key == "dim") {
                dim = std::stoi(val);
            } else if (key == "seed") {
                seed = std::stoull(val);
            } else {
                throw ConfigError("unknown extractor option '" + key + "'");
            }
        }
        return std::make_unique<RandomProjectionExtractor>(res, dim, seed);
    }
    if (spec.rfind("cnn:", 0) == 0) {
        return std::make_unique<CnnExtractor>(spec.substr(4));
    }
    throw ConfigError("unregistered feature extractor '" + spec + "'");
}

FeatureSet extract_features(const std::vector<Tensor>& images, const FeatureExtractor& extractor,
                            std::uint64_t source_hash) {
    FeatureSet fs;
    fs.extractor_id = extractor.id();
    fs.source_hash = source_hash;
    if (images.empty()) return fs;
    const auto first = extractor.embed(images.front());
    fs.features.resize(static_cast<Eigen::Index>(images.size()), first.size());
    fs.features.row(0) = first.transpose();
    for (std::size_t i = 1; i < images.size(); ++i) {
        fs.features.row(static_cast<Eigen::Index>(i)) = extractor.embed(images[i]).transpose();
    }
    return fs;
}

}  // namespace echosynth
