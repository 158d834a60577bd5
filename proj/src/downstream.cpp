// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/downstream.hpp"

#include <algorithm>
#include <cmath>

#include "echosynth/errors.hpp"
#include "echosynth/training.hpp"

namespace echosynth {

SegUNet::SegUNet(int in_channels, int classes, int base_width, int depth, std::uint64_t seed)
    : depth_(depth) {
    Rng rng(seed);
    auto width = [base_width](int l) { return base_width << l; };
    in_conv_.init(rng, "seg.in", in_channels, base_width, Conv2dGeom{3, 1, 1});
    enc_a_.resize(static_cast<std::size_t>(depth));
    enc_b_.resize(static_cast<std::size_t>(depth));
    dec_a_.resize(static_cast<std::size_t>(depth));
    dec_b_.resize(static_cast<std::size_t>(depth));
    down_.resize(static_cast<std::size_t>(depth - 1));
    up_.resize(static_cast<std::size_t>(depth - 1));
    for (int l = 0; l < depth; ++l) {
        const auto lvl = std::to_string(l);
        enc_a_[l].init(rng, "seg.enc_a" + lvl, width(l), width(l), Conv2dGeom{3, 1, 1});
        enc_b_[l].init(rng, "seg.enc_b" + lvl, width(l), width(l), Conv2dGeom{3, 1, 1});
        if (l < depth - 1) {
            down_[l].init(rng, "seg.down" + lvl, width(l), width(l + 1), Conv2dGeom{3, 2, 1});
            up_[l].init(rng, "seg.up" + lvl, width(l + 1), width(l), Conv2dGeom{3, 1, 1});
        }
        dec_a_[l].init(rng, "seg.dec_a" + lvl, 2 * width(l), width(l), Conv2dGeom{3, 1, 1});
        dec_b_[l].init(rng, "seg.dec_b" + lvl, width(l), width(l), Conv2dGeom{3, 1, 1});
    }
    mid_.init(rng, "seg.mid", width(depth - 1), width(depth - 1), Conv2dGeom{3, 1, 1});
    out_conv_.init(rng, "seg.out", base_width, classes, Conv2dGeom{1, 1, 0});
}

VarT<float> SegUNet::forward(GraphT<float>& g, const VarT<float>& image) {
    std::vector<VarT<float>> skips;
    auto x = in_conv_(g, image);
    for (int l = 0; l < depth_; ++l) {
        x = silu(enc_a_[l](g, x));
        x = silu(enc_b_[l](g, x));
        skips.push_back(x);
        if (l < depth_ - 1) x = down_[l](g, x);
    }
    x = silu(mid_(g, x));
    for (int l = depth_ - 1; l >= 0; --l) {
        if (l < depth_ - 1) x = up_[l](g, upsample_nearest2(x));
        x = silu(dec_a_[l](g, concat_channels(x, skips[l])));
        x = silu(dec_b_[l](g, x));
    }
    return out_conv_(g, x);
}

Mask SegUNet::predict(const Tensor& image) {
    GraphT<float> g;
    const auto logits = forward(g, g.constant(image)).value();
    Mask out(image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            Eigen::Index best = 0;
            logits.m.col(static_cast<Eigen::Index>(y) * image.width + x).maxCoeff(&best);
            out(y, x) = static_cast<int>(best);
        }
    }
    return out;
}

void SegUNet::collect(std::vector<ParamT<float>*>& out) {
    in_conv_.collect(out);
    for (int l = 0; l < depth_; ++l) {
        enc_a_[l].collect(out);
        enc_b_[l].collect(out);
        if (l < depth_ - 1) {
            down_[l].collect(out);
            up_[l].collect(out);
        }
        dec_a_[l].collect(out);
        dec_b_[l].collect(out);
    }
    mid_.collect(out);
    out_conv_.collect(out);
}

namespace {

struct SegSample {
    Tensor image;
    Mask mask;
    std::vector<int> labels;                 // per-pixel class ids
    Eigen::MatrixXf onehot;
};

std::vector<SegSample> load_seg_samples(const DatasetManifest& m, int resolution, int classes,
                                        bool require_labels) {
    std::vector<SegSample> out;
    for (const auto& d : m.records) {
        if (d.label_path.empty()) {
            if (require_labels) {
                throw ConfigError("record " + d.image_path +
                                  " has no label map; segmentation training requires one");
            }
            continue;
        }
        const auto rec = load_record(m, d, resolution);
        SegSample s;
        s.image = rec.image;
        s.mask = rec.label_map;
        s.labels.resize(static_cast<std::size_t>(resolution) * resolution);
        s.onehot = Eigen::MatrixXf::Zero(classes, static_cast<Eigen::Index>(resolution) * resolution);
        for (int y = 0; y < resolution; ++y) {
            for (int x = 0; x < resolution; ++x) {
                const int cls = rec.label_map(y, x);
                if (cls < 0 || cls >= classes) {
                    throw IntegrityError("class " + std::to_string(cls) + " out of range in " +
                                         d.image_path);
                }
                const auto p = static_cast<std::size_t>(y) * resolution + x;
                s.labels[p] = cls;
                s.onehot(cls, static_cast<Eigen::Index>(p)) = 1.0f;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

void check_validation_is_real(const DatasetManifest& validation) {
    for (const auto& d : validation.records) {
        if (d.provenance != Provenance::real) {
            throw ContractError("validation manifest contains a synthetic record: " +
                                d.image_path);
        }
    }
}

}  // namespace

SegMetricsRow evaluate_segmentation(SegUNet& net, const DatasetManifest& validation,
                                    int resolution) {
    SegMetricsRow row;
    std::array<double, 3> dice_sum{}, hd_sum{}, asd_sum{};
    std::array<long, 3> n{}, hd_n{}, asd_n{};
    for (const auto& d : validation.records) {
        if (d.label_path.empty()) continue;
        const auto rec = load_record(validation, d, resolution);
        const auto pred = net.predict(rec.image);
        for (int cls = 1; cls <= 3; ++cls) {
            dice_sum[cls - 1] += dice(pred, rec.label_map, cls);
            ++n[cls - 1];
            const auto h = hausdorff(pred, rec.label_map, cls);
            if (h.defined) {
                hd_sum[cls - 1] += h.value;
                ++hd_n[cls - 1];
            } else {
                ++row.hd_undefined;
            }
            const auto a = asd(pred, rec.label_map, cls);
            if (a.defined) {
                asd_sum[cls - 1] += a.value;
                ++asd_n[cls - 1];
            } else {
                ++row.asd_undefined;
            }
        }
    }
    for (int c = 0; c < 3; ++c) {
        row.dice[c] = n[c] > 0 ? dice_sum[c] / n[c] : 0.0;
        row.hd[c] = hd_n[c] > 0 ? hd_sum[c] / hd_n[c] : 0.0;
        row.asd[c] = asd_n[c] > 0 ? asd_sum[c] / asd_n[c] : 0.0;
    }
    row.dice_mean = (row.dice[0] + row.dice[1] + row.dice[2]) / 3.0;
    row.hd_mean = (row.hd[0] + row.hd[1] + row.hd[2]) / 3.0;
    row.asd_mean = (row.asd[0] + row.asd[1] + row.asd[2]) / 3.0;
    return row;
}

SegResult train_segmentation(const SegConfig& cfg, const DatasetManifest& mixed,
                             const DatasetManifest& validation) {
    check_validation_is_real(validation);
    // Synthetic records must carry the label map they were conditioned on.
    for (const auto& d : mixed.records) {
        if (d.provenance == Provenance::synthetic && d.label_path.empty()) {
            throw ConfigError("synthetic record " + d.image_path +
                              " carries no inherited label map");
        }
    }
    const auto samples = load_seg_samples(mixed, cfg.resolution, cfg.classes, true);
    if (samples.empty()) throw ConfigError("segmentation training set is empty");

    SegUNet net(1, cfg.classes, cfg.base_width, cfg.depth, cfg.seed);
    std::vector<ParamT<float>*> params;
    net.collect(params);
    AdamOptimizer<float> opt(params, cfg.learning_rate);
    Rng rng(cfg.seed ^ 0x5e67ull);

    SegResult result;
    result.regime = mixed.header.dataset_name;
    result.val_manifest_hash = validation.content_hash();
    result.seed = cfg.seed;

    double best_val = -1.0;
    int since_best = 0;
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i)))]);
        }
        double epoch_loss = 0.0;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end =
                std::min(order.size(), cursor + static_cast<std::size_t>(cfg.batch_size));
            const double inv = 1.0 / static_cast<double>(batch_end - cursor);
            opt.zero_grad();
            for (; cursor < batch_end; ++cursor) {
                const auto& s = samples[order[cursor]];
                GraphT<float> g;
                auto logits = net.forward(g, g.constant(s.image));
                auto loss = add(cross_entropy_loss(logits, s.labels),
                                dice_loss(logits, s.onehot));
                epoch_loss += static_cast<double>(loss.value().m(0, 0));
                g.backward(scale(loss, inv));
            }
            opt.step();
        }
        result.train_loss_curve.push_back(epoch_loss / static_cast<double>(samples.size()));

        const auto val_row = evaluate_segmentation(net, validation, cfg.resolution);
        result.val_dice_curve.push_back(val_row.dice_mean);
        result.epochs_run = epoch + 1;
        if (val_row.dice_mean > best_val + 1e-6) {
            best_val = val_row.dice_mean;
            since_best = 0;
        } else if (++since_best >= cfg.early_stop_patience) {
            break;
        }
    }
    result.metrics = evaluate_segmentation(net, validation, cfg.resolution);
    return result;
}

std::unique_ptr<FeatureExtractor> make_backbone(const std::string& spec) {
    if (spec.rfind("cnn-random:", 0) == 0) {
        std::uint64_t seed = 0;
        const auto eq = spec.find("seed=");
        if (eq != std::string::npos) seed = std::stoull(spec.substr(eq + 5));
        const auto dir = std::filesystem::temp_directory_path();
        const auto asset =
            dir / ("echosynth_backbone_" + std::to_string(seed) + ".bin");
        write_cnn_embedder_asset(asset, seed);
        return make_extractor("cnn:" + asset.string());
    }
    return make_extractor(spec);
}

std::uint64_t extractor_checksum(const FeatureExtractor& e) {
    // Behavior-level checksum: embeddings of fixed probe images.
    Rng rng(0xbacbacd1ull);
    std::uint64_t h = kFnvOffset;
    for (int i = 0; i < 2; ++i) {
        const Tensor probe = randn_spatial<float>(rng, 1, 16, 16);
        const Eigen::VectorXd v = e.embed(probe);
        for (Eigen::Index j = 0; j < v.size(); ++j) {
            const double x = v(j);
            h = fnv1a64(&x, sizeof(x), h);
        }
    }
    return h;
}

std::pair<ClassificationMetrics, std::vector<double>> train_linear_head(
    const Eigen::MatrixXd& train_features, const std::vector<int>& train_labels,
    const Eigen::MatrixXd& val_features, const std::vector<int>& val_labels, int epochs,
    double learning_rate) {
    const Eigen::Index d = train_features.cols();
    const Eigen::Index n = train_features.rows();
    // Standardize with train statistics.
    Eigen::RowVectorXd mean = train_features.colwise().mean();
    Eigen::RowVectorXd sd =
        ((train_features.rowwise() - mean).array().square().colwise().sum() / std::max<double>(1, n - 1))
            .sqrt()
            .matrix();
    for (Eigen::Index j = 0; j < d; ++j) {
        if (sd(j) < 1e-9) sd(j) = 1.0;
    }
    const Eigen::MatrixXd xt = (train_features.rowwise() - mean).array().rowwise() / sd.array();
    const Eigen::MatrixXd xv = (val_features.rowwise() - mean).array().rowwise() / sd.array();

    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    double b = 0.0;
    std::vector<double> curve;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const Eigen::VectorXd z = xt * w + Eigen::VectorXd::Constant(n, b);
        const Eigen::VectorXd p = (1.0 / (1.0 + (-z.array()).exp())).matrix();
        double loss = 0.0;
        Eigen::VectorXd resid(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double y = train_labels[static_cast<std::size_t>(i)];
            loss -= y * std::log(std::max(p(i), 1e-12)) +
                    (1 - y) * std::log(std::max(1 - p(i), 1e-12));
            resid(i) = p(i) - y;
        }
        curve.push_back(loss / static_cast<double>(n));
        const Eigen::VectorXd gw = xt.transpose() * resid / static_cast<double>(n);
        const double gb = resid.mean();
        w -= learning_rate * gw;
        b -= learning_rate * gb;
    }
    std::vector<int> pred(static_cast<std::size_t>(xv.rows()));
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        pred[static_cast<std::size_t>(i)] = xv.row(i).dot(w) + b > 0.0 ? 1 : 0;
    }
    return {classification_metrics(pred, val_labels), curve};
}

ProbeResult linear_probe(const ProbeConfig& cfg, const DatasetManifest& mixed,
                         const DatasetManifest& validation) {
    check_validation_is_real(validation);
    const auto backbone = make_backbone(cfg.backbone);

    ProbeResult result;
    result.regime = mixed.header.dataset_name;
    result.backbone_id = backbone->id();
    result.val_manifest_hash = validation.content_hash();
    result.seed = cfg.seed;
    result.backbone_checksum_before = extractor_checksum(*backbone);

    auto featurize = [&](const DatasetManifest& m, Eigen::MatrixXd& feats,
                         std::vector<int>& labels) {
        std::vector<Tensor> images;
        for (const auto& d : m.records) {
            const auto rec = load_record(m, d, cfg.resolution);
            images.push_back(rec.image);
            labels.push_back(rec.phase == Phase::es ? 1 : 0);
        }
        feats = extract_features(images, *backbone).features;
    };
    Eigen::MatrixXd train_feats, val_feats;
    std::vector<int> train_labels, val_labels;
    featurize(mixed, train_feats, train_labels);
    featurize(validation, val_feats, val_labels);
    if (train_feats.rows() == 0 || val_feats.rows() == 0) {
        throw ConfigError("linear probe needs non-empty train and validation sets");
    }

    auto [metrics, curve] = train_linear_head(train_feats, train_labels, val_feats, val_labels,
                                              cfg.epochs, cfg.learning_rate);
    result.metrics = metrics;
    result.train_loss_curve = std::move(curve);
    result.backbone_checksum_after = extractor_checksum(*backbone);
    if (result.backbone_checksum_after != result.backbone_checksum_before) {
        throw ContractError("probe backbone drifted during training");
    }
    return result;
}

}  // namespace echosynth
