// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Downstream harness: a lightweight segmentation UNet and an ED/ES linear
// probe over frozen backbone features, trained on Real+k% mixes.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "echosynth/dataset.hpp"
#include "echosynth/metrics.hpp"
#include "echosynth/nn.hpp"

namespace echosynth {

struct SegConfig {
    int classes = 4;
    int base_width = 8;
    int depth = 3;
    int epochs = 20;
    double learning_rate = 1e-3;
    int batch_size = 4;
    int mix_percent = 0;
    std::uint64_t seed = 0;
    int resolution = 64;
    int early_stop_patience = 6;   // epochs without validation improvement
};

// Plain encoder-decoder UNet (no timestep embedding, no attention).
class SegUNet {
public:
    SegUNet(int in_channels, int classes, int base_width, int depth, std::uint64_t seed);

    VarT<float> forward(GraphT<float>& g, const VarT<float>& image);
    Mask predict(const Tensor& image);
    void collect(std::vector<ParamT<float>*>& out);

private:
    int depth_;
    ConvLayer<float> in_conv_;
    std::vector<ConvLayer<float>> enc_a_, enc_b_, down_, up_;
    ConvLayer<float> mid_;
    std::vector<ConvLayer<float>> dec_a_, dec_b_;
    ConvLayer<float> out_conv_;
};

struct SegMetricsRow {
    double dice_mean = 0.0;
    std::array<double, 3> dice{};      // LV-endo, LV-epi, LA
    double hd_mean = 0.0;
    std::array<double, 3> hd{};
    int hd_undefined = 0;
    double asd_mean = 0.0;
    std::array<double, 3> asd{};
    int asd_undefined = 0;
};

struct SegResult {
    std::string regime;
    SegMetricsRow metrics;
    std::vector<double> train_loss_curve;   // per epoch
    std::vector<double> val_dice_curve;     // per epoch
    int epochs_run = 0;
    std::uint64_t val_manifest_hash = 0;
    std::uint64_t seed = 0;
};

// Trains on the mixed manifest and evaluates on the held-out validation
// manifest. Synthetic records must carry their inherited label maps;
// synthetic records in the validation manifest are a hard error.
SegResult train_segmentation(const SegConfig& cfg, const DatasetManifest& mixed,
                             const DatasetManifest& validation);

// Evaluates an already-trained net (exposed for the smoke pipeline).
SegMetricsRow evaluate_segmentation(SegUNet& net, const DatasetManifest& validation,
                                    int resolution);

struct ProbeConfig {
    std::string backbone = "cnn-random:seed=11";  // or "cnn:<asset>", "rproj:..."
    int epochs = 300;
    double learning_rate = 0.5;
    std::uint64_t seed = 0;
    int resolution = 64;
    int mix_percent = 0;
};

struct ProbeResult {
    std::string regime;
    std::string backbone_id;
    ClassificationMetrics metrics;
    std::vector<double> train_loss_curve;
    std::uint64_t val_manifest_hash = 0;
    std::uint64_t seed = 0;
    std::uint64_t backbone_checksum_before = 0;
    std::uint64_t backbone_checksum_after = 0;
};

// Builds a frozen backbone; "cnn-random:seed=N" is the asset-free double.
std::unique_ptr<FeatureExtractor> make_backbone(const std::string& spec);
std::uint64_t extractor_checksum(const FeatureExtractor& e);

// Trains only a linear softmax head on frozen backbone features; labels are
// the cardiac phase (ED=0, ES=1).
ProbeResult linear_probe(const ProbeConfig& cfg, const DatasetManifest& mixed,
                         const DatasetManifest& validation);

// Head-level entry point for feature-space fixtures: returns (metrics on the
// validation block, per-epoch loss).
std::pair<ClassificationMetrics, std::vector<double>> train_linear_head(
    const Eigen::MatrixXd& train_features, const std::vector<int>& train_labels,
    const Eigen::MatrixXd& val_features, const std::vector<int>& val_labels, int epochs,
    double learning_rate);

}  // namespace echosynth
