// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation harness for per-view/per-phase FID & KID and structured-text
// rendering of the three report table shapes, each with the published
// full-scale reference block in its footer.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "echosynth/dataset.hpp"
#include "echosynth/downstream.hpp"
#include "echosynth/metrics.hpp"

namespace echosynth {

std::string cell_key(ViewPhase vp);  // "2CH-ED" etc.

struct EvalCell {
    double fid = 0.0;
    double kid_mean = 0.0;
    double kid_std = 0.0;
    int n_real = 0;
    int n_synth = 0;
    bool defined = false;
};

struct KidParams {
    int subset_size = 1000;  // capped at the available set size
    int n_subsets = 100;
    std::uint64_t seed = 0;
};

struct EvaluationReport {
    std::string regime;
    std::string extractor_id;
    std::map<std::string, EvalCell> cells;
    double mean_fid = 0.0;
    bool mean_defined = false;
    std::uint64_t real_hash = 0;
    std::uint64_t synth_hash = 0;
};

// Per (view, phase) cell FID and KID between the real and synthetic
// manifests; features are cached in cache_dir keyed by manifest hash and
// extractor id. Cells with fewer than 2 images on either side are marked
// undefined.
EvaluationReport evaluate_generation(const DatasetManifest& real, const DatasetManifest& synth,
                                     const FeatureExtractor& extractor, const KidParams& kid_params,
                                     const std::filesystem::path& cache_dir, int resolution = 0);

std::string render_evaluation_table(const std::vector<EvaluationReport>& rows);
std::string render_seg_table(const std::vector<SegResult>& rows);
std::string render_cls_table(const std::vector<ProbeResult>& rows);

struct ComparisonReport {
    std::string text;
    std::vector<std::filesystem::path> plots;
};

// Side-by-side regime comparison with best/second-best flags and convergence
// curve plots. Requires >= 2 results sharing one validation manifest hash.
ComparisonReport compare_regimes(const std::vector<SegResult>& seg,
                                 const std::vector<ProbeResult>& probes,
                                 const std::filesystem::path& plot_dir);

// JSON round trips for run directories.
void save_eval_report(const std::filesystem::path& path, const EvaluationReport& r);
EvaluationReport load_eval_report(const std::filesystem::path& path);
void save_seg_result(const std::filesystem::path& path, const SegResult& r);
SegResult load_seg_result(const std::filesystem::path& path);
void save_probe_result(const std::filesystem::path& path, const ProbeResult& r);
ProbeResult load_probe_result(const std::filesystem::path& path);

}  // namespace echosynth
