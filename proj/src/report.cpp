// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "echosynth/errors.hpp"
#include "echosynth/plot.hpp"

namespace echosynth {

std::string cell_key(ViewPhase vp) {
    return to_string(vp.view) + "-" + to_string(vp.phase);
}

namespace {

std::string fmt(double v, int prec = 4) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

// Feature cache: matrix blob keyed by manifest hash and extractor id.
void save_features(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
    std::ofstream out(path, std::ios::binary);
    const std::int64_t rows = m.rows(), cols = m.cols();
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
}

bool load_features(const std::filesystem::path& path, Eigen::MatrixXd& m) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    std::int64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (rows < 0 || cols < 0) return false;
    m.resize(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    return static_cast<bool>(in);
}

// Published full-scale results, kept as reference footer rows. Not
// reproducible at desk scale; reports show them for orientation only.
struct RefRow {
    const char* name;
    double cells[4];  // 2CH-ED, 2CH-ES, 4CH-ED, 4CH-ES
    double mean;      // as published
};

constexpr RefRow kRefFid[] = {
    {"unconditional", {4.7712, 4.5490, 5.0679, 4.1077}, 4.6240},
    {"text-conditioned", {1.4499, 2.3445, 1.7494, 2.8399}, 2.0959},
    {"sdm-baseline", {1.8188, 1.7528, 4.4704, 4.4508}, 3.1232},
    {"text+segmentation", {1.3957, 1.6251, 1.6080, 1.3322}, 1.4902},
};

constexpr RefRow kRefKid[] = {
    {"unconditional", {1.4619, 2.5799, 2.5452, 2.0171}, 0.0},
    {"text-conditioned", {1.2570, 2.4584, 1.5466, 2.6263}, 0.0},
    {"sdm-baseline", {2.8221, 2.9019, 5.3975, 5.4414}, 0.0},
    {"text+segmentation", {1.4022, 1.6186, 1.6246, 1.3322}, 0.0},
};

struct RefSegRow {
    const char* name;
    double dice[4];  // mean, lv-endo, lv-epi, la
    double hd[4];
    double asd[4];
};

constexpr RefSegRow kRefSeg[] = {
    {"Real+200%", {0.8685, 0.8931, 0.9200, 0.7924}, {11.57, 8.91, 10.18, 15.61},
     {5.38, 3.61, 3.80, 6.96}},
    {"Real+100%", {0.8759, 0.8995, 0.9244, 0.8038}, {12.65, 9.55, 10.54, 17.85},
     {5.66, 3.87, 3.73, 7.58}},
    {"Real+50%", {0.8721, 0.8950, 0.9248, 0.7966}, {11.93, 9.08, 9.63, 17.09},
     {5.46, 3.64, 3.63, 7.30}},
    {"Real", {0.8700, 0.8902, 0.9206, 0.7991}, {15.02, 9.48, 10.96, 24.62},
     {6.15, 3.79, 3.97, 8.33}},
    {"sdm-baseline", {0.8576, 0.8661, 0.9006, 0.8061}, {13.83, 12.87, 11.76, 16.84},
     {5.52, 4.65, 4.61, 6.43}},
};

struct RefClsRow {
    const char* name;
    double v[4];  // ACC, PR, RC, F1
};

constexpr RefClsRow kRefCls[] = {
    {"resnet18 (real only)", {0.8400, 0.8400, 0.8400, 0.8399}},
    {"resnet18 (unconditional)", {0.8350, 0.8366, 0.8350, 0.8347}},
    {"resnet18 (text-conditioned)", {0.8700, 0.8773, 0.8700, 0.8693}},
    {"resnet18 (sdm-baseline)", {0.8300, 0.8311, 0.8300, 0.8298}},
    {"resnet18 (text+segmentation)", {0.8650, 0.8659, 0.8650, 0.8640}},
    {"vgg16 (real only)", {0.7450, 0.7471, 0.7450, 0.7445}},
    {"vgg16 (unconditional)", {0.7500, 0.7549, 0.7500, 0.7487}},
    {"vgg16 (text-conditioned)", {0.7850, 0.7850, 0.7850, 0.7849}},
    {"vgg16 (sdm-baseline)", {0.7600, 0.7687, 0.7600, 0.7580}},
    {"vgg16 (text+segmentation)", {0.7750, 0.7763, 0.7750, 0.7747}},
};

// Column-wise best (*) and second-best (+) flags.
std::vector<std::string> rank_flags(const std::vector<double>& column, bool higher_better) {
    std::vector<std::string> flags(column.size());
    if (column.size() < 2) return flags;
    std::vector<std::size_t> order(column.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return higher_better ? column[a] > column[b] : column[a] < column[b];
    });
    flags[order[0]] = "*";
    flags[order[1]] = "+";
    return flags;
}

const char* kCellNames[4] = {"2CH-ED", "2CH-ES", "4CH-ED", "4CH-ES"};

}  // namespace

EvaluationReport evaluate_generation(const DatasetManifest& real, const DatasetManifest& synth,
                                     const FeatureExtractor& extractor, const KidParams& kid_params,
                                     const std::filesystem::path& cache_dir, int resolution) {
    EvaluationReport report;
    report.regime = synth.header.dataset_name;
    report.extractor_id = extractor.id();
    report.real_hash = real.content_hash();
    report.synth_hash = synth.content_hash();
    if (!cache_dir.empty()) std::filesystem::create_directories(cache_dir);

    auto features_for = [&](const DatasetManifest& m, ViewPhase vp, int& count) {
        std::vector<Tensor> images;
        for (const auto& d : m.records) {
            if (d.view != vp.view || d.phase != vp.phase) continue;
            images.push_back(load_record(m, d, resolution).image);
        }
        count = static_cast<int>(images.size());
        Eigen::MatrixXd feats;
        std::filesystem::path cache;
        if (!cache_dir.empty()) {
            std::ostringstream key;
            key << "features_" << hash_hex(m.content_hash()) << "_"
                << hash_hex(fnv1a64(extractor.id())) << "_" << cell_key(vp) << ".bin";
            cache = cache_dir / key.str();
            if (load_features(cache, feats) && feats.rows() == count) {
                return feats;
            }
        }
        feats = extract_features(images, extractor, m.content_hash()).features;
        if (!cache.empty()) save_features(cache, feats);
        return feats;
    };

    double fid_sum = 0.0;
    int fid_cells = 0;
    for (const auto vp : all_view_phases()) {
        EvalCell cell;
        const auto fa = features_for(real, vp, cell.n_real);
        const auto fb = features_for(synth, vp, cell.n_synth);
        if (cell.n_real >= 2 && cell.n_synth >= 2) {
            FeatureSet a{fa, extractor.id(), report.real_hash};
            FeatureSet b{fb, extractor.id(), report.synth_hash};
            cell.fid = fid(a, b);
            const int subset = std::min<int>(kid_params.subset_size,
                                             static_cast<int>(std::min(fa.rows(), fb.rows())));
            const auto est = kid(a, b, std::max(2, subset), kid_params.n_subsets,
                                 kid_params.seed);
            cell.kid_mean = est.mean;
            cell.kid_std = est.std;
            cell.defined = true;
            fid_sum += cell.fid;
            ++fid_cells;
        }
        report.cells[cell_key(vp)] = cell;
    }
    if (fid_cells > 0) {
        report.mean_fid = fid_sum / fid_cells;
        report.mean_defined = true;
    }
    return report;
}

std::string render_evaluation_table(const std::vector<EvaluationReport>& rows) {
    std::ostringstream os;
    os << "image synthesis quality (per view/phase)\n";
    os << "regime                    |";
    for (const auto* c : kCellNames) os << "  FID " << c << " |";
    for (const auto* c : kCellNames) os << "  KID " << c << " |";
    os << " mean FID\n";
    for (const auto& r : rows) {
        char name[32];
        std::snprintf(name, sizeof(name), "%-25s", r.regime.substr(0, 25).c_str());
        os << name << " |";
        for (const auto* c : kCellNames) {
            const auto& cell = r.cells.at(c);
            os << " " << (cell.defined ? fmt(cell.fid) : std::string("  undef")) << " |";
        }
        for (const auto* c : kCellNames) {
            const auto& cell = r.cells.at(c);
            os << " " << (cell.defined ? fmt(cell.kid_mean) : std::string("  undef")) << " |";
        }
        os << " " << (r.mean_defined ? fmt(r.mean_fid) : std::string("undef")) << "\n";
    }
    os << "\nKID shown as the subset-mean at raw scale; the published reference scale is "
          "unstated, so values are not directly comparable.\n";
    os << "\npublished full-scale references (120k iterations, multi-GPU; FID | mean KID):\n";
    for (std::size_t i = 0; i < 4; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%-25s", kRefFid[i].name);
        os << name << " |";
        for (double v : kRefFid[i].cells) os << " " << fmt(v) << " |";
        for (double v : kRefKid[i].cells) os << " " << fmt(v) << " |";
        os << " " << fmt(kRefFid[i].mean) << "\n";
    }
    return os.str();
}

std::string render_seg_table(const std::vector<SegResult>& rows) {
    std::ostringstream os;
    os << "downstream segmentation (validation)\n";
    os << "regime                    | Dice mean  endo   epi    la     | HD mean   endo   epi  "
          "  la     | ASD mean  endo   epi    la     | undef\n";
    std::vector<double> dice_col, hd_col, asd_col;
    for (const auto& r : rows) {
        dice_col.push_back(r.metrics.dice_mean);
        hd_col.push_back(r.metrics.hd_mean);
        asd_col.push_back(r.metrics.asd_mean);
    }
    const auto dflag = rank_flags(dice_col, true);
    const auto hflag = rank_flags(hd_col, false);
    const auto aflag = rank_flags(asd_col, false);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& m = rows[i].metrics;
        char name[32];
        std::snprintf(name, sizeof(name), "%-25s", rows[i].regime.substr(0, 25).c_str());
        os << name << " | " << fmt(m.dice_mean);
        os << (dflag[i].empty() ? " " : dflag[i]) << " " << fmt(m.dice[0]) << " " << fmt(m.dice[1])
           << " " << fmt(m.dice[2]) << " | " << fmt(m.hd_mean, 2)
           << (hflag[i].empty() ? " " : hflag[i]) << " " << fmt(m.hd[0], 2) << " "
           << fmt(m.hd[1], 2) << " " << fmt(m.hd[2], 2) << " | " << fmt(m.asd_mean, 2)
           << (aflag[i].empty() ? " " : aflag[i]) << " " << fmt(m.asd[0], 2) << " "
           << fmt(m.asd[1], 2) << " " << fmt(m.asd[2], 2) << " | "
           << m.hd_undefined + m.asd_undefined << "\n";
    }
    os << "(* best, + second best per column; HD/ASD in pixels, excluded-undefined counts "
          "shown)\n";
    os << "\npublished full-scale references (Dice | HD | ASD; mean, LV-endo, LV-epi, LA):\n";
    for (const auto& ref : kRefSeg) {
        char name[32];
        std::snprintf(name, sizeof(name), "%-25s", ref.name);
        os << name << " |";
        for (double v : ref.dice) os << " " << fmt(v);
        os << " |";
        for (double v : ref.hd) os << " " << fmt(v, 2);
        os << " |";
        for (double v : ref.asd) os << " " << fmt(v, 2);
        os << "\n";
    }
    return os.str();
}

std::string render_cls_table(const std::vector<ProbeResult>& rows) {
    std::ostringstream os;
    os << "downstream ED/ES classification (validation)\n";
    os << "backbone (regime)                         |  ACC    PR     RC     F1\n";
    std::vector<double> acc_col;
    for (const auto& r : rows) acc_col.push_back(r.metrics.accuracy);
    const auto flags = rank_flags(acc_col, true);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        char name[48];
        std::snprintf(name, sizeof(name), "%-41s",
                      (r.backbone_id.substr(0, 24) + " (" + r.regime.substr(0, 12) + ")").c_str());
        os << name << " | " << fmt(r.metrics.accuracy) << (flags[i].empty() ? " " : flags[i])
           << " " << fmt(r.metrics.precision) << " " << fmt(r.metrics.recall) << " "
           << fmt(r.metrics.f1) << "\n";
    }
    os << "\npublished full-scale references (Real+100% mixes; ACC, PR, RC, F1):\n";
    for (const auto& ref : kRefCls) {
        char name[48];
        std::snprintf(name, sizeof(name), "%-41s", ref.name);
        os << name << " |";
        for (double v : ref.v) os << " " << fmt(v);
        os << "\n";
    }
    return os.str();
}

ComparisonReport compare_regimes(const std::vector<SegResult>& seg,
                                 const std::vector<ProbeResult>& probes,
                                 const std::filesystem::path& plot_dir) {
    if (seg.size() + probes.size() < 2) {
        throw ParameterError("regime comparison needs at least two results");
    }
    std::uint64_t val_hash = 0;
    bool have = false;
    auto check_hash = [&](std::uint64_t h, const std::string& who) {
        if (!have) {
            val_hash = h;
            have = true;
        } else if (h != val_hash) {
            throw ConfigError("comparison refused: validation manifest hash of " + who +
                              " differs from the shared one");
        }
    };
    for (const auto& s : seg) check_hash(s.val_manifest_hash, s.regime);
    for (const auto& p : probes) check_hash(p.val_manifest_hash, p.regime + "/" + p.backbone_id);

    ComparisonReport out;
    std::ostringstream os;
    if (!seg.empty()) {
        os << render_seg_table(seg);
        os << "\ndeltas vs " << seg.front().regime << " (Dice mean, HD mean, ASD mean):\n";
        for (const auto& s : seg) {
            char name[32];
            std::snprintf(name, sizeof(name), "%-25s", s.regime.substr(0, 25).c_str());
            char line[128];
            std::snprintf(line, sizeof(line), "%s | %+0.4f %+0.2f %+0.2f\n", name,
                          s.metrics.dice_mean - seg.front().metrics.dice_mean,
                          s.metrics.hd_mean - seg.front().metrics.hd_mean,
                          s.metrics.asd_mean - seg.front().metrics.asd_mean);
            os << line;
        }
        os << "\n";
    }
    if (!probes.empty()) {
        os << render_cls_table(probes);
        os << "\ndeltas vs " << probes.front().regime << " (ACC):\n";
        for (const auto& p : probes) {
            char line[128];
            std::snprintf(line, sizeof(line), "%-41s | %+0.4f\n",
                          (p.backbone_id.substr(0, 24) + " (" + p.regime.substr(0, 12) + ")").c_str(),
                          p.metrics.accuracy - probes.front().metrics.accuracy);
            os << line;
        }
    }
    out.text = os.str();

    if (!plot_dir.empty()) {
        std::filesystem::create_directories(plot_dir);
        if (!seg.empty()) {
            std::vector<PlotSeries> loss, val;
            for (const auto& s : seg) {
                loss.push_back({s.regime, s.train_loss_curve});
                val.push_back({s.regime, s.val_dice_curve});
            }
            render_line_plot(loss, plot_dir / "seg_train_loss.pgm");
            render_line_plot(val, plot_dir / "seg_val_dice.pgm");
            out.plots.push_back(plot_dir / "seg_train_loss.pgm");
            out.plots.push_back(plot_dir / "seg_val_dice.pgm");
        }
        if (!probes.empty()) {
            std::vector<PlotSeries> loss;
            for (const auto& p : probes) {
                loss.push_back({p.regime + "/" + p.backbone_id, p.train_loss_curve});
            }
            render_line_plot(loss, plot_dir / "probe_train_loss.pgm");
            out.plots.push_back(plot_dir / "probe_train_loss.pgm");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON round trips
// ---------------------------------------------------------------------------

void save_eval_report(const std::filesystem::path& path, const EvaluationReport& r) {
    nlohmann::json j;
    j["regime"] = r.regime;
    j["extractor_id"] = r.extractor_id;
    j["real_hash"] = hash_hex(r.real_hash);
    j["synth_hash"] = hash_hex(r.synth_hash);
    j["mean_fid"] = r.mean_fid;
    j["mean_defined"] = r.mean_defined;
    for (const auto& [key, cell] : r.cells) {
        j["cells"][key] = {{"fid", cell.fid},       {"kid_mean", cell.kid_mean},
                           {"kid_std", cell.kid_std}, {"n_real", cell.n_real},
                           {"n_synth", cell.n_synth}, {"defined", cell.defined}};
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot write report " + path.string());
    out << j.dump(2) << "\n";
}

EvaluationReport load_eval_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IntegrityError("cannot read report " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    EvaluationReport r;
    r.regime = j.at("regime").get<std::string>();
    r.extractor_id = j.at("extractor_id").get<std::string>();
    r.real_hash = hash_from_hex(j.at("real_hash").get<std::string>());
    r.synth_hash = hash_from_hex(j.at("synth_hash").get<std::string>());
    r.mean_fid = j.at("mean_fid").get<double>();
    r.mean_defined = j.at("mean_defined").get<bool>();
    for (const auto& [key, c] : j.at("cells").items()) {
        EvalCell cell;
        cell.fid = c.at("fid").get<double>();
        cell.kid_mean = c.at("kid_mean").get<double>();
        cell.kid_std = c.at("kid_std").get<double>();
        cell.n_real = c.at("n_real").get<int>();
        cell.n_synth = c.at("n_synth").get<int>();
        cell.defined = c.at("defined").get<bool>();
        r.cells[key] = cell;
    }
    return r;
}

void save_seg_result(const std::filesystem::path& path, const SegResult& r) {
    nlohmann::json j;
    j["regime"] = r.regime;
    j["val_manifest_hash"] = hash_hex(r.val_manifest_hash);
    j["seed"] = r.seed;
    j["epochs_run"] = r.epochs_run;
    j["train_loss_curve"] = r.train_loss_curve;
    j["val_dice_curve"] = r.val_dice_curve;
    j["dice_mean"] = r.metrics.dice_mean;
    j["dice"] = r.metrics.dice;
    j["hd_mean"] = r.metrics.hd_mean;
    j["hd"] = r.metrics.hd;
    j["hd_undefined"] = r.metrics.hd_undefined;
    j["asd_mean"] = r.metrics.asd_mean;
    j["asd"] = r.metrics.asd;
    j["asd_undefined"] = r.metrics.asd_undefined;
    std::ofstream out(path);
    if (!out) throw Error("cannot write result " + path.string());
    out << j.dump(2) << "\n";
}

SegResult load_seg_result(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IntegrityError("cannot read result " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    SegResult r;
    r.regime = j.at("regime").get<std::string>();
    r.val_manifest_hash = hash_from_hex(j.at("val_manifest_hash").get<std::string>());
    r.seed = j.value("seed", 0ull);
    r.epochs_run = j.at("epochs_run").get<int>();
    r.train_loss_curve = j.at("train_loss_curve").get<std::vector<double>>();
    r.val_dice_curve = j.at("val_dice_curve").get<std::vector<double>>();
    r.metrics.dice_mean = j.at("dice_mean").get<double>();
    r.metrics.dice = j.at("dice").get<std::array<double, 3>>();
    r.metrics.hd_mean = j.at("hd_mean").get<double>();
    r.metrics.hd = j.at("hd").get<std::array<double, 3>>();
    r.metrics.hd_undefined = j.at("hd_undefined").get<int>();
    r.metrics.asd_mean = j.at("asd_mean").get<double>();
    r.metrics.asd = j.at("asd").get<std::array<double, 3>>();
    r.metrics.asd_undefined = j.at("asd_undefined").get<int>();
    return r;
}

void save_probe_result(const std::filesystem::path& path, const ProbeResult& r) {
    nlohmann::json j;
    j["regime"] = r.regime;
    j["backbone_id"] = r.backbone_id;
    j["val_manifest_hash"] = hash_hex(r.val_manifest_hash);
    j["seed"] = r.seed;
    j["train_loss_curve"] = r.train_loss_curve;
    j["accuracy"] = r.metrics.accuracy;
    j["precision"] = r.metrics.precision;
    j["recall"] = r.metrics.recall;
    j["f1"] = r.metrics.f1;
    j["backbone_checksum_before"] = hash_hex(r.backbone_checksum_before);
    j["backbone_checksum_after"] = hash_hex(r.backbone_checksum_after);
    std::ofstream out(path);
    if (!out) throw Error("cannot write result " + path.string());
    out << j.dump(2) << "\n";
}

ProbeResult load_probe_result(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IntegrityError("cannot read result " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    ProbeResult r;
    r.regime = j.at("regime").get<std::string>();
    r.backbone_id = j.at("backbone_id").get<std::string>();
    r.val_manifest_hash = hash_from_hex(j.at("val_manifest_hash").get<std::string>());
    r.seed = j.value("seed", 0ull);
    r.train_loss_curve = j.at("train_loss_curve").get<std::vector<double>>();
    r.metrics.accuracy = j.at("accuracy").get<double>();
    r.metrics.precision = j.at("precision").get<double>();
    r.metrics.recall = j.at("recall").get<double>();
    r.metrics.f1 = j.at("f1").get<double>();
    r.backbone_checksum_before = hash_from_hex(j.at("backbone_checksum_before").get<std::string>());
    r.backbone_checksum_after = hash_from_hex(j.at("backbone_checksum_after").get<std::string>());
    return r;
}

}  // namespace echosynth
