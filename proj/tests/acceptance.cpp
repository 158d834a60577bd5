// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: twelve criteria, one pass/fail line each. Exit code is
// the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "echosynth/dataset.hpp"
#include "echosynth/downstream.hpp"
#include "echosynth/metrics.hpp"
#include "echosynth/phantom.hpp"
#include "echosynth/report.hpp"
#include "echosynth/sampler.hpp"
#include "echosynth/training.hpp"
#include "support/fd_check.hpp"
#include "support/oracles.hpp"
#include "support/toy_models.hpp"

using namespace echosynth;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_criterion_failures = 0;
int g_check_failures = 0;

#define ACCEPT_CHECK(cond, msg)                                                         \
    do {                                                                                \
        if (!(cond)) {                                                                  \
            std::cerr << "  [check failed] " << __FILE__ << ":" << __LINE__ << " "      \
                      << msg << "\n";                                                   \
            ++g_check_failures;                                                         \
        }                                                                               \
    } while (0)

void run_criterion(int number, const std::string& label, const std::function<void()>& body) {
    g_check_failures = 0;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body();
    } catch (const std::exception& e) {
        std::cerr << "  [exception] " << e.what() << "\n";
        ++g_check_failures;
    }
    const auto secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char line[160];
    std::snprintf(line, sizeof(line), "[%s] criterion %2d: %s (%.1fs)",
                  g_check_failures == 0 ? "PASS" : "FAIL", number, label.c_str(), secs);
    std::cout << line << std::endl;
    if (g_check_failures > 0) ++g_criterion_failures;
}

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    const auto out_file =
        fs::temp_directory_path() / ("echosynth_acc_out_" + std::to_string(counter++) + ".txt");
    const std::string cmd =
        std::string(ECHOSYNTH_CLI_PATH) + " " + args + " > " + out_file.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CmdResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    fs::remove(out_file);
    return r;
}

// ---------------------------------------------------------------------------

void criterion_schedule() {
    Rng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const int T = 1 + static_cast<int>(rng.uniform_int(500));
        const double b0 = 1e-5 + rng.uniform() * 0.4;
        const double b1 = b0 + rng.uniform() * (0.95 - b0);
        const auto s = make_schedule(T, b0, b1);
        double prod = 1.0;
        for (int t = 1; t <= T; ++t) {
            prod *= s.alpha(t);
            ACCEPT_CHECK(s.alpha_bar(t) == prod, "alpha_bar must equal the running product");
            if (t > 1) {
                ACCEPT_CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1),
                             "alpha_bar must be strictly decreasing");
            }
        }
    }
    const auto s = make_schedule(2, 0.5, 0.5);
    ACCEPT_CHECK(std::abs(s.alpha_bar(1) - 0.5) < 1e-15, "T=2 beta=0.5 gives abar_1 = 0.5");
    ACCEPT_CHECK(std::abs(s.alpha_bar(2) - 0.25) < 1e-15, "T=2 beta=0.5 gives abar_2 = 0.25");
}

void criterion_round_trip() {
    const auto s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(7);
    Tensor x0 = randn_spatial<float>(rng, 1, 4, 4);
    x0.m *= 0.5f;

    // Oracle eps at t = 1 recovers x0.
    Tensor eps = randn_like(rng, x0);
    const auto x1 = q_sample(x0, 1, eps, s);
    Tensor zero = Tensor::spatial(1, 4, 4);
    const auto rec = reverse_step(x1, 1, eps, s, zero);
    ACCEPT_CHECK(max_abs_diff(rec, x0) < 1e-5f, "t=1 oracle round trip within 1e-5");

    // Full reverse pass with the analytic denoiser converges to the point.
    const DenoiseFn<float> oracle = [&x0, &s](const Tensor& x_t, int t) {
        const double abar = s.alpha_bar(t);
        Tensor e = x_t;
        e.m = (x_t.m - static_cast<float>(std::sqrt(abar)) * x0.m) /
              static_cast<float>(std::sqrt(1.0 - abar));
        return e;
    };
    const auto endpoint = ddpm_sample_fn<float>(oracle, {1, 4, 4}, s, 99);
    ACCEPT_CHECK(l2_diff(endpoint, x0) < 1e-2f, "oracle-denoiser sampling converges to x0");

    const auto fast = fast_sample_fn<float>(oracle, {1, 4, 4}, 50, s, 99);
    ACCEPT_CHECK(l2_diff(fast, endpoint) < 5e-2f, "50-step sampler agrees with the full pass");
}

void criterion_zero_conv() {
    auto base = testing::micro_text_bundle<float>(21, {"linear", 40, 1e-3, 0.15});
    auto ts = init_control_from_base(base);
    Rng rng(22);
    for (int draw = 0; draw < 20; ++draw) {
        Tensor z = randn_spatial<float>(rng, 1, 8, 8);
        const int t = 1 + static_cast<int>(rng.uniform_int(40));
        const std::string prompt = "draw " + std::to_string(draw) + " prompt words";
        const auto ctx = encode_text(ts, prompt);
        Mask map(8, 8);
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
                map(y, x) = static_cast<int>(rng.uniform_int(4));
            }
        }
        const auto cond = rasterize_label_map<float>(map, 4, 8, 8);
        const auto a = control_denoise(ts, z, t, ctx, cond);
        const auto b = denoise(base, z, t, &ctx);
        ACCEPT_CHECK(relative_l2_diff(a, b) <= 1e-6f,
                     "zero-initialized control output equals the base at draw " << draw);
    }
}

void criterion_freezing() {
    // 100 optimizer steps on the control branch leave the frozen base alone.
    auto ts = init_control_from_base(
        testing::micro_text_bundle<float>(31, {"linear", 30, 1e-3, 0.2}));
    const auto frozen_before = ts.frozen_checksum();
    auto params = ts.trainable_params();
    AdamOptimizer<float> opt(params, 2e-3);
    Rng rng(32);
    const auto prompt = render_textual({View::two_chamber, Phase::ed});
    Mask map = Mask::Zero(8, 8);
    map.block(2, 2, 4, 4).setConstant(1);
    for (int step = 0; step < 100; ++step) {
        opt.zero_grad();
        Tensor img = randn_spatial<float>(rng, 1, 8, 8);
        img.m = img.m.cwiseAbs().cwiseMin(1.0f);
        Tensor eps = randn_spatial<float>(rng, 1, 8, 8);
        GraphT<float> g;
        auto loss = ldm_loss_graph(g, ts, img, prompt,
                                   1 + static_cast<int>(rng.uniform_int(30)), eps, &map);
        g.backward(loss);
        opt.step();
    }
    ACCEPT_CHECK(ts.frozen_checksum() == frozen_before,
                 "frozen base checksum unchanged over 100 control steps");

    // Full probe training leaves the backbone checksum alone.
    const auto dir = fs::temp_directory_path() / "echosynth_acc_probe";
    fs::remove_all(dir);
    write_phantom_tree(dir, 6, 16);
    const auto manifest =
        manifest_from_ingest(ingest(dir), ManifestHeader{"phantoms", 16, {}, 0});
    auto [train_m, val_m] = split_patients(manifest, SplitSpec{2});
    ProbeConfig pc;
    pc.backbone = "cnn-random:seed=77";
    pc.resolution = 16;
    pc.epochs = 120;
    const auto result = linear_probe(pc, train_m, val_m);
    ACCEPT_CHECK(result.backbone_checksum_before == result.backbone_checksum_after,
                 "probe backbone checksum unchanged by training");
    fs::remove_all(dir);
}

void criterion_gradients() {
    Rng rng(41);
    TensorT<double> x0 = randn_spatial<double>(rng, 1, 6, 6);
    x0.m *= 0.5;
    TensorT<double> eps = randn_spatial<double>(rng, 1, 6, 6);
    const int t = 9;

    {
        auto b = testing::micro_uncond_bundle<double>(42);
        auto params = b.trainable_params();
        ACCEPT_CHECK(param_count(params) <= 1000, "unconditional micro model stays under 1e3");
        for (auto* p : params) p->zero_grad();
        GraphT<double> g;
        g.backward(ddpm_loss_graph(g, b, x0, t, eps));
        const auto rep = testing::fd_check(params, [&] {
            GraphT<double> g2;
            return ddpm_loss_graph(g2, b, x0, t, eps).value().m(0, 0);
        });
        ACCEPT_CHECK(rep.max_rel_err < 1e-3,
                     "ddpm loss gradients within 1e-3 of finite differences; worst "
                         << rep.worst);
    }
    {
        auto b = init_control_from_base(testing::micro_text_bundle<double>(43));
        const auto prompt = render_textual({View::four_chamber, Phase::es});
        Mask map = Mask::Zero(6, 6);
        map.block(1, 1, 3, 3).setConstant(2);
        auto params = b.trainable_params();
        ACCEPT_CHECK(param_count(params) <= 1000, "text_seg micro model stays under 1e3");
        for (auto* p : params) p->zero_grad();
        GraphT<double> g;
        g.backward(ldm_loss_graph(g, b, x0, prompt, t, eps, &map));
        const auto rep = testing::fd_check(params, [&] {
            GraphT<double> g2;
            return ldm_loss_graph(g2, b, x0, prompt, t, eps, &map).value().m(0, 0);
        });
        ACCEPT_CHECK(rep.max_rel_err < 1e-3,
                     "latent loss gradients within 1e-3 of finite differences; worst "
                         << rep.worst);
    }
}

void criterion_overfit() {
    // 8 phantom images at 32x32, T = 200, 2000 iterations.
    std::vector<TrainSample> data;
    for (int p = 1; p <= 2; ++p) {
        for (const auto vp : all_view_phases()) {
            const auto ph = make_phantom(phantom_patient_id(p), vp.view, vp.phase, 32);
            TrainSample s;
            s.image = ph.image;
            s.view_phase = vp;
            data.push_back(std::move(s));
        }
    }
    const ScheduleMeta sm{"linear", 200, 1e-4, 0.05};
    auto bundle = ModelBundleT<float>::make_unconditional(testing::toy_uncond_spec(8), sm, 5);
    TrainConfig cfg;
    cfg.mode = GenerationMode::unconditional;
    cfg.learning_rate = 2e-3;
    cfg.max_iterations = 2000;
    cfg.checkpoint_every = 2000;
    cfg.schedule = sm;
    cfg.seed = 11;
    const auto dir = fs::temp_directory_path() / "echosynth_acc_overfit";
    fs::remove_all(dir);
    const auto result = train(cfg, data, bundle, dir);
    double lead = 0.0, trail = 0.0;
    for (int i = 0; i < 100; ++i) {
        lead += result.records[static_cast<std::size_t>(i)].loss;
        trail += result.records[result.records.size() - 100 + static_cast<std::size_t>(i)].loss;
    }
    ACCEPT_CHECK(trail < 0.25 * lead, "trailing-100 mean loss " << trail / 100.0
                                          << " under 25% of leading-100 mean " << lead / 100.0);
    fs::remove_all(dir);
}

void criterion_fid() {
    Rng rng(61);
    auto gaussian = [&rng](int n, const Eigen::VectorXd& mu, const Eigen::VectorXd& sd) {
        FeatureSet fs;
        fs.features.resize(n, mu.size());
        for (int i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < mu.size(); ++j) {
                fs.features(i, j) = mu(j) + sd(j) * rng.normal();
            }
        }
        return fs;
    };
    const Eigen::VectorXd mu0 = Eigen::VectorXd::Zero(8);
    const Eigen::VectorXd sd0 = Eigen::VectorXd::Ones(8);
    const auto a = gaussian(10000, mu0, sd0);
    ACCEPT_CHECK(fid(a, a) <= 1e-6, "fid(A, A) = 0 within 1e-6");

    Eigen::VectorXd mu1(8), sd1(8);
    for (int i = 0; i < 8; ++i) {
        mu1(i) = i % 2 == 0 ? 1.0 : -1.0;
        sd1(i) = 1.5;
    }
    const auto b = gaussian(10000, mu1, sd1);
    const double expect =
        testing::diag_frechet(mu0, sd0.cwiseProduct(sd0), mu1, sd1.cwiseProduct(sd1));
    const double got = fid(a, b);
    ACCEPT_CHECK(std::abs(got - expect) / expect < 0.05,
                 "sampled fid " << got << " within 5% of closed form " << expect);
    ACCEPT_CHECK(std::abs(fid(a, b) - fid(b, a)) <= 1e-8, "fid symmetry within 1e-8");
}

void criterion_kid() {
    Rng rng(71);
    for (int trial = 0; trial < 5; ++trial) {
        const int m = 4 + static_cast<int>(rng.uniform_int(3));
        const int n = 4 + static_cast<int>(rng.uniform_int(3));
        Eigen::MatrixXd x(m, 3), y(n, 3);
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = rng.normal();
        const double lib = mmd2_unbiased(x, y);
        const double brute = testing::brute_mmd2(x, y);
        ACCEPT_CHECK(std::abs(lib - brute) <= 1e-12 * std::max(1.0, std::abs(brute)),
                     "estimator equals the brute-force double sum at N <= 6");
    }
    FeatureSet a, b;
    a.features.resize(400, 8);
    b.features.resize(400, 8);
    for (Eigen::Index i = 0; i < a.features.size(); ++i) a.features(i) = rng.normal();
    for (Eigen::Index i = 0; i < b.features.size(); ++i) b.features(i) = rng.normal();
    const auto est = kid(a, b, 100, 50, 9);
    ACCEPT_CHECK(std::abs(est.mean) <= 3.0 * est.std,
                 "same-distribution KID mean " << est.mean << " within 3 std " << est.std);
}

void criterion_surface_metrics() {
    Mask p = Mask::Zero(4, 4), g = Mask::Zero(4, 4);
    p.block(0, 0, 2, 2).setConstant(1);
    g.block(1, 0, 2, 2).setConstant(1);
    ACCEPT_CHECK(std::abs(dice(p, g, 1) - 0.5) < 1e-12, "dice fixture gives 0.5");

    Mask sp = Mask::Zero(8, 8), sg = Mask::Zero(8, 8);
    sp(0, 0) = 1;
    sg(3, 4) = 1;
    ACCEPT_CHECK(std::abs(hausdorff(sp, sg, 1).value - 5.0) < 1e-12,
                 "single-pixel HD fixture gives 5.0");

    Mask same = Mask::Zero(8, 8);
    same.block(2, 2, 3, 3).setConstant(2);
    ACCEPT_CHECK(hausdorff(same, same, 2).value == 0.0, "identical masks give HD 0");
    ACCEPT_CHECK(dice(same, same, 2) == 1.0, "identical masks give Dice 1");
    ACCEPT_CHECK(asd(same, same, 2).value == 0.0, "identical masks give ASD 0");

    Rng rng(81);
    for (int trial = 0; trial < 10; ++trial) {
        Mask a(16, 16), b(16, 16);
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                a(y, x) = static_cast<int>(rng.uniform_int(3));
                b(y, x) = static_cast<int>(rng.uniform_int(3));
            }
        }
        for (int cls = 1; cls <= 2; ++cls) {
            const auto brute = testing::brute_surface(a, b, cls);
            const auto h = hausdorff(a, b, cls);
            const auto s = asd(a, b, cls);
            ACCEPT_CHECK(h.defined == brute.defined, "defined flags agree");
            if (brute.defined) {
                ACCEPT_CHECK(std::abs(h.value - brute.hd) < 1e-9,
                             "HD agrees with the all-pairs oracle");
                ACCEPT_CHECK(std::abs(s.value - brute.asd) < 1e-9,
                             "ASD agrees with the all-pairs oracle");
            }
        }
    }
}

DatasetManifest synthetic_descriptor_manifest(int patients, Provenance prov,
                                              const std::string& name) {
    DatasetManifest m;
    m.header.dataset_name = name;
    for (int i = 1; i <= patients; ++i) {
        for (const auto vp : all_view_phases()) {
            RecordDescriptor d;
            d.patient_id = phantom_patient_id(i);
            d.view = vp.view;
            d.phase = vp.phase;
            d.provenance = prov;
            d.image_path = d.patient_id + "_" + cell_key(vp);
            m.records.push_back(std::move(d));
        }
    }
    return m;
}

void criterion_split_mix() {
    const auto full = synthetic_descriptor_manifest(450, Provenance::real, "camus-450");
    const auto [train_m, val_m] = split_patients(full, SplitSpec{50});
    ACCEPT_CHECK(train_m.records.size() == 1600, "450-patient split gives 1600 train records");
    ACCEPT_CHECK(val_m.records.size() == 200, "450-patient split gives 200 validation records");

    const auto synth = synthetic_descriptor_manifest(900, Provenance::synthetic, "pool");
    const auto real = train_m;
    ACCEPT_CHECK(mix_real_synthetic(real, synth, 50, 1).records.size() == 2400,
                 "Real+50% has 2400 records");
    ACCEPT_CHECK(mix_real_synthetic(real, synth, 100, 1).records.size() == 3200,
                 "Real+100% has 3200 records");
    ACCEPT_CHECK(mix_real_synthetic(real, synth, 200, 1).records.size() == 4800,
                 "Real+200% has 4800 records");

    Rng rng(91);
    for (int trial = 0; trial < 100; ++trial) {
        const int patients = 5 + static_cast<int>(rng.uniform_int(80));
        const int val_count = 1 + static_cast<int>(rng.uniform_int(patients - 1));
        auto m = synthetic_descriptor_manifest(patients, Provenance::real, "prop");
        std::set<std::string> ids;
        for (const auto& d : m.records) ids.insert(d.patient_id);
        if (static_cast<int>(ids.size()) < val_count + 1) continue;
        const auto [tr, va] = split_patients(m, SplitSpec{val_count});
        std::set<std::string> tr_ids, va_ids;
        for (const auto& d : tr.records) tr_ids.insert(d.patient_id);
        for (const auto& d : va.records) va_ids.insert(d.patient_id);
        for (const auto& id : va_ids) {
            ACCEPT_CHECK(!tr_ids.contains(id), "patient appears in exactly one split");
        }
    }
}

void criterion_prompts() {
    Rng rng(111);
    for (int draw = 0; draw < 1000; ++draw) {
        const std::uint64_t seed = rng.raw();
        const auto lex = build_lexicon(seed, 8);
        const auto lex2 = build_lexicon(seed, 8);
        ACCEPT_CHECK(lex.table == lex2.table, "lexicon is deterministic in the seed");

        std::set<std::string> tokens;
        for (const auto& [slot, tok] : lex.table) tokens.insert(tok);
        ACCEPT_CHECK(tokens.size() == lex.table.size(), "lexicon mapping is injective");

        const auto vp = all_view_phases()[static_cast<std::size_t>(draw) % 4];
        const auto p1 = render_abstract(vp, lex);
        const auto p2 = render_abstract(vp, lex);
        ACCEPT_CHECK(p1.text == p2.text, "abstract prompt rendering is deterministic");

        const auto back = parse_abstract(p1.text, lex);
        ACCEPT_CHECK(back.has_value() && back->view == vp.view && back->phase == vp.phase,
                     "view/phase round-trips through the abstract prompt");
    }
    // Per-concept consistency within one lexicon across the whole dataset.
    const auto lex = build_lexicon(5, 8);
    const auto a = render_abstract({View::two_chamber, Phase::ed}, lex);
    const auto b = render_abstract({View::two_chamber, Phase::es}, lex);
    std::istringstream as(a.text), bs(b.text);
    std::string wa, wb;
    int diffs = 0;
    while (as >> wa && bs >> wb) {
        if (wa != wb) ++diffs;
    }
    ACCEPT_CHECK(diffs == 1, "only the phase token differs between ED and ES prompts");
}

void criterion_smoke() {
    const auto base = fs::temp_directory_path() / "echosynth_acc_smoke";
    fs::remove_all(base);
    fs::create_directories(base);
    const auto tree = base / "data";

    // 11 patients at 64x64: 8 train patients (32 records) + 3 validation.
    write_phantom_tree(tree, 11, 64);
    const auto manifest = manifest_from_ingest(ingest(tree), ManifestHeader{"phantoms", 64, {}, 0});
    write_manifest(tree / "manifest.json", manifest);
    const auto [train_m, val_m] = split_patients(manifest, SplitSpec{3});
    write_manifest(base / "train_manifest.json", train_m);
    write_manifest(base / "val_manifest.json", val_m);
    ACCEPT_CHECK(train_m.records.size() == 32, "smoke train split holds 32 records");

    // Train a toy text_seg model for 1000 iterations via the CLI.
    const json train_cfg = {
        {"name", "smoke"},
        {"seed", 13},
        {"out_dir", (base / "runs").string()},
        {"data", {{"manifest", (base / "train_manifest.json").string()}, {"resolution", 64}}},
        {"model",
         {{"mode", "text_seg"},
          {"denoiser",
           {{"in_channels", 16}, {"base_width", 16}, {"depth", 2}, {"attention_levels", {1}},
            {"timestep_embedding_dim", 32}, {"context_dim", 32}, {"attention_head_dim", 16}}},
          {"codec", {{"kind", "patch"}, {"downsample_factor", 4}, {"latent_channels", 16}}},
          {"text_encoder",
           {{"vocab_size", 128}, {"max_sequence_length", 16}, {"embedding_dim", 32},
            {"trainable", true}}}}},
        {"train",
         {{"learning_rate", 1e-3},
          {"max_iterations", 1000},
          {"checkpoint_every", 500},
          {"prompt_style", "textual"},
          {"schedule",
           {{"kind", "linear"}, {"T", 200}, {"beta_start", 1e-4}, {"beta_end", 0.05}}}}}};
    std::ofstream(base / "train.json") << train_cfg.dump(2);
    auto r = run_cli("train --config " + (base / "train.json").string());
    ACCEPT_CHECK(r.exit_code == 0, "text_seg training completes; output:\n" << r.output);
    const auto ckpt = base / "runs" / "train-smoke" / "checkpoint-00001000";
    ACCEPT_CHECK(fs::exists(ckpt / "manifest.json"), "final checkpoint exists");

    // Synthesize 32 images conditioned on fixture label maps.
    const std::string synth_cmd = "synthesize --checkpoint " + ckpt.string() +
                                  " --count 32 --steps 50 --seed 41 --label-source " +
                                  (base / "train_manifest.json").string() + " --out " +
                                  (base / "runs").string();
    r = run_cli(synth_cmd + " --name smoke");
    ACCEPT_CHECK(r.exit_code == 0, "synthesis completes; output:\n" << r.output);
    const auto synth_manifest_path =
        base / "runs" / "synthesize-smoke" / "synthetic" / "manifest.json";
    const auto synth_m = read_manifest(synth_manifest_path);
    ACCEPT_CHECK(synth_m.records.size() == 32, "synthetic manifest holds 32 records");
    validate_manifest_labels(synth_m);
    for (const auto& d : synth_m.records) {
        ACCEPT_CHECK(d.provenance == Provenance::synthetic, "synthetic provenance recorded");
        ACCEPT_CHECK(!d.label_path.empty(), "synthetic records inherit their condition maps");
        ACCEPT_CHECK(d.prompt.has_value(), "synthetic records carry their prompts");
    }

    // Re-running with the same seed reproduces the manifest bit-for-bit.
    r = run_cli(synth_cmd + " --name smoke2");
    ACCEPT_CHECK(r.exit_code == 0, "second synthesis completes");
    const auto synth_m2 =
        read_manifest(base / "runs" / "synthesize-smoke2" / "synthetic" / "manifest.json");
    ACCEPT_CHECK(synth_m.content_hash() == synth_m2.content_hash(),
                 "same seed reproduces an identical manifest");

    // Evaluate FID/KID per view/phase with the test embedder.
    r = run_cli("evaluate --real " + (base / "train_manifest.json").string() + " --synth " +
                synth_manifest_path.string() +
                " --extractor rproj:res=32:dim=32:seed=17 --kid-subset 8 --kid-subsets 20 "
                "--out " +
                (base / "runs").string() + " --name smoke");
    ACCEPT_CHECK(r.exit_code == 0, "evaluation completes; output:\n" << r.output);
    const auto report_txt = base / "runs" / "evaluate-smoke" / "report.txt";
    ACCEPT_CHECK(fs::exists(report_txt), "evaluation report emitted");
    {
        std::ifstream in(base / "runs" / "evaluate-smoke" / "report.json");
        const json rep = json::parse(in);
        for (const auto& [key, cell] : rep.at("cells").items()) {
            ACCEPT_CHECK(cell.at("defined").get<bool>(), "cell " << key << " defined");
            ACCEPT_CHECK(std::isfinite(cell.at("fid").get<double>()), "cell FID finite");
        }
    }

    // Desk-scale segmentation on the Real+100% mix.
    const json seg_cfg = {
        {"name", "smoke"},
        {"seed", 5},
        {"out_dir", (base / "runs").string()},
        {"data",
         {{"train_manifest", (base / "train_manifest.json").string()},
          {"val_manifest", (base / "val_manifest.json").string()},
          {"synth_manifest", synth_manifest_path.string()},
          {"resolution", 64}}},
        {"seg",
         {{"epochs", 16}, {"learning_rate", 2e-3}, {"batch_size", 4}, {"base_width", 8},
          {"depth", 3}, {"mix_percents", {0, 100}}, {"early_stop_patience", 16}}}};
    std::ofstream(base / "seg.json") << seg_cfg.dump(2);
    r = run_cli("downstream-seg --config " + (base / "seg.json").string());
    ACCEPT_CHECK(r.exit_code == 0, "downstream segmentation completes; output:\n" << r.output);
    const auto seg_run = base / "runs" / "downstream-seg-smoke";
    ACCEPT_CHECK(fs::exists(seg_run / "seg_report.txt"), "segmentation report emitted");
    {
        std::ifstream in(seg_run / "seg_100.json");
        ACCEPT_CHECK(in.good(), "Real+100% result saved");
        const json res = json::parse(in);
        ACCEPT_CHECK(res.at("dice_mean").get<double>() > 0.5,
                     "Real+100% mean Dice " << res.at("dice_mean").get<double>()
                                            << " clears the 0.5 sanity bar");
    }
    ACCEPT_CHECK(fs::exists(seg_run / "comparison.txt"), "regime comparison emitted");
    ACCEPT_CHECK(fs::exists(seg_run / "plots" / "seg_val_dice.pgm"), "convergence plot emitted");

    fs::remove_all(base);
}

}  // namespace

int main() {
    std::cout << "echosynth acceptance suite\n";
    run_criterion(1, "schedule correctness", criterion_schedule);
    run_criterion(2, "diffusion round trip", criterion_round_trip);
    run_criterion(3, "zero-convolution identity", criterion_zero_conv);
    run_criterion(4, "freezing contracts", criterion_freezing);
    run_criterion(5, "gradient oracle", criterion_gradients);
    run_criterion(6, "toy overfit", criterion_overfit);
    run_criterion(7, "fid oracle", criterion_fid);
    run_criterion(8, "kid oracle", criterion_kid);
    run_criterion(9, "segmentation-metric oracles", criterion_surface_metrics);
    run_criterion(10, "split and mix arithmetic", criterion_split_mix);
    run_criterion(11, "prompt invariants", criterion_prompts);
    run_criterion(12, "end-to-end smoke", criterion_smoke);
    if (g_criterion_failures == 0) {
        std::cout << "all 12 criteria passed\n";
    } else {
        std::cout << g_criterion_failures << " criteria failed\n";
    }
    return g_criterion_failures;
}
