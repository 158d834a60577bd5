// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// echosynth: train / synthesize / evaluate / downstream-seg / downstream-cls
// / report, with seeded, manifest-hashed reproducibility.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

#include "echosynth/config.hpp"
#include "echosynth/dataset.hpp"
#include "echosynth/downstream.hpp"
#include "echosynth/phantom.hpp"
#include "echosynth/plot.hpp"
#include "echosynth/report.hpp"
#include "echosynth/rundir.hpp"
#include "echosynth/sampler.hpp"
#include "echosynth/training.hpp"
#include "echosynth/version.hpp"

namespace es = echosynth;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

json layered_config(const std::string& config_path, const std::vector<std::string>& sets) {
    json cfg = json::object();
    if (!config_path.empty()) {
        cfg = es::load_config_file(config_path);
    }
    if (const char* env = std::getenv("ECHOSYNTH_SET")) {
        es::apply_env_overrides(cfg, env);
    }
    for (const auto& s : sets) {
        es::apply_dotted_override(cfg, s);
    }
    return cfg;
}

void merge_defaults(json& dst, const json& defaults) {
    for (const auto& [key, value] : defaults.items()) {
        if (!dst.contains(key)) {
            dst[key] = value;
        } else if (dst[key].is_object() && value.is_object()) {
            merge_defaults(dst[key], value);
        }
    }
}

json preset_defaults(const std::string& preset) {
    if (preset == "desk32") {
        return json::parse(R"({
          "data": {"resolution": 32},
          "model": {
            "mode": "unconditional",
            "denoiser": {"in_channels": 1, "base_width": 8, "depth": 2,
                         "attention_levels": [], "timestep_embedding_dim": 16,
                         "context_dim": 0},
            "codec": {"kind": "identity", "downsample_factor": 1, "latent_channels": 1}
          },
          "train": {"learning_rate": 2e-3, "max_iterations": 2000, "checkpoint_every": 1000,
                     "schedule": {"kind": "linear", "T": 200,
                                  "beta_start": 1e-4, "beta_end": 0.05}}
        })");
    }
    if (preset == "desk64") {
        return json::parse(R"({
          "data": {"resolution": 64},
          "model": {
            "mode": "text",
            "denoiser": {"in_channels": 16, "base_width": 16, "depth": 2,
                         "attention_levels": [1], "timestep_embedding_dim": 32,
                         "context_dim": 32, "attention_head_dim": 16},
            "codec": {"kind": "patch", "downsample_factor": 4, "latent_channels": 16},
            "text_encoder": {"vocab_size": 256, "max_sequence_length": 16,
                              "embedding_dim": 32, "trainable": true}
          },
          "train": {"learning_rate": 1e-3, "max_iterations": 5000, "checkpoint_every": 1000,
                     "schedule": {"kind": "linear", "T": 200,
                                  "beta_start": 1e-4, "beta_end": 0.05}}
        })");
    }
    if (preset == "full") {
        return json::parse(R"({
          "data": {"resolution": 256},
          "model": {
            "mode": "text",
            "denoiser": {"in_channels": 4, "base_width": 64, "depth": 4,
                         "attention_levels": [2, 3], "timestep_embedding_dim": 256,
                         "context_dim": 512, "attention_head_dim": 64},
            "codec": {"kind": "patch", "downsample_factor": 8, "latent_channels": 4},
            "text_encoder": {"vocab_size": 4096, "max_sequence_length": 77,
                              "embedding_dim": 512, "trainable": true}
          },
          "train": {"learning_rate": 5e-6, "max_iterations": 120000,
                     "checkpoint_every": 5000, "batch_size_per_device": 1,
                     "device_count": 4,
                     "schedule": {"kind": "linear", "T": 1000,
                                  "beta_start": 1e-4, "beta_end": 0.02}}
        })");
    }
    throw es::ConfigError("unknown preset '" + preset + "'");
}

void validate_train_config(const json& cfg) {
    es::reject_unknown_keys(cfg, "",
                            {"name", "seed", "out_dir", "data", "model", "train", "assets"});
    if (cfg.contains("data")) {
        es::reject_unknown_keys(cfg["data"], "data",
                                {"manifest", "root", "resolution", "split_validation"});
    }
    if (cfg.contains("model")) {
        es::reject_unknown_keys(cfg["model"], "model",
                                {"preset", "mode", "base_checkpoint", "denoiser", "codec",
                                 "text_encoder"});
        if (cfg["model"].contains("denoiser")) {
            es::reject_unknown_keys(cfg["model"]["denoiser"], "model.denoiser",
                                    {"in_channels", "base_width", "depth", "attention_levels",
                                     "timestep_embedding_dim", "context_dim",
                                     "attention_head_dim"});
        }
        if (cfg["model"].contains("codec")) {
            es::reject_unknown_keys(cfg["model"]["codec"], "model.codec",
                                    {"kind", "downsample_factor", "latent_channels", "asset"});
        }
        if (cfg["model"].contains("text_encoder")) {
            es::reject_unknown_keys(cfg["model"]["text_encoder"], "model.text_encoder",
                                    {"vocab_size", "max_sequence_length", "embedding_dim",
                                     "trainable", "asset"});
        }
    }
    if (cfg.contains("train")) {
        es::reject_unknown_keys(cfg["train"], "train",
                                {"learning_rate", "max_iterations", "checkpoint_every",
                                 "batch_size_per_device", "device_count", "schedule",
                                 "prompt_style", "lexicon_seed", "ema", "ema_decay", "resume"});
    }
}

es::DenoiserSpec denoiser_from_json(const json& j) {
    es::DenoiserSpec d;
    d.in_channels = j.value("in_channels", 1);
    d.base_width = j.value("base_width", 16);
    d.depth = j.value("depth", 2);
    d.attention_levels = j.value("attention_levels", std::vector<int>{});
    d.timestep_embedding_dim = j.value("timestep_embedding_dim", 32);
    d.context_dim = j.value("context_dim", 0);
    d.attention_head_dim = j.value("attention_head_dim", 0);
    return d;
}

es::ScheduleMeta schedule_from_json(const json& j) {
    es::ScheduleMeta sm;
    sm.kind = j.value("kind", "linear");
    sm.T = j.value("T", 1000);
    sm.beta_start = j.value("beta_start", 1e-4);
    sm.beta_end = j.value("beta_end", 0.02);
    return sm;
}

std::vector<es::TrainSample> load_samples(const es::DatasetManifest& m, int res) {
    std::vector<es::TrainSample> out;
    for (const auto& d : m.records) {
        auto rec = es::load_record(m, d, res);
        es::TrainSample s;
        s.image = std::move(rec.image);
        s.view_phase = {rec.view, rec.phase};
        if (rec.has_label) s.label_map = std::move(rec.label_map);
        out.push_back(std::move(s));
    }
    return out;
}

std::string run_name(const json& cfg, std::uint64_t seed) {
    if (cfg.contains("name")) return cfg.at("name").get<std::string>();
    return "seed" + std::to_string(seed);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const json& cfg_in) {
    json cfg = cfg_in;
    if (cfg.contains("model") && cfg["model"].contains("preset")) {
        merge_defaults(cfg, preset_defaults(cfg["model"]["preset"].get<std::string>()));
    }
    validate_train_config(cfg);

    const std::uint64_t seed = cfg.value("seed", 0ull);
    const std::string out_dir = cfg.value("out_dir", "runs");
    es::RunDir run(out_dir, "train", run_name(cfg, seed), cfg, {});

    // Data: a manifest path, or a raw tree ingested once into the run dir.
    es::DatasetManifest manifest;
    if (cfg.contains("data") && cfg["data"].contains("manifest")) {
        manifest = es::read_manifest(cfg["data"]["manifest"].get<std::string>());
    } else if (cfg.contains("data") && cfg["data"].contains("root")) {
        const auto result = es::ingest(cfg["data"]["root"].get<std::string>());
        for (const auto& gap : result.gaps) {
            std::cerr << "[ingest] gap: " << gap.patient_id << " " << gap.view << "-" << gap.phase
                      << ": " << gap.reason << "\n";
        }
        manifest = es::manifest_from_ingest(result, es::ManifestHeader{"ingested", 0, {}, seed});
        es::write_manifest(run.path() / "ingested_manifest.json", manifest);
        std::cout << "ingested " << manifest.records.size() << " records ("
                  << result.gaps.size() << " gaps) -> " << run.path() / "ingested_manifest.json"
                  << "\n";
    } else {
        throw es::ConfigError("config needs data.manifest or data.root");
    }

    const int split_val = es::config_get<int>(cfg, "data.split_validation", 0);
    if (split_val > 0) {
        auto [train_m, val_m] = es::split_patients(manifest, es::SplitSpec{split_val});
        es::write_manifest(run.path() / "train_manifest.json", train_m);
        es::write_manifest(run.path() / "validation_manifest.json", val_m);
        manifest = std::move(train_m);
    }
    const int resolution =
        es::config_get<int>(cfg, "data.resolution", manifest.header.resolution);
    {
        json inputs = {{"data_manifest", es::hash_hex(manifest.content_hash())}};
        std::ofstream(run.path() / "inputs.json") << inputs.dump(2) << "\n";
    }

    const auto mode = es::mode_from_string(es::config_get<std::string>(cfg, "model.mode", "unconditional"));
    const auto sched = schedule_from_json(cfg.contains("train") && cfg["train"].contains("schedule")
                                              ? cfg["train"]["schedule"]
                                              : json::object());

    // Bundle construction (or resume).
    std::optional<es::ModelBundleT<float>> bundle;
    std::optional<es::ResumeState> resume;
    const std::string resume_dir = es::config_get<std::string>(cfg, "train.resume", "");
    if (!resume_dir.empty()) {
        es::CheckpointExtra extra;
        bundle = es::load_checkpoint(resume_dir, &extra);
        if (bundle->mode() != mode) {
            throw es::ConfigError("resume checkpoint mode " + es::to_string(bundle->mode()) +
                                  " does not match config mode " + es::to_string(mode));
        }
        resume = es::ResumeState{resume_dir, extra.step, extra.rng_state};
    } else if (mode == es::GenerationMode::unconditional) {
        auto dspec = denoiser_from_json(cfg["model"]["denoiser"]);
        bundle = es::ModelBundleT<float>::make_unconditional(dspec, sched, seed);
    } else {
        const std::string base_ckpt = es::config_get<std::string>(cfg, "model.base_checkpoint", "");
        if (mode == es::GenerationMode::text_seg && !base_ckpt.empty()) {
            auto base = es::load_checkpoint(base_ckpt);
            if (base.mode() != es::GenerationMode::text) {
                throw es::ConfigError("base_checkpoint must hold a text-mode model");
            }
            bundle = es::init_control_from_base(base);
        } else {
            auto dspec = denoiser_from_json(cfg["model"]["denoiser"]);
            const auto& cj = cfg["model"]["codec"];
            es::CodecSpec cspec;
            cspec.kind = cj.value("kind", "identity");
            cspec.downsample_factor = cj.value("downsample_factor", 1);
            cspec.latent_channels = cj.value("latent_channels", 1);
            const auto& tj = cfg["model"]["text_encoder"];
            es::TextEncoderSpec tspec;
            tspec.vocab_size = tj.value("vocab_size", 256);
            tspec.max_sequence_length = tj.value("max_sequence_length", 16);
            tspec.embedding_dim = tj.value("embedding_dim", 32);
            tspec.trainable = tj.value("trainable", true);
            auto base = es::ModelBundleT<float>::make_text(dspec, cspec, tspec, sched, seed);
            if (cj.contains("asset")) {
                std::vector<es::ParamT<float>*> ps;
                base.codec().collect(ps);
                es::load_params_blob(es::resolve_asset(cfg, cj["asset"].get<std::string>()), ps);
            }
            if (tj.contains("asset")) {
                std::vector<es::ParamT<float>*> ps;
                base.text_encoder().collect(ps);
                es::load_params_blob(es::resolve_asset(cfg, tj["asset"].get<std::string>()), ps);
            }
            bundle = mode == es::GenerationMode::text_seg ? es::init_control_from_base(base)
                                                          : std::move(base);
        }
    }

    es::TrainConfig tc;
    tc.mode = mode;
    tc.learning_rate = es::config_get<double>(cfg, "train.learning_rate", 5e-6);
    tc.max_iterations = es::config_get<long>(cfg, "train.max_iterations", 120000);
    tc.checkpoint_every = es::config_get<long>(cfg, "train.checkpoint_every", 1000);
    tc.batch_size_per_device = es::config_get<int>(cfg, "train.batch_size_per_device", 1);
    tc.device_count = es::config_get<int>(cfg, "train.device_count", 1);
    tc.schedule = sched;
    tc.seed = seed;
    tc.prompt_style = es::prompt_style_from_string(
        es::config_get<std::string>(cfg, "train.prompt_style", "textual"));
    tc.ema = es::config_get<bool>(cfg, "train.ema", false);
    tc.ema_decay = es::config_get<double>(cfg, "train.ema_decay", 0.999);

    auto samples = load_samples(manifest, resolution);
    if (mode != es::GenerationMode::unconditional && !bundle->codec().is_identity()) {
        std::vector<es::Tensor> images;
        images.reserve(samples.size());
        for (const auto& s : samples) images.push_back(s.image);
        bundle->codec().calibrate(images);
    }

    std::optional<es::ConceptLexicon> lexicon;
    if (mode != es::GenerationMode::unconditional && tc.prompt_style == es::PromptStyle::abstract) {
        lexicon = es::build_lexicon(es::config_get<std::uint64_t>(cfg, "train.lexicon_seed", seed));
    }

    const auto result =
        es::train(tc, samples, *bundle, run.path(), lexicon ? &*lexicon : nullptr,
                  es::hash_hex(manifest.content_hash()), resume ? &*resume : nullptr);

    std::vector<double> losses;
    for (const auto& r : result.records) losses.push_back(r.loss);
    es::render_line_plot({{"train_loss", losses}}, run.path() / "train_loss.pgm");

    std::cout << "run " << run.path().string() << "\n";
    std::cout << "checkpoints " << result.checkpoints.size() << ", last "
              << (result.checkpoints.empty() ? "none" : result.checkpoints.back().string())
              << "\n";
    if (!result.records.empty()) {
        std::cout << "final loss " << result.records.back().loss << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

struct SynthOptions {
    std::string checkpoint;
    int count = 16;
    std::string view = "all";
    std::string phase = "all";
    int steps = 50;
    std::string sampler = "fast";
    std::uint64_t seed = 0;
    std::string label_source;
    std::string lexicon_path;
    std::string prompt_style = "textual";
    double guidance = 0.0;
    bool no_repeat = false;
    int resolution = 64;    // image size when no condition map fixes it
    std::string out_dir = "runs";
    std::string name;
};

int cmd_synthesize(const SynthOptions& opt) {
    es::CheckpointExtra extra;
    auto bundle = es::load_checkpoint(opt.checkpoint, &extra);
    const auto mode = bundle.mode();

    std::vector<es::ViewPhase> wanted;
    for (const auto vp : es::all_view_phases()) {
        if (opt.view != "all" && es::to_string(vp.view) != opt.view) continue;
        if (opt.phase != "all" && es::to_string(vp.phase) != opt.phase) continue;
        wanted.push_back(vp);
    }
    if (wanted.empty()) throw es::ConfigError("view/phase filter matches nothing");

    std::optional<es::ConceptLexicon> lexicon;
    const auto style = es::prompt_style_from_string(opt.prompt_style);
    if (mode != es::GenerationMode::unconditional && style == es::PromptStyle::abstract) {
        const auto lex_path = opt.lexicon_path.empty()
                                  ? std::filesystem::path(opt.checkpoint).parent_path() /
                                        "lexicon.json"
                                  : std::filesystem::path(opt.lexicon_path);
        lexicon = es::load_lexicon(lex_path);
        if (!extra.lexicon_hash.empty() &&
            extra.lexicon_hash != es::hash_hex(lexicon->content_hash())) {
            throw es::LexiconError("lexicon hash " + es::hash_hex(lexicon->content_hash()) +
                                   " does not match the checkpoint's recorded " +
                                   extra.lexicon_hash);
        }
    }

    // Label maps for text_seg conditioning come from a real pool.
    es::DatasetManifest pool;
    std::vector<std::vector<std::size_t>> pool_by_vp(4);
    if (mode == es::GenerationMode::text_seg) {
        if (opt.label_source.empty()) {
            throw es::ConfigError("text_seg synthesis requires --label-source");
        }
        pool = es::read_manifest(opt.label_source);
        for (std::size_t i = 0; i < pool.records.size(); ++i) {
            if (pool.records[i].label_path.empty()) continue;
            const auto& d = pool.records[i];
            for (std::size_t k = 0; k < 4; ++k) {
                const auto vp = es::all_view_phases()[k];
                if (d.view == vp.view && d.phase == vp.phase) pool_by_vp[k].push_back(i);
            }
        }
    }

    json snapshot = {{"checkpoint", opt.checkpoint}, {"count", opt.count},
                     {"view", opt.view},             {"phase", opt.phase},
                     {"steps", opt.steps},           {"sampler", opt.sampler},
                     {"seed", opt.seed},             {"prompt_style", opt.prompt_style}};
    es::RunDir run(opt.out_dir, "synthesize",
                   opt.name.empty() ? "seed" + std::to_string(opt.seed) : opt.name, snapshot, {});

    es::Rng rng(opt.seed);
    std::vector<es::PatientRecord> records;
    std::vector<std::vector<std::size_t>> used(4);
    const auto view_phases = es::all_view_phases();

    for (int i = 0; i < opt.count; ++i) {
        const auto vp = wanted[static_cast<std::size_t>(i) % wanted.size()];
        es::SampleCond cond;
        std::optional<es::PatientRecord> source;
        if (mode != es::GenerationMode::unconditional) {
            cond.prompt = es::render_prompt(style, vp, lexicon ? &*lexicon : nullptr);
        }
        if (opt.guidance > 0.0) cond.guidance_scale = opt.guidance;
        if (mode == es::GenerationMode::text_seg) {
            const auto k = static_cast<std::size_t>(
                std::find(view_phases.begin(), view_phases.end(), vp) - view_phases.begin());
            auto& candidates = pool_by_vp[k];
            if (candidates.empty()) {
                throw es::ConfigError("label pool has no records for " + es::cell_key(vp));
            }
            std::size_t pick;
            if (opt.no_repeat) {
                auto& consumed = used[k];
                if (consumed.size() == candidates.size()) {
                    throw es::Error("label pool exhausted for " + es::cell_key(vp) +
                                    " with --no-repeat");
                }
                pick = candidates[consumed.size()];
                consumed.push_back(pick);
            } else {
                pick = candidates[static_cast<std::size_t>(
                    rng.uniform_int(static_cast<std::int64_t>(candidates.size())))];
            }
            source = es::load_record(pool, pool.records[pick]);
            cond.label_map = source->label_map;
        }

        const int img_res = source ? source->image.height : opt.resolution;
        const auto& codec_spec = bundle.codec().spec();
        es::SampleShape shape{codec_spec.kind == "identity" ? 1 : codec_spec.latent_channels,
                              img_res / codec_spec.downsample_factor,
                              img_res / codec_spec.downsample_factor};
        const std::uint64_t sample_seed = opt.seed * 1000003ull + static_cast<std::uint64_t>(i);
        es::Tensor latent = opt.sampler == "ddpm"
                                ? es::ddpm_sample(bundle, shape, sample_seed, cond)
                                : es::fast_sample(bundle, shape, opt.steps, sample_seed, cond);
        es::Tensor image = es::decode_latent(bundle, latent);
        image.m = image.m.cwiseMax(0.0f).cwiseMin(1.0f);

        es::PatientRecord rec;
        rec.patient_id = "synth" + std::to_string(i);
        rec.view = vp.view;
        rec.phase = vp.phase;
        rec.image = std::move(image);
        rec.provenance = es::Provenance::synthetic;
        rec.source_prompt = cond.prompt;
        if (source) {
            rec.label_map = source->label_map;
            rec.has_label = true;
        }
        records.push_back(std::move(rec));
    }

    const auto manifest = es::write_synthetic(
        records, run.path() / "synthetic",
        es::ManifestHeader{"synthetic-" + es::to_string(mode), 0, {}, opt.seed});
    std::cout << "run " << run.path().string() << "\n";
    std::cout << "manifest " << (run.path() / "synthetic" / "manifest.json").string() << " ("
              << manifest.records.size() << " records, hash "
              << es::hash_hex(manifest.content_hash()) << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvalOptions {
    std::string real_manifest;
    std::string synth_manifest;
    std::string extractor = "rproj:res=32:dim=64:seed=17";
    int kid_subset = 1000;
    int kid_subsets = 100;
    std::uint64_t seed = 0;
    int resolution = 0;
    std::string out_dir = "runs";
    std::string name;
    std::string config_path;
};

int cmd_evaluate(const EvalOptions& opt, const std::vector<std::string>& sets) {
    const auto real = es::read_manifest(opt.real_manifest);
    const auto synth = es::read_manifest(opt.synth_manifest);

    std::string extractor_spec = opt.extractor;
    if (extractor_spec.rfind("asset:", 0) == 0) {
        const json cfg = layered_config(opt.config_path, sets);
        extractor_spec =
            "cnn:" + es::resolve_asset(cfg, extractor_spec.substr(6)).string();
    }
    const auto extractor = es::make_extractor(extractor_spec);

    json snapshot = {{"real", opt.real_manifest},
                     {"synth", opt.synth_manifest},
                     {"extractor", extractor_spec},
                     {"kid_subset", opt.kid_subset},
                     {"kid_subsets", opt.kid_subsets},
                     {"seed", opt.seed}};
    es::RunDir run(opt.out_dir, "evaluate",
                   opt.name.empty() ? "seed" + std::to_string(opt.seed) : opt.name, snapshot,
                   {{"real_manifest", es::hash_hex(real.content_hash())},
                    {"synth_manifest", es::hash_hex(synth.content_hash())}});

    es::KidParams kp{opt.kid_subset, opt.kid_subsets, opt.seed};
    const auto report = es::evaluate_generation(real, synth, *extractor, kp,
                                                run.path() / "feature_cache", opt.resolution);
    const auto table = es::render_evaluation_table({report});
    std::ofstream(run.path() / "report.txt") << table;
    es::save_eval_report(run.path() / "report.json", report);
    std::cout << table;
    std::cout << "run " << run.path().string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// downstream verbs
// ---------------------------------------------------------------------------

void validate_downstream_config(const json& cfg) {
    es::reject_unknown_keys(cfg, "",
                            {"name", "seed", "out_dir", "data", "seg", "probe", "assets"});
    if (cfg.contains("data")) {
        es::reject_unknown_keys(cfg["data"], "data",
                                {"train_manifest", "val_manifest", "synth_manifest",
                                 "resolution"});
    }
    if (cfg.contains("seg")) {
        es::reject_unknown_keys(cfg["seg"], "seg",
                                {"epochs", "learning_rate", "batch_size", "base_width", "depth",
                                 "mix_percents", "early_stop_patience"});
    }
    if (cfg.contains("probe")) {
        es::reject_unknown_keys(cfg["probe"], "probe",
                                {"backbones", "epochs", "learning_rate", "mix_percent"});
    }
}

struct DownstreamData {
    es::DatasetManifest train;
    es::DatasetManifest val;
    std::optional<es::DatasetManifest> synth;
    int resolution = 64;
};

DownstreamData load_downstream_data(const json& cfg) {
    DownstreamData d;
    d.train = es::read_manifest(es::config_get<std::string>(cfg, "data.train_manifest", ""));
    d.val = es::read_manifest(es::config_get<std::string>(cfg, "data.val_manifest", ""));
    const auto synth_path = es::config_get<std::string>(cfg, "data.synth_manifest", "");
    if (!synth_path.empty()) d.synth = es::read_manifest(synth_path);
    d.resolution = es::config_get<int>(cfg, "data.resolution",
                                       d.train.header.resolution > 0 ? d.train.header.resolution
                                                                     : 64);
    return d;
}

es::DatasetManifest regime_mix(const DownstreamData& d, int percent, std::uint64_t seed) {
    es::DatasetManifest mixed =
        percent == 0 ? d.train
                     : es::mix_real_synthetic(d.train, d.synth ? *d.synth : es::DatasetManifest{},
                                              percent, seed);
    mixed.header.dataset_name = percent == 0 ? "Real" : "Real+" + std::to_string(percent) + "%";
    return mixed;
}

int cmd_downstream_seg(const json& cfg) {
    validate_downstream_config(cfg);
    const auto d = load_downstream_data(cfg);
    const std::uint64_t seed = cfg.value("seed", 0ull);
    es::RunDir run(cfg.value("out_dir", "runs"), "downstream-seg", run_name(cfg, seed), cfg,
                   {{"train_manifest", es::hash_hex(d.train.content_hash())},
                    {"val_manifest", es::hash_hex(d.val.content_hash())}});

    es::SegConfig sc;
    sc.epochs = es::config_get<int>(cfg, "seg.epochs", 20);
    sc.learning_rate = es::config_get<double>(cfg, "seg.learning_rate", 1e-3);
    sc.batch_size = es::config_get<int>(cfg, "seg.batch_size", 4);
    sc.base_width = es::config_get<int>(cfg, "seg.base_width", 8);
    sc.depth = es::config_get<int>(cfg, "seg.depth", 3);
    sc.early_stop_patience = es::config_get<int>(cfg, "seg.early_stop_patience", 6);
    sc.resolution = d.resolution;
    sc.seed = seed;

    const auto percents = es::config_get<std::vector<int>>(cfg, "seg.mix_percents", {0});
    std::vector<es::SegResult> results;
    for (int pct : percents) {
        if (pct > 0 && !d.synth) {
            throw es::ConfigError("mix percent " + std::to_string(pct) +
                                  " requires data.synth_manifest");
        }
        sc.mix_percent = pct;
        const auto mixed = regime_mix(d, pct, seed);
        std::cout << "training segmentation on " << mixed.header.dataset_name << " ("
                  << mixed.records.size() << " records)\n";
        auto res = es::train_segmentation(sc, mixed, d.val);
        es::save_seg_result(run.path() / ("seg_" + std::to_string(pct) + ".json"), res);
        results.push_back(std::move(res));
    }
    const auto table = es::render_seg_table(results);
    std::ofstream(run.path() / "seg_report.txt") << table;
    std::cout << table;
    if (results.size() >= 2) {
        const auto cmp = es::compare_regimes(results, {}, run.path() / "plots");
        std::ofstream(run.path() / "comparison.txt") << cmp.text;
    }
    std::cout << "run " << run.path().string() << "\n";
    return 0;
}

int cmd_downstream_cls(const json& cfg) {
    validate_downstream_config(cfg);
    const auto d = load_downstream_data(cfg);
    const std::uint64_t seed = cfg.value("seed", 0ull);
    es::RunDir run(cfg.value("out_dir", "runs"), "downstream-cls", run_name(cfg, seed), cfg,
                   {{"train_manifest", es::hash_hex(d.train.content_hash())},
                    {"val_manifest", es::hash_hex(d.val.content_hash())}});

    es::ProbeConfig pc;
    pc.epochs = es::config_get<int>(cfg, "probe.epochs", 300);
    pc.learning_rate = es::config_get<double>(cfg, "probe.learning_rate", 0.5);
    pc.mix_percent = es::config_get<int>(cfg, "probe.mix_percent", 0);
    pc.resolution = d.resolution;
    pc.seed = seed;

    auto backbones = es::config_get<std::vector<std::string>>(cfg, "probe.backbones",
                                                              {"cnn-random:seed=11"});
    std::vector<es::ProbeResult> results;
    for (auto backbone : backbones) {
        if (backbone.rfind("asset:", 0) == 0) {
            backbone = "cnn:" + es::resolve_asset(cfg, backbone.substr(6)).string();
        }
        pc.backbone = backbone;
        if (pc.mix_percent > 0 && !d.synth) {
            throw es::ConfigError("probe mix requires data.synth_manifest");
        }
        const auto mixed = regime_mix(d, pc.mix_percent, seed);
        std::cout << "probing " << backbone << " on " << mixed.header.dataset_name << "\n";
        auto res = es::linear_probe(pc, mixed, d.val);
        es::save_probe_result(
            run.path() / ("probe_" + es::hash_hex(es::fnv1a64(backbone)) + ".json"), res);
        results.push_back(std::move(res));
    }
    const auto table = es::render_cls_table(results);
    std::ofstream(run.path() / "cls_report.txt") << table;
    std::cout << table;
    if (results.size() >= 2) {
        const auto cmp = es::compare_regimes({}, results, run.path() / "plots");
        std::ofstream(run.path() / "comparison.txt") << cmp.text;
    }
    std::cout << "run " << run.path().string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
               const std::string& name) {
    if (run_dirs.empty()) {
        throw es::ParameterError("report needs at least one run directory");
    }
    std::vector<es::SegResult> seg;
    std::vector<es::ProbeResult> probes;
    std::vector<es::EvaluationReport> evals;
    for (const auto& dir : run_dirs) {
        if (!std::filesystem::is_directory(dir)) {
            throw es::ConfigError("not a run directory: " + dir);
        }
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            const auto fname = entry.path().filename().string();
            if (fname.rfind("seg_", 0) == 0 && entry.path().extension() == ".json") {
                seg.push_back(es::load_seg_result(entry.path()));
            } else if (fname.rfind("probe_", 0) == 0 && entry.path().extension() == ".json") {
                probes.push_back(es::load_probe_result(entry.path()));
            } else if (fname == "report.json") {
                evals.push_back(es::load_eval_report(entry.path()));
            }
        }
    }
    if (seg.empty() && probes.empty() && evals.empty()) {
        throw es::ConfigError("no results found under the given run directories");
    }
    es::RunDir run(out_dir, "report", name, json{{"inputs", run_dirs}}, {});
    std::ostringstream text;
    if (!evals.empty()) {
        text << es::render_evaluation_table(evals) << "\n";
    }
    if (seg.size() + probes.size() >= 2) {
        text << es::compare_regimes(seg, probes, run.path() / "plots").text;
    } else if (!seg.empty()) {
        text << es::render_seg_table(seg);
    } else if (!probes.empty()) {
        text << es::render_cls_table(probes);
    }
    std::ofstream(run.path() / "comparison.txt") << text.str();
    std::cout << text.str();
    std::cout << "run " << run.path().string() << "\n";
    return 0;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const es::IntegrityError*>(&e) != nullptr ||
        dynamic_cast<const es::ContractError*>(&e) != nullptr) {
        return 3;
    }
    if (dynamic_cast<const es::NumericError*>(&e) != nullptr) {
        return 4;
    }
    if (dynamic_cast<const es::Error*>(&e) != nullptr) {
        return 2;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"echo image synthesis and evaluation"};
    app.set_version_flag("--version", es::kVersion);
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;

    auto* train = app.add_subcommand("train", "train a generation model");
    train->add_option("--config", config_path, "JSON config file")->required();
    train->add_option("--set", sets, "dotted-key override, e.g. train.seed=3");

    SynthOptions synth;
    auto* synthesize = app.add_subcommand("synthesize", "sample images from a checkpoint");
    synthesize->add_option("--checkpoint", synth.checkpoint, "checkpoint directory")->required();
    synthesize->add_option("--count", synth.count, "number of images");
    synthesize->add_option("--view", synth.view, "2CH|4CH|all");
    synthesize->add_option("--phase", synth.phase, "ED|ES|all");
    synthesize->add_option("--steps", synth.steps, "fast sampler steps");
    synthesize->add_option("--sampler", synth.sampler, "fast|ddpm");
    synthesize->add_option("--seed", synth.seed, "sampling seed");
    synthesize->add_option("--label-source", synth.label_source,
                           "manifest supplying condition label maps");
    synthesize->add_option("--lexicon", synth.lexicon_path, "lexicon file for abstract prompts");
    synthesize->add_option("--prompt-style", synth.prompt_style, "textual|abstract");
    synthesize->add_option("--guidance", synth.guidance, "guidance scale (0 = off)");
    synthesize->add_flag("--no-repeat", synth.no_repeat, "never reuse a condition map");
    synthesize->add_option("--resolution", synth.resolution,
                           "image size when no condition map fixes it");
    synthesize->add_option("--out", synth.out_dir, "output root");
    synthesize->add_option("--name", synth.name, "run name");

    EvalOptions eval;
    auto* evaluate = app.add_subcommand("evaluate", "FID/KID between two manifests");
    evaluate->add_option("--real", eval.real_manifest, "real manifest")->required();
    evaluate->add_option("--synth", eval.synth_manifest, "synthetic manifest")->required();
    evaluate->add_option("--extractor", eval.extractor, "rproj:...|cnn:PATH|asset:NAME");
    evaluate->add_option("--kid-subset", eval.kid_subset, "KID subset size");
    evaluate->add_option("--kid-subsets", eval.kid_subsets, "KID subset count");
    evaluate->add_option("--seed", eval.seed, "KID subset seed");
    evaluate->add_option("--resolution", eval.resolution, "resample images (0 = native)");
    evaluate->add_option("--out", eval.out_dir, "output root");
    evaluate->add_option("--name", eval.name, "run name");
    evaluate->add_option("--config", eval.config_path, "config with an assets table");
    evaluate->add_option("--set", sets, "dotted-key override");

    auto* dseg = app.add_subcommand("downstream-seg", "segmentation on Real+k% mixes");
    dseg->add_option("--config", config_path, "JSON config file")->required();
    dseg->add_option("--set", sets, "dotted-key override");

    auto* dcls = app.add_subcommand("downstream-cls", "ED/ES linear probing");
    dcls->add_option("--config", config_path, "JSON config file")->required();
    dcls->add_option("--set", sets, "dotted-key override");

    std::vector<std::string> report_dirs;
    std::string report_out = "runs";
    std::string report_name = "comparison";
    auto* report = app.add_subcommand("report", "combine results from run directories");
    report->add_option("dirs", report_dirs, "run directories");
    report->add_option("--out", report_out, "output root");
    report->add_option("--name", report_name, "run name");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            return cmd_train(layered_config(config_path, sets));
        }
        if (synthesize->parsed()) {
            return cmd_synthesize(synth);
        }
        if (evaluate->parsed()) {
            return cmd_evaluate(eval, sets);
        }
        if (dseg->parsed()) {
            return cmd_downstream_seg(layered_config(config_path, sets));
        }
        if (dcls->parsed()) {
            return cmd_downstream_cls(layered_config(config_path, sets));
        }
        if (report->parsed()) {
            return cmd_report(report_dirs, report_out, report_name);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 0;
}
