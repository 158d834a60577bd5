// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the CLI verbs as subprocesses, on tiny phantom data.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "echosynth/dataset.hpp"
#include "echosynth/phantom.hpp"
#include "echosynth/prompts.hpp"

using namespace echosynth;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    const auto out_file = fs::temp_directory_path() /
                          ("echosynth_cli_out_" + std::to_string(counter++) + ".txt");
    const std::string cmd = std::string(ECHOSYNTH_CLI_PATH) + " " + args + " > " +
                            out_file.string() + " 2>&1";
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

struct CliFixture {
    fs::path base;
    fs::path tree;
    fs::path manifest;

    explicit CliFixture(const std::string& tag, int patients = 6, int res = 16) {
        base = fs::temp_directory_path() / ("echosynth_cli_" + tag);
        fs::remove_all(base);
        fs::create_directories(base);
        tree = base / "data";
        write_phantom_tree(tree, patients, res);
        const auto result = ingest(tree);
        const auto m = manifest_from_ingest(result, ManifestHeader{"phantoms", res, {}, 0});
        manifest = tree / "manifest.json";
        write_manifest(manifest, m);
    }

    ~CliFixture() { fs::remove_all(base); }

    fs::path write_config(const json& j, const std::string& name) const {
        const auto path = base / name;
        std::ofstream(path) << j.dump(2);
        return path;
    }
};

json tiny_uncond_config(const CliFixture& f, int iters = 30) {
    return json{
        {"name", "toytrain"},
        {"seed", 5},
        {"out_dir", (f.base / "runs").string()},
        {"data", {{"manifest", f.manifest.string()}, {"resolution", 16}}},
        {"model",
         {{"mode", "unconditional"},
          {"denoiser",
           {{"in_channels", 1}, {"base_width", 4}, {"depth", 2},
            {"timestep_embedding_dim", 8}, {"context_dim", 0}}},
          {"codec", {{"kind", "identity"}, {"downsample_factor", 1}, {"latent_channels", 1}}}}},
        {"train",
         {{"learning_rate", 1e-3},
          {"max_iterations", iters},
          {"checkpoint_every", 15},
          {"schedule", {{"kind", "linear"}, {"T", 50}, {"beta_start", 1e-3}, {"beta_end", 0.1}}}}}};
}

json tiny_text_config(const CliFixture& f, const std::string& style) {
    return json{
        {"name", "texttrain-" + style},
        {"seed", 7},
        {"out_dir", (f.base / "runs").string()},
        {"data", {{"manifest", f.manifest.string()}, {"resolution", 16}}},
        {"model",
         {{"mode", "text"},
          {"denoiser",
           {{"in_channels", 16}, {"base_width", 8}, {"depth", 2},
            {"attention_levels", {1}}, {"timestep_embedding_dim", 8},
            {"context_dim", 8}, {"attention_head_dim", 8}}},
          {"codec", {{"kind", "patch"}, {"downsample_factor", 4}, {"latent_channels", 16}}},
          {"text_encoder",
           {{"vocab_size", 32}, {"max_sequence_length", 16}, {"embedding_dim", 8},
            {"trainable", true}}}}},
        {"train",
         {{"learning_rate", 1e-3},
          {"max_iterations", 20},
          {"checkpoint_every", 20},
          {"prompt_style", style},
          {"lexicon_seed", 9},
          {"schedule", {{"kind", "linear"}, {"T", 50}, {"beta_start", 1e-3}, {"beta_end", 0.1}}}}}};
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("invalid config keys are rejected by name with the config exit code") {
    CliFixture f("badkey");
    auto cfg = tiny_uncond_config(f);
    cfg["train"]["bogus_key"] = 1;
    const auto path = f.write_config(cfg, "bad.json");
    const auto r = run_cli("train --config " + path.string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("bogus_key") != std::string::npos);
}

TEST_CASE("toy unconditional training writes checkpoints and a loss log") {
    CliFixture f("train");
    const auto path = f.write_config(tiny_uncond_config(f), "train.json");
    const auto r = run_cli("train --config " + path.string());
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    const auto run_dir = f.base / "runs" / "train-toytrain";
    CHECK(fs::exists(run_dir / "run.json"));
    CHECK(fs::exists(run_dir / "checkpoint-00000030" / "manifest.json"));
    CHECK(fs::exists(run_dir / "loss_log.jsonl"));
    CHECK(fs::exists(run_dir / "train_loss.pgm"));
    CHECK(!fs::exists(run_dir / "lock"));

    SUBCASE("resume continues from a checkpoint") {
        auto cfg = tiny_uncond_config(f);
        cfg["name"] = "resumed";
        cfg["train"]["resume"] = (run_dir / "checkpoint-00000015").string();
        const auto rpath = f.write_config(cfg, "resume.json");
        const auto rr = run_cli("train --config " + rpath.string());
        INFO(rr.output);
        CHECK(rr.exit_code == 0);
        CHECK(fs::exists(f.base / "runs" / "train-resumed" / "checkpoint-00000030"));
    }

    SUBCASE("dotted overrides win over the file") {
        const auto rr = run_cli("train --config " + path.string() +
                                " --set name=overridden --set train.max_iterations=4");
        CHECK(rr.exit_code == 0);
        CHECK(fs::exists(f.base / "runs" / "train-overridden" / "checkpoint-00000004"));
    }
}

TEST_CASE("synthesize obeys filters, counts, and determinism") {
    CliFixture f("synth");
    const auto path = f.write_config(tiny_uncond_config(f), "train.json");
    REQUIRE(run_cli("train --config " + path.string()).exit_code == 0);
    const auto ckpt = (f.base / "runs" / "train-toytrain" / "checkpoint-00000030").string();

    SUBCASE("count zero gives an empty manifest") {
        const auto r = run_cli("synthesize --checkpoint " + ckpt +
                               " --count 0 --resolution 16 --out " + (f.base / "runs").string() +
                               " --name empty");
        REQUIRE(r.exit_code == 0);
        const auto m = read_manifest(f.base / "runs" / "synthesize-empty" / "synthetic" /
                                     "manifest.json");
        CHECK(m.records.empty());
    }

    SUBCASE("view filter and seeded reproducibility") {
        const std::string common = "synthesize --checkpoint " + ckpt +
                                   " --count 4 --view 2CH --steps 10 --seed 3 --resolution 16 "
                                   "--out " +
                                   (f.base / "runs").string();
        REQUIRE(run_cli(common + " --name a").exit_code == 0);
        REQUIRE(run_cli(common + " --name b").exit_code == 0);
        const auto ma =
            read_manifest(f.base / "runs" / "synthesize-a" / "synthetic" / "manifest.json");
        const auto mb =
            read_manifest(f.base / "runs" / "synthesize-b" / "synthetic" / "manifest.json");
        REQUIRE(ma.records.size() == 4);
        for (const auto& d : ma.records) {
            CHECK(d.view == View::two_chamber);
            CHECK(d.provenance == Provenance::synthetic);
        }
        // Identical seeds reproduce identical content (hash covers pixels).
        CHECK(ma.content_hash() == mb.content_hash());
        // A different seed produces different content.
        REQUIRE(run_cli("synthesize --checkpoint " + ckpt +
                        " --count 4 --view 2CH --steps 10 --seed 4 --resolution 16 --out " +
                        (f.base / "runs").string() + " --name c")
                    .exit_code == 0);
        const auto mc =
            read_manifest(f.base / "runs" / "synthesize-c" / "synthetic" / "manifest.json");
        CHECK(mc.content_hash() != ma.content_hash());
    }
}

TEST_CASE("evaluate reports near-zero FID when synth equals real") {
    CliFixture f("eval");
    const auto r = run_cli("evaluate --real " + f.manifest.string() + " --synth " +
                           f.manifest.string() +
                           " --extractor rproj:res=16:dim=8:seed=3 --kid-subset 6 "
                           "--kid-subsets 8 --out " +
                           (f.base / "runs").string() + " --name selfeval");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    std::ifstream in(f.base / "runs" / "evaluate-selfeval" / "report.json");
    REQUIRE(in.good());
    const json rep = json::parse(in);
    for (const auto& [key, cell] : rep.at("cells").items()) {
        CHECK(cell.at("defined").get<bool>());
        CHECK(cell.at("fid").get<double>() <= 1e-6);
    }
    CHECK(fs::exists(f.base / "runs" / "evaluate-selfeval" / "feature_cache"));
}

TEST_CASE("abstract-prompt checkpoints refuse a mismatched lexicon") {
    CliFixture f("lexgate");
    const auto path = f.write_config(tiny_text_config(f, "abstract"), "text.json");
    const auto tr = run_cli("train --config " + path.string());
    INFO(tr.output);
    REQUIRE(tr.exit_code == 0);
    const auto run_dir = f.base / "runs" / "train-texttrain-abstract";
    const auto ckpt = (run_dir / "checkpoint-00000020").string();
    REQUIRE(fs::exists(run_dir / "lexicon.json"));

    // Correct lexicon passes.
    const auto ok = run_cli("synthesize --checkpoint " + ckpt + " --count 1 --steps 5 " +
                            "--prompt-style abstract --lexicon " +
                            (run_dir / "lexicon.json").string() + " --resolution 16 --out " +
                            (f.base / "runs").string() + " --name lexok");
    INFO(ok.output);
    CHECK(ok.exit_code == 0);

    // A lexicon built from a different seed is refused.
    const auto other = build_lexicon(12345);
    save_lexicon(f.base / "other_lexicon.json", other);
    const auto bad = run_cli("synthesize --checkpoint " + ckpt + " --count 1 --steps 5 " +
                             "--prompt-style abstract --lexicon " +
                             (f.base / "other_lexicon.json").string() + " --resolution 16 --out " +
                             (f.base / "runs").string() + " --name lexbad");
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("lexicon") != std::string::npos);
}

TEST_CASE("report verb: empty inputs fail, rendering is byte-stable") {
    CliFixture f("report");
    const auto none = run_cli("report --out " + (f.base / "runs").string());
    CHECK(none.exit_code == 2);

    // Build two downstream-seg results to compare.
    auto [train_m, val_m] = split_patients(read_manifest(f.manifest), SplitSpec{2});
    write_manifest(f.base / "train_manifest.json", train_m);
    write_manifest(f.base / "val_manifest.json", val_m);
    json cfg = {{"name", "seg"},
                {"seed", 3},
                {"out_dir", (f.base / "runs").string()},
                {"data",
                 {{"train_manifest", (f.base / "train_manifest.json").string()},
                  {"val_manifest", (f.base / "val_manifest.json").string()},
                  {"resolution", 16}}},
                {"seg",
                 {{"epochs", 2}, {"learning_rate", 1e-3}, {"batch_size", 4},
                  {"base_width", 4}, {"depth", 2}, {"mix_percents", {0}}}}};
    const auto cpath = f.write_config(cfg, "seg.json");
    const auto seg = run_cli("downstream-seg --config " + cpath.string());
    INFO(seg.output);
    REQUIRE(seg.exit_code == 0);
    const auto seg_run = (f.base / "runs" / "downstream-seg-seg").string();
    CHECK(fs::exists(fs::path(seg_run) / "seg_report.txt"));

    const std::string report_cmd = "report " + seg_run + " --out " + (f.base / "runs").string();
    REQUIRE(run_cli(report_cmd + " --name r1").exit_code == 0);
    REQUIRE(run_cli(report_cmd + " --name r2").exit_code == 0);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const auto t1 = slurp(f.base / "runs" / "report-r1" / "comparison.txt");
    const auto t2 = slurp(f.base / "runs" / "report-r2" / "comparison.txt");
    CHECK(!t1.empty());
    CHECK(t1 == t2);
}

TEST_CASE("desk32 preset trains out of the box") {
    CliFixture f("preset", 4, 32);
    const json cfg = {{"name", "preset"},
                      {"seed", 2},
                      {"out_dir", (f.base / "runs").string()},
                      {"data", {{"manifest", f.manifest.string()}}},
                      {"model", {{"preset", "desk32"}}},
                      {"train", {{"max_iterations", 5}, {"checkpoint_every", 5}}}};
    const auto path = f.write_config(cfg, "preset.json");
    const auto r = run_cli("train --config " + path.string());
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(f.base / "runs" / "train-preset" / "checkpoint-00000005"));
}

TEST_CASE("exit codes distinguish integrity and numeric faults") {
    CliFixture f("exitcodes");

    SUBCASE("tampered data files give the integrity exit code") {
        // Flip one byte in a referenced image.
        const auto victim = f.tree / "patient0001" / "patient0001_2CH_ED.pgm";
        std::fstream file(victim, std::ios::in | std::ios::out | std::ios::binary);
        file.seekp(-1, std::ios::end);
        file.put('\x7f');
        file.close();
        const auto r = run_cli("evaluate --real " + f.manifest.string() + " --synth " +
                               f.manifest.string() + " --extractor rproj:res=16:dim=8:seed=3 " +
                               "--kid-subset 4 --kid-subsets 2 --out " +
                               (f.base / "runs").string());
        CHECK(r.exit_code == 3);
    }

    SUBCASE("an exploding run gives the numeric-fault exit code") {
        const auto path = f.write_config(tiny_uncond_config(f, 40), "boom.json");
        const auto r = run_cli("train --config " + path.string() +
                               " --set train.learning_rate=1e22 --set name=boom");
        CHECK(r.exit_code == 4);
        CHECK(r.output.find("non-finite") != std::string::npos);
    }
}

TEST_CASE("downstream-cls runs a probe end to end") {
    CliFixture f("cls", 8, 16);
    auto [train_m, val_m] = split_patients(read_manifest(f.manifest), SplitSpec{3});
    write_manifest(f.base / "train_manifest.json", train_m);
    write_manifest(f.base / "val_manifest.json", val_m);
    json cfg = {{"name", "probe"},
                {"seed", 3},
                {"out_dir", (f.base / "runs").string()},
                {"data",
                 {{"train_manifest", (f.base / "train_manifest.json").string()},
                  {"val_manifest", (f.base / "val_manifest.json").string()},
                  {"resolution", 16}}},
                {"probe",
                 {{"backbones", {"cnn-random:seed=4", "rproj:res=16:dim=16:seed=2"}},
                  {"epochs", 40}, {"learning_rate", 0.5}, {"mix_percent", 0}}}};
    const auto cpath = f.write_config(cfg, "cls.json");
    const auto r = run_cli("downstream-cls --config " + cpath.string());
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    const auto run_dir = f.base / "runs" / "downstream-cls-probe";
    CHECK(fs::exists(run_dir / "cls_report.txt"));
    CHECK(fs::exists(run_dir / "comparison.txt"));
    CHECK(fs::exists(run_dir / "plots" / "probe_train_loss.pgm"));
}

TEST_SUITE_END();
