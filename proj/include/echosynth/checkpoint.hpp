// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directory: one parameter blob per sub-model plus a structured
// manifest. Betas are re-derived from the schedule metadata, never stored.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "echosynth/models.hpp"

namespace echosynth {

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kBlobMagic[8] = {'E', 'S', 'B', 'L', 'O', 'B', '1', '\n'};

inline void save_params_blob(const std::filesystem::path& path,
                             const std::vector<ParamT<float>*>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write blob " + path.string());
    out.write(kBlobMagic, sizeof(kBlobMagic));
    const std::uint32_t count = static_cast<std::uint32_t>(params.size());
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto* p : params) {
        const std::uint32_t name_len = static_cast<std::uint32_t>(p->name.size());
        out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
        out.write(p->name.data(), name_len);
        const std::int32_t dims[4] = {static_cast<std::int32_t>(p->value.m.rows()),
                                      static_cast<std::int32_t>(p->value.m.cols()),
                                      p->value.height, p->value.width};
        out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
        out.write(reinterpret_cast<const char*>(p->value.m.data()),
                  static_cast<std::streamsize>(sizeof(float) * p->value.m.size()));
    }
}

inline void load_params_blob(const std::filesystem::path& path,
                             const std::vector<ParamT<float>*>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IntegrityError("cannot read blob " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (std::memcmp(magic, kBlobMagic, sizeof(magic)) != 0) {
        throw IntegrityError("bad blob magic in " + path.string());
    }
    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (count != params.size()) {
        throw IntegrityError("blob " + path.string() + " holds " + std::to_string(count) +
                             " tensors, expected " + std::to_string(params.size()));
    }
    for (auto* p : params) {
        std::uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (name != p->name) {
            throw IntegrityError("blob tensor '" + name + "' does not match expected '" +
                                 p->name + "'");
        }
        std::int32_t dims[4];
        in.read(reinterpret_cast<char*>(dims), sizeof(dims));
        if (dims[0] != p->value.m.rows() || dims[1] != p->value.m.cols()) {
            throw IntegrityError("blob tensor '" + name + "' has unexpected shape");
        }
        p->value.height = dims[2];
        p->value.width = dims[3];
        in.read(reinterpret_cast<char*>(p->value.m.data()),
                static_cast<std::streamsize>(sizeof(float) * p->value.m.size()));
        if (!in) throw IntegrityError("blob " + path.string() + " truncated");
    }
}

struct CheckpointExtra {
    long step = 0;
    std::string rng_state;
    std::string data_manifest_hash;
    std::string lexicon_hash;
};

namespace detail {

inline nlohmann::json spec_json(const DenoiserSpec& d) {
    return {{"in_channels", d.in_channels},
            {"base_width", d.base_width},
            {"depth", d.depth},
            {"attention_levels", d.attention_levels},
            {"timestep_embedding_dim", d.timestep_embedding_dim},
            {"context_dim", d.context_dim},
            {"attention_head_dim", d.attention_head_dim}};
}

inline DenoiserSpec denoiser_spec_from_json(const nlohmann::json& j) {
    DenoiserSpec d;
    d.in_channels = j.at("in_channels").get<int>();
    d.base_width = j.at("base_width").get<int>();
    d.depth = j.at("depth").get<int>();
    d.attention_levels = j.at("attention_levels").get<std::vector<int>>();
    d.timestep_embedding_dim = j.at("timestep_embedding_dim").get<int>();
    d.context_dim = j.at("context_dim").get<int>();
    d.attention_head_dim = j.value("attention_head_dim", 0);
    return d;
}

inline nlohmann::json spec_json(const CodecSpec& c) {
    return {{"kind", c.kind},
            {"downsample_factor", c.downsample_factor},
            {"latent_channels", c.latent_channels}};
}

inline CodecSpec codec_spec_from_json(const nlohmann::json& j) {
    CodecSpec c;
    c.kind = j.at("kind").get<std::string>();
    c.downsample_factor = j.at("downsample_factor").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    return c;
}

inline nlohmann::json spec_json(const TextEncoderSpec& t) {
    return {{"tokenizer_id", t.tokenizer_id},
            {"vocab_size", t.vocab_size},
            {"max_sequence_length", t.max_sequence_length},
            {"embedding_dim", t.embedding_dim},
            {"trainable", t.trainable}};
}

inline TextEncoderSpec text_spec_from_json(const nlohmann::json& j) {
    TextEncoderSpec t;
    t.tokenizer_id = j.at("tokenizer_id").get<std::string>();
    t.vocab_size = j.at("vocab_size").get<int>();
    t.max_sequence_length = j.at("max_sequence_length").get<int>();
    t.embedding_dim = j.at("embedding_dim").get<int>();
    t.trainable = j.at("trainable").get<bool>();
    return t;
}

template <class S>
std::vector<ParamT<S>*> collect_of(ModelBundleT<S>& b, const std::string& which) {
    std::vector<ParamT<S>*> out;
    if (which == "denoiser") b.denoiser().collect(out);
    if (which == "codec") b.codec().collect(out);
    if (which == "text_encoder" && b.has_text_encoder()) b.text_encoder().collect(out);
    if (which == "control" && b.has_control()) b.control().collect(out);
    return out;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, ModelBundleT<float>& b,
                            const CheckpointExtra& extra) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["version"] = kCheckpointVersion;
    j["mode"] = to_string(b.mode());
    j["seed"] = b.seed();
    j["step"] = extra.step;
    j["rng_state"] = extra.rng_state;
    j["data_manifest_hash"] = extra.data_manifest_hash;
    j["lexicon_hash"] = extra.lexicon_hash;
    const auto& sm = b.schedule().meta();
    j["schedule"] = {{"kind", sm.kind},
                     {"T", sm.T},
                     {"beta_start", sm.beta_start},
                     {"beta_end", sm.beta_end}};
    // Variance parameterization is fixed, recorded for reproducibility.
    j["reverse_variance"] = "beta_t";
    j["denoiser"] = detail::spec_json(b.denoiser().spec());
    j["codec"] = detail::spec_json(b.codec().spec());
    if (!b.codec().is_identity()) {
        std::vector<float> shift(b.codec().shift().data(),
                                 b.codec().shift().data() + b.codec().shift().size());
        std::vector<float> scale(b.codec().scale_factors().data(),
                                 b.codec().scale_factors().data() +
                                     b.codec().scale_factors().size());
        j["codec"]["shift"] = shift;
        j["codec"]["scale"] = scale;
    }
    std::vector<std::string> blobs = {"denoiser", "codec"};
    if (b.has_text_encoder()) {
        j["text_encoder"] = detail::spec_json(b.text_encoder().spec());
        blobs.push_back("text_encoder");
    }
    if (b.has_control()) {
        j["control"] = {{"condition_channels", b.control().spec().condition_channels},
                        {"zero_conv_count", b.control().spec().zero_conv_count}};
        blobs.push_back("control");
    }
    for (const auto& which : blobs) {
        auto params = detail::collect_of(b, which);
        if (!params.empty()) {
            save_params_blob(dir / (which + ".bin"), params);
        }
    }
    j["blobs"] = blobs;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw Error("cannot write checkpoint manifest in " + dir.string());
    out << j.dump(2) << "\n";
}

inline ModelBundleT<float> load_checkpoint(const std::filesystem::path& dir,
                                           CheckpointExtra* extra_out = nullptr) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IntegrityError("cannot read checkpoint manifest in " + dir.string());
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("version").get<int>() > kCheckpointVersion) {
        throw ConfigError("checkpoint version " + std::to_string(j.at("version").get<int>()) +
                          " is newer than supported " + std::to_string(kCheckpointVersion));
    }
    const auto mode = mode_from_string(j.at("mode").get<std::string>());
    const auto seed = j.at("seed").get<std::uint64_t>();
    ScheduleMeta sm;
    sm.kind = j.at("schedule").at("kind").get<std::string>();
    sm.T = j.at("schedule").at("T").get<int>();
    sm.beta_start = j.at("schedule").at("beta_start").get<double>();
    sm.beta_end = j.at("schedule").at("beta_end").get<double>();
    const auto dspec = detail::denoiser_spec_from_json(j.at("denoiser"));
    const auto cspec = detail::codec_spec_from_json(j.at("codec"));

    ModelBundleT<float> b = [&] {
        if (mode == GenerationMode::unconditional) {
            return ModelBundleT<float>::make_unconditional(dspec, sm, seed);
        }
        const auto tspec = detail::text_spec_from_json(j.at("text_encoder"));
        auto base = ModelBundleT<float>::make_text(dspec, cspec, tspec, sm, seed);
        if (mode == GenerationMode::text_seg) {
            return init_control_from_base(base);
        }
        return base;
    }();

    for (const auto& which : j.at("blobs").get<std::vector<std::string>>()) {
        auto params = detail::collect_of(b, which);
        if (!params.empty()) {
            load_params_blob(dir / (which + ".bin"), params);
        }
    }
    if (!b.codec().is_identity() && j.at("codec").contains("shift")) {
        const auto shift = j.at("codec").at("shift").get<std::vector<float>>();
        const auto scale = j.at("codec").at("scale").get<std::vector<float>>();
        Eigen::MatrixXf sh = Eigen::Map<const Eigen::VectorXf>(shift.data(),
                                                               static_cast<Eigen::Index>(shift.size()));
        Eigen::MatrixXf sc = Eigen::Map<const Eigen::VectorXf>(scale.data(),
                                                               static_cast<Eigen::Index>(scale.size()));
        b.codec().set_calibration(sh, sc);
    }
    if (!j.at("lexicon_hash").get<std::string>().empty()) {
        b.lexicon_hash = j.at("lexicon_hash").get<std::string>();
    }
    if (extra_out != nullptr) {
        extra_out->step = j.at("step").get<long>();
        extra_out->rng_state = j.at("rng_state").get<std::string>();
        extra_out->data_manifest_hash = j.at("data_manifest_hash").get<std::string>();
        extra_out->lexicon_hash = j.at("lexicon_hash").get<std::string>();
    }
    return b;
}

}  // namespace echosynth
