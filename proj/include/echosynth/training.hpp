// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives for the three generation modes and the seeded training
// loop with checkpointing and mode-aware parameter freezing.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "echosynth/checkpoint.hpp"
#include "echosynth/models.hpp"
#include "echosynth/sampler.hpp"

namespace echosynth {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <class S>
class AdamOptimizer {
public:
    AdamOptimizer() = default;

    AdamOptimizer(std::vector<ParamT<S>*> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        slots_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            slots_[i].m = TensorT<S>::Matrix::Zero(params_[i]->value.m.rows(),
                                                   params_[i]->value.m.cols());
            slots_[i].v = slots_[i].m;
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            auto& s = slots_[i];
            s.m = static_cast<S>(beta1_) * s.m + static_cast<S>(1.0 - beta1_) * p.grad.m;
            s.v = (static_cast<S>(beta2_) * s.v.array() +
                   static_cast<S>(1.0 - beta2_) * p.grad.m.array().square())
                      .matrix();
            const auto m_hat = (s.m / static_cast<S>(bc1)).array();
            const auto v_hat = (s.v / static_cast<S>(bc2)).array();
            p.value.m.array() -=
                static_cast<S>(lr_) * m_hat / (v_hat.sqrt() + static_cast<S>(eps_));
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    long step_count() const { return t_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write optimizer state " + path.string());
        const std::int64_t t = t_;
        out.write(reinterpret_cast<const char*>(&t), sizeof(t));
        const std::uint32_t n = static_cast<std::uint32_t>(slots_.size());
        out.write(reinterpret_cast<const char*>(&n), sizeof(n));
        for (const auto& s : slots_) {
            write_matrix(out, s.m);
            write_matrix(out, s.v);
        }
    }

    void load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IntegrityError("cannot read optimizer state " + path.string());
        std::int64_t t = 0;
        in.read(reinterpret_cast<char*>(&t), sizeof(t));
        t_ = t;
        std::uint32_t n = 0;
        in.read(reinterpret_cast<char*>(&n), sizeof(n));
        if (n != slots_.size()) {
            throw IntegrityError("optimizer state shape mismatch in " + path.string());
        }
        for (auto& s : slots_) {
            read_matrix(in, s.m);
            read_matrix(in, s.v);
        }
    }

private:
    struct Slot {
        typename TensorT<S>::Matrix m, v;
    };

    static void write_matrix(std::ofstream& out, const typename TensorT<S>::Matrix& m) {
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(S) * m.size()));
    }
    static void read_matrix(std::ifstream& in, typename TensorT<S>::Matrix& m) {
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(S) * m.size()));
    }

    std::vector<ParamT<S>*> params_;
    std::vector<Slot> slots_;
    double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Value-level objective with an injectable denoiser, for analytic oracles.
template <class S>
double ddpm_loss_with(const DenoiseFn<S>& fn, const TensorT<S>& x0, int t, const TensorT<S>& eps,
                      const NoiseSchedule& s) {
    const auto x_t = q_sample(x0, t, eps, s);
    const auto pred = fn(x_t, t);
    return static_cast<double>((eps.m - pred.m).squaredNorm()) / eps.m.size();
}

template <class S>
VarT<S> ddpm_loss_graph(GraphT<S>& g, ModelBundleT<S>& b, const TensorT<S>& x0, int t,
                        const TensorT<S>& eps) {
    if (b.mode() != GenerationMode::unconditional) {
        throw ConfigError("ddpm_loss requires an unconditional bundle");
    }
    require_same_shape(x0, eps, "ddpm_loss");
    const auto x_t = q_sample(x0, t, eps, b.schedule());
    auto pred = b.denoiser().forward(g, g.constant(x_t), t, nullptr);
    return mse_loss(g.constant(eps), pred);
}

template <class S>
double ddpm_loss(ModelBundleT<S>& b, const TensorT<S>& x0, int t, const TensorT<S>& eps) {
    GraphT<S> g;
    const double v = static_cast<double>(ddpm_loss_graph(g, b, x0, t, eps).value().m(0, 0));
    if (!std::isfinite(v)) {
        throw NumericError("ddpm_loss non-finite at t = " + std::to_string(t));
    }
    return v;
}

// Latent-space objective on a precomputed latent (the codec is frozen during
// diffusion training, so latents are encoded once and cached).
template <class S>
VarT<S> ldm_loss_graph_latent(GraphT<S>& g, ModelBundleT<S>& b, const TensorT<S>& z0,
                              const Prompt& prompt, int t, const TensorT<S>& eps,
                              const Mask* label_map) {
    if (b.mode() == GenerationMode::unconditional) {
        throw ConfigError("ldm_loss requires a text or text_seg bundle");
    }
    require_same_shape(z0, eps, "ldm_loss");
    const auto z_t = q_sample(z0, t, eps, b.schedule());
    auto ctx = b.text_encoder().encode_var(g, prompt.text);
    VarT<S> pred;
    if (b.mode() == GenerationMode::text) {
        pred = b.denoiser().forward(g, g.constant(z_t), t, &ctx);
    } else {
        if (label_map == nullptr) {
            throw ConfigError("text_seg loss requires the record's label map");
        }
        const auto cond = rasterize_label_map<S>(*label_map,
                                                 b.control().spec().condition_channels,
                                                 z0.height, z0.width);
        auto sig = b.control().compute(g, g.constant(z_t), t, &ctx, cond,
                                       b.denoiser().spec().depth);
        pred = b.denoiser().forward(g, g.constant(z_t), t, &ctx, &sig);
    }
    return mse_loss(g.constant(eps), pred);
}

template <class S>
VarT<S> ldm_loss_graph(GraphT<S>& g, ModelBundleT<S>& b, const TensorT<S>& image,
                       const Prompt& prompt, int t, const TensorT<S>& eps,
                       const Mask* label_map = nullptr) {
    return ldm_loss_graph_latent(g, b, b.codec().encode(image), prompt, t, eps, label_map);
}

template <class S>
double ldm_loss(ModelBundleT<S>& b, const TensorT<S>& image, const Prompt& prompt, int t,
                const TensorT<S>& eps, const Mask* label_map = nullptr) {
    GraphT<S> g;
    const double v =
        static_cast<double>(ldm_loss_graph(g, b, image, prompt, t, eps, label_map).value().m(0, 0));
    if (!std::isfinite(v)) {
        throw NumericError("ldm_loss non-finite at t = " + std::to_string(t));
    }
    return v;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    GenerationMode mode = GenerationMode::unconditional;
    double learning_rate = 5e-6;
    int batch_size_per_device = 1;
    // Device emulation: gradients of this many micro-batches are averaged
    // before each step, matching synchronous data parallelism.
    int device_count = 1;
    long max_iterations = 120000;
    ScheduleMeta schedule;
    std::uint64_t seed = 0;
    long checkpoint_every = 1000;
    PromptStyle prompt_style = PromptStyle::textual;
    bool ema = false;
    double ema_decay = 0.999;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (!(learning_rate > 0)) {
            throw ParameterError("learning_rate must be > 0");
        }
        if (max_iterations < 1) {
            throw ParameterError("max_iterations must be >= 1");
        }
        if (batch_size_per_device < 1 || device_count < 1) {
            throw ParameterError("batch size and device count must be >= 1");
        }
    }
};

struct TrainSample {
    Tensor image;
    ViewPhase view_phase;
    std::optional<Mask> label_map;
};

struct LossRecord {
    long iteration = 0;
    double loss = 0.0;
    int t = 0;
    GenerationMode mode = GenerationMode::unconditional;
};

struct TrainResult {
    std::vector<std::filesystem::path> checkpoints;
    std::vector<LossRecord> records;
    std::filesystem::path loss_log;
};

struct ResumeState {
    std::filesystem::path checkpoint_dir;
    long step = 0;
    std::string rng_state;
};

inline TrainResult train(const TrainConfig& cfg, const std::vector<TrainSample>& data,
                         ModelBundleT<float>& bundle, const std::filesystem::path& out_dir,
                         const ConceptLexicon* lexicon = nullptr,
                         const std::string& data_manifest_hash = "",
                         const ResumeState* resume = nullptr) {
    cfg.validate();
    if (data.empty()) {
        throw ConfigError("training data is empty");
    }
    if (cfg.mode != bundle.mode()) {
        throw ConfigError("config mode " + to_string(cfg.mode) + " != bundle mode " +
                          to_string(bundle.mode()));
    }
    if (cfg.mode != GenerationMode::unconditional && cfg.prompt_style == PromptStyle::abstract &&
        lexicon == nullptr) {
        throw ConfigError("abstract prompts require a lexicon");
    }
    if (cfg.mode == GenerationMode::text_seg) {
        for (const auto& s : data) {
            if (!s.label_map) {
                throw ConfigError("text_seg training requires a label map on every record");
            }
        }
    }
    std::filesystem::create_directories(out_dir);

    const NoiseSchedule& sched = bundle.schedule();
    const bool latent_mode = cfg.mode != GenerationMode::unconditional;

    // Codec is frozen during diffusion training; encode once.
    std::vector<Tensor> latents;
    latents.reserve(data.size());
    for (const auto& s : data) {
        latents.push_back(latent_mode ? bundle.codec().encode(s.image) : s.image);
    }

    auto trainable = bundle.trainable_params();
    if (trainable.empty()) {
        throw ConfigError("no trainable parameters for mode " + to_string(cfg.mode));
    }
    AdamOptimizer<float> opt(trainable, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                             cfg.adam_eps);
    const std::uint64_t frozen_before = bundle.frozen_checksum();

    Rng rng(cfg.seed);
    long start_iter = 1;
    if (resume != nullptr) {
        rng.restore_state(resume->rng_state);
        start_iter = resume->step + 1;
        opt.load(resume->checkpoint_dir / "optimizer.bin");
    }

    std::vector<ParamT<float>> ema_shadow;
    if (cfg.ema) {
        for (auto* p : trainable) ema_shadow.push_back(*p);
    }

    if (bundle.lexicon_hash.has_value() && lexicon != nullptr &&
        *bundle.lexicon_hash != hash_hex(lexicon->content_hash())) {
        throw LexiconError("lexicon hash does not match the one recorded on the bundle");
    }
    if (lexicon != nullptr) {
        bundle.lexicon_hash = hash_hex(lexicon->content_hash());
        save_lexicon(out_dir / "lexicon.json", *lexicon);
    }

    TrainResult result;
    result.loss_log = out_dir / "loss_log.jsonl";
    std::ofstream log(result.loss_log, resume ? std::ios::app : std::ios::out);

    std::filesystem::path last_good;
    const int micro_steps = cfg.device_count;
    const int batch = cfg.batch_size_per_device;

    auto save_at = [&](long step) {
        char name[32];
        std::snprintf(name, sizeof(name), "checkpoint-%08ld", step);
        const auto dir = out_dir / name;
        CheckpointExtra extra;
        extra.step = step;
        extra.rng_state = rng.save_state();
        extra.data_manifest_hash = data_manifest_hash;
        extra.lexicon_hash = bundle.lexicon_hash.value_or("");
        save_checkpoint(dir, bundle, extra);
        opt.save(dir / "optimizer.bin");
        if (cfg.ema) {
            std::vector<ParamT<float>*> shadow_ptrs;
            for (auto& p : ema_shadow) shadow_ptrs.push_back(&p);
            save_params_blob(dir / "ema.bin", shadow_ptrs);
        }
        result.checkpoints.push_back(dir);
        return dir;
    };

    for (long iter = start_iter; iter <= cfg.max_iterations; ++iter) {
        opt.zero_grad();
        double loss_sum = 0.0;
        int t_drawn = 0;
        const double inv_samples = 1.0 / (micro_steps * batch);
        for (int micro = 0; micro < micro_steps; ++micro) {
            for (int k = 0; k < batch; ++k) {
                const auto idx = static_cast<std::size_t>(rng.uniform_int(
                    static_cast<std::int64_t>(data.size())));
                const int t = 1 + static_cast<int>(rng.uniform_int(sched.T()));
                t_drawn = t;
                Tensor eps = randn_like(rng, latents[idx]);
                GraphT<float> g;
                VarT<float> loss;
                if (cfg.mode == GenerationMode::unconditional) {
                    loss = ddpm_loss_graph(g, bundle, latents[idx], t, eps);
                } else {
                    const Prompt prompt =
                        render_prompt(cfg.prompt_style, data[idx].view_phase, lexicon);
                    const Mask* map =
                        data[idx].label_map ? &*data[idx].label_map : nullptr;
                    loss = ldm_loss_graph_latent(g, bundle, latents[idx], prompt, t, eps, map);
                }
                loss_sum += static_cast<double>(loss.value().m(0, 0));
                g.backward(scale(loss, inv_samples));
            }
        }
        const double loss_value = loss_sum * inv_samples;
        if (!std::isfinite(loss_value)) {
            throw NumericError("non-finite loss at iteration " + std::to_string(iter) +
                               (last_good.empty()
                                    ? std::string()
                                    : "; last good checkpoint: " + last_good.string()));
        }
        opt.step();
        if (cfg.ema) {
            for (std::size_t i = 0; i < ema_shadow.size(); ++i) {
                ema_shadow[i].value.m = static_cast<float>(cfg.ema_decay) * ema_shadow[i].value.m +
                                        static_cast<float>(1.0 - cfg.ema_decay) *
                                            trainable[i]->value.m;
            }
        }
        LossRecord rec{iter, loss_value, t_drawn, cfg.mode};
        result.records.push_back(rec);
        char line[160];
        std::snprintf(line, sizeof(line), "{\"iteration\":%ld,\"loss\":%.9g,\"t\":%d,\"mode\":\"%s\"}",
                      rec.iteration, rec.loss, rec.t, to_string(rec.mode).c_str());
        log << line << "\n";

        if (iter % cfg.checkpoint_every == 0 || iter == cfg.max_iterations) {
            if (bundle.frozen_checksum() != frozen_before) {
                throw ContractError("frozen parameter drift detected at iteration " +
                                    std::to_string(iter));
            }
            last_good = save_at(iter);
        }
    }
    return result;
}

}  // namespace echosynth
