// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Model components: the denoising UNet, the latent codec, the text encoder,
// and the zero-convolution control branch, composed into a mode-tagged
// bundle. Bundle factories enforce the mode invariants; a bundle violating
// them cannot be constructed.

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "echosynth/nn.hpp"
#include "echosynth/prompts.hpp"
#include "echosynth/schedule.hpp"

namespace echosynth {

enum class GenerationMode { unconditional, text, text_seg };

inline std::string to_string(GenerationMode m) {
    switch (m) {
        case GenerationMode::unconditional: return "unconditional";
        case GenerationMode::text: return "text";
        case GenerationMode::text_seg: return "text_seg";
    }
    return "?";
}

inline GenerationMode mode_from_string(const std::string& s) {
    if (s == "unconditional") return GenerationMode::unconditional;
    if (s == "text") return GenerationMode::text;
    if (s == "text_seg") return GenerationMode::text_seg;
    throw ConfigError("unknown generation mode '" + s + "'");
}

struct DenoiserSpec {
    int in_channels = 1;
    int base_width = 16;
    int depth = 2;                        // resolution levels
    std::vector<int> attention_levels;    // levels carrying cross-attention
    int timestep_embedding_dim = 32;
    int context_dim = 0;                  // 0 <=> no cross-attention blocks
    int attention_head_dim = 0;           // 0 picks max(8, width/2)

    int width_at(int level) const { return base_width << level; }
    int head_dim_at(int level) const {
        return attention_head_dim > 0 ? attention_head_dim : std::max(8, width_at(level) / 2);
    }
    bool attention_at(int level) const {
        return std::find(attention_levels.begin(), attention_levels.end(), level) !=
               attention_levels.end();
    }
};

struct CodecSpec {
    std::string kind = "identity";        // "identity" | "patch"
    int downsample_factor = 1;
    int latent_channels = 1;
};

struct TextEncoderSpec {
    std::string tokenizer_id = "hash-fnv1a-v1";
    int vocab_size = 512;
    int max_sequence_length = 16;
    int embedding_dim = 32;
    bool trainable = true;
};

struct ControlBranchSpec {
    int condition_channels = 4;
    int zero_conv_count = 0;
};

// ---------------------------------------------------------------------------
// Denoiser UNet
// ---------------------------------------------------------------------------

template <class S>
struct ControlSignalsT {
    std::vector<VarT<S>> skips;  // one per level, added to the base skips
    VarT<S> mid;                 // added after the base mid block
};

template <class S>
class UNetDenoiser {
public:
    UNetDenoiser() = default;

    UNetDenoiser(DenoiserSpec spec, Rng& rng, const std::string& prefix = "denoiser")
        : spec_(std::move(spec)) {
        if (spec_.context_dim == 0 && !spec_.attention_levels.empty()) {
            throw ConfigError("attention levels configured with context_dim = 0");
        }
        if (spec_.context_dim > 0 && spec_.attention_levels.empty()) {
            throw ConfigError("context_dim > 0 requires at least one attention level");
        }
        const int e = spec_.timestep_embedding_dim;
        temb1_.init(rng, prefix + ".temb1", e, e);
        temb2_.init(rng, prefix + ".temb2", e, e);
        in_conv_.init(rng, prefix + ".in", spec_.in_channels, spec_.base_width,
                      Conv2dGeom{3, 1, 1});
        enc_.resize(static_cast<std::size_t>(spec_.depth));
        enc_attn_.resize(static_cast<std::size_t>(spec_.depth));
        dec_.resize(static_cast<std::size_t>(spec_.depth));
        dec_attn_.resize(static_cast<std::size_t>(spec_.depth));
        down_.resize(static_cast<std::size_t>(spec_.depth - 1));
        up_.resize(static_cast<std::size_t>(spec_.depth - 1));
        for (int l = 0; l < spec_.depth; ++l) {
            const int w = spec_.width_at(l);
            const auto lvl = std::to_string(l);
            enc_[l].init(rng, prefix + ".enc" + lvl, w, e);
            if (spec_.attention_at(l)) {
                enc_attn_[l].emplace();
                enc_attn_[l]->init(rng, prefix + ".enc_attn" + lvl, w, spec_.context_dim,
                                   spec_.head_dim_at(l));
            }
            if (l < spec_.depth - 1) {
                down_[l].init(rng, prefix + ".down" + lvl, w, spec_.width_at(l + 1),
                              Conv2dGeom{3, 2, 1});
                up_[l].init(rng, prefix + ".up" + lvl, spec_.width_at(l + 1), w,
                            Conv2dGeom{3, 1, 1});
            }
            dec_[l].init(rng, prefix + ".dec" + lvl, w, e);
            if (spec_.attention_at(l)) {
                dec_attn_[l].emplace();
                dec_attn_[l]->init(rng, prefix + ".dec_attn" + lvl, w, spec_.context_dim,
                                   spec_.head_dim_at(l));
            }
        }
        mid_.init(rng, prefix + ".mid", spec_.width_at(spec_.depth - 1), e);
        out_conv_.init(rng, prefix + ".out", spec_.base_width, spec_.in_channels,
                       Conv2dGeom{3, 1, 1}, 0.1);
    }

    const DenoiserSpec& spec() const { return spec_; }

    VarT<S> time_embedding(GraphT<S>& g, int t) {
        auto sin = g.constant(sinusoidal_embedding<S>(t, spec_.timestep_embedding_dim));
        return temb2_(g, silu(temb1_(g, sin)));
    }

    // Encoder pass shared by the base model and the control copy. Appends
    // per-level features to `skips` and returns the mid-block output.
    VarT<S> encode_path(GraphT<S>& g, VarT<S> x, const VarT<S>& temb, const VarT<S>* ctx,
                        std::vector<VarT<S>>& skips) {
        for (int l = 0; l < spec_.depth; ++l) {
            x = enc_[l](g, x, temb);
            if (enc_attn_[l]) {
                x = (*enc_attn_[l])(g, x, *ctx);
            }
            skips.push_back(x);
            if (l < spec_.depth - 1) {
                x = down_[l](g, x);
            }
        }
        return mid_(g, x, temb);
    }

    VarT<S> forward(GraphT<S>& g, const VarT<S>& z, int t, const VarT<S>* ctx,
                    const ControlSignalsT<S>* inject = nullptr) {
        if (spec_.context_dim > 0 && ctx == nullptr) {
            throw ConfigError("denoiser requires a context sequence");
        }
        if (spec_.context_dim == 0 && ctx != nullptr) {
            throw ConfigError("unconditional denoiser got a context sequence");
        }
        auto temb = time_embedding(g, t);
        std::vector<VarT<S>> skips;
        auto x = encode_path(g, in_conv_(g, z), temb, ctx, skips);
        if (inject != nullptr) {
            x = add(x, inject->mid);
            for (int l = 0; l < spec_.depth; ++l) {
                skips[l] = add(skips[l], inject->skips[l]);
            }
        }
        for (int l = spec_.depth - 1; l >= 0; --l) {
            if (l < spec_.depth - 1) {
                x = up_[l](g, upsample_nearest2(x));
            }
            x = dec_[l](g, concat_channels(x, skips[l]), temb);
            if (dec_attn_[l]) {
                x = (*dec_attn_[l])(g, x, *ctx);
            }
        }
        return out_conv_(g, silu(x));
    }

    void collect(std::vector<ParamT<S>*>& out) {
        temb1_.collect(out);
        temb2_.collect(out);
        in_conv_.collect(out);
        for (int l = 0; l < spec_.depth; ++l) {
            enc_[l].collect(out);
            if (enc_attn_[l]) enc_attn_[l]->collect(out);
            if (l < spec_.depth - 1) {
                down_[l].collect(out);
                up_[l].collect(out);
            }
            dec_[l].collect(out);
            if (dec_attn_[l]) dec_attn_[l]->collect(out);
        }
        mid_.collect(out);
        out_conv_.collect(out);
    }

    // Pieces the control branch duplicates.
    LinearLayer<S> temb1_, temb2_;
    ConvLayer<S> in_conv_;
    std::vector<ResBlock<S>> enc_;
    std::vector<std::optional<AttentionBlock<S>>> enc_attn_;
    std::vector<ConvLayer<S>> down_;
    ResBlock<S> mid_;

private:
    DenoiserSpec spec_;
    std::vector<ConvLayer<S>> up_;
    std::vector<DecoderBlock<S>> dec_;
    std::vector<std::optional<AttentionBlock<S>>> dec_attn_;
    ConvLayer<S> out_conv_;
};

// ---------------------------------------------------------------------------
// Control branch: trainable copy of the encoder path plus zero-convolutions
// ---------------------------------------------------------------------------

template <class S>
class ControlBranchT {
public:
    ControlBranchT() = default;

    // Duplicates the base encoder path; zero-convolutions start at zero so
    // the branch contributes nothing until trained.
    ControlBranchT(const UNetDenoiser<S>& base, ControlBranchSpec spec, Rng& rng)
        : spec_(spec),
          temb1_(base.temb1_),
          temb2_(base.temb2_),
          in_conv_(base.in_conv_),
          enc_(base.enc_),
          enc_attn_(base.enc_attn_),
          down_(base.down_),
          mid_(base.mid_) {
        const auto& dspec = base.spec();
        rename_all("control");
        stem_.init(rng, "control.stem", spec_.condition_channels, dspec.base_width,
                   Conv2dGeom{3, 1, 1});
        stem_zero_.init_zero("control.stem_zero", dspec.base_width, dspec.base_width,
                             Conv2dGeom{1, 1, 0});
        zero_skips_.resize(static_cast<std::size_t>(dspec.depth));
        for (int l = 0; l < dspec.depth; ++l) {
            zero_skips_[l].init_zero("control.zero_skip" + std::to_string(l), dspec.width_at(l),
                                     dspec.width_at(l), Conv2dGeom{1, 1, 0});
        }
        zero_mid_.init_zero("control.zero_mid", dspec.width_at(dspec.depth - 1),
                            dspec.width_at(dspec.depth - 1), Conv2dGeom{1, 1, 0});
        spec_.zero_conv_count = dspec.depth + 2;
    }

    const ControlBranchSpec& spec() const { return spec_; }

    ControlSignalsT<S> compute(GraphT<S>& g, const VarT<S>& z, int t, const VarT<S>* ctx,
                               const TensorT<S>& cond_map, int depth) {
        auto sin = g.constant(sinusoidal_embedding<S>(t, static_cast<int>(temb1_.w.value.m.cols())));
        auto temb = temb2_(g, silu(temb1_(g, sin)));
        auto x = in_conv_(g, z);
        x = add(x, stem_zero_(g, silu(stem_(g, g.constant(cond_map)))));
        ControlSignalsT<S> sig;
        std::vector<VarT<S>> feats;
        for (int l = 0; l < depth; ++l) {
            x = enc_[l](g, x, temb);
            if (enc_attn_[l]) {
                x = (*enc_attn_[l])(g, x, *ctx);
            }
            feats.push_back(x);
            if (l < depth - 1) {
                x = down_[l](g, x);
            }
        }
        x = mid_(g, x, temb);
        for (int l = 0; l < depth; ++l) {
            sig.skips.push_back(zero_skips_[l](g, feats[l]));
        }
        sig.mid = zero_mid_(g, x);
        return sig;
    }

    void collect(std::vector<ParamT<S>*>& out) {
        temb1_.collect(out);
        temb2_.collect(out);
        in_conv_.collect(out);
        for (std::size_t l = 0; l < enc_.size(); ++l) {
            enc_[l].collect(out);
            if (enc_attn_[l]) enc_attn_[l]->collect(out);
            if (l < down_.size()) down_[l].collect(out);
        }
        mid_.collect(out);
        stem_.collect(out);
        stem_zero_.collect(out);
        for (auto& zc : zero_skips_) zc.collect(out);
        zero_mid_.collect(out);
    }

private:
    void rename_all(const std::string& prefix) {
        std::vector<ParamT<S>*> copied;
        temb1_.collect(copied);
        temb2_.collect(copied);
        in_conv_.collect(copied);
        for (std::size_t l = 0; l < enc_.size(); ++l) {
            enc_[l].collect(copied);
            if (enc_attn_[l]) enc_attn_[l]->collect(copied);
            if (l < down_.size()) down_[l].collect(copied);
        }
        mid_.collect(copied);
        for (auto* p : copied) {
            p->name = prefix + "." + p->name;
        }
    }

    ControlBranchSpec spec_;
    LinearLayer<S> temb1_, temb2_;
    ConvLayer<S> in_conv_;
    std::vector<ResBlock<S>> enc_;
    std::vector<std::optional<AttentionBlock<S>>> enc_attn_;
    std::vector<ConvLayer<S>> down_;
    ResBlock<S> mid_;
    ConvLayer<S> stem_;
    ConvLayer<S> stem_zero_;
    std::vector<ConvLayer<S>> zero_skips_;
    ConvLayer<S> zero_mid_;
};

// ---------------------------------------------------------------------------
// Latent codec
// ---------------------------------------------------------------------------

// Identity codec, or a trainable patch codec: space-to-depth followed by a
// per-patch linear map (and its mirror on the decode side). With
// latent_channels == f*f*C and orthogonal init the map is exactly invertible;
// with fewer channels it is fit on data.
template <class S>
class CodecT {
public:
    CodecT() = default;

    CodecT(CodecSpec spec, int image_channels, Rng& rng)
        : spec_(std::move(spec)), image_channels_(image_channels) {
        if (spec_.kind == "identity") {
            if (spec_.downsample_factor != 1) {
                throw ConfigError("identity codec requires downsample_factor = 1");
            }
            spec_.latent_channels = image_channels_;
            return;
        }
        if (spec_.kind != "patch") {
            throw ConfigError("unknown codec kind '" + spec_.kind + "'");
        }
        const int f = spec_.downsample_factor;
        const int patch = image_channels_ * f * f;
        const int lc = spec_.latent_channels;
        enc_w_.name = "codec.enc.w";
        dec_w_.name = "codec.dec.w";
        enc_b_.name = "codec.enc.b";
        dec_b_.name = "codec.dec.b";
        using Matrix = typename TensorT<S>::Matrix;
        Matrix gauss(patch, patch);
        for (Eigen::Index c = 0; c < patch; ++c) {
            for (Eigen::Index r = 0; r < patch; ++r) {
                gauss(r, c) = static_cast<S>(rng.normal());
            }
        }
        // Orthogonal rows: exactly invertible when lc == patch.
        Eigen::HouseholderQR<Matrix> qr(gauss);
        Matrix q = qr.householderQ() * Matrix::Identity(patch, patch);
        enc_w_.value = TensorT<S>(1, 1, q.topRows(lc));
        dec_w_.value = TensorT<S>(1, 1, q.topRows(lc).transpose().eval());
        enc_b_.value = TensorT<S>(1, 1, Matrix::Zero(lc, 1));
        dec_b_.value = TensorT<S>(1, 1, Matrix::Zero(patch, 1));
        enc_w_.zero_grad();
        dec_w_.zero_grad();
        enc_b_.zero_grad();
        dec_b_.zero_grad();
        shift_ = Matrix::Zero(lc, 1);
        scale_ = Matrix::Ones(lc, 1);
    }

    const CodecSpec& spec() const { return spec_; }
    bool is_identity() const { return spec_.kind == "identity"; }

    TensorT<S> encode(const TensorT<S>& image) {
        if (is_identity()) return image;
        check_image(image);
        GraphT<S> g;
        auto z = encode_raw(g, g.constant(image));
        TensorT<S> out = z.value();
        out.m = (out.m - shift_.replicate(1, out.m.cols()))
                    .cwiseQuotient(scale_.replicate(1, out.m.cols()));
        return out;
    }

    TensorT<S> decode(const TensorT<S>& latent) {
        if (is_identity()) return latent;
        TensorT<S> denorm = latent;
        denorm.m = latent.m.cwiseProduct(scale_.replicate(1, latent.m.cols())) +
                   shift_.replicate(1, latent.m.cols());
        GraphT<S> g;
        return decode_raw(g, g.constant(denorm)).value();
    }

    // Raw (uncalibrated) graph paths used when fitting the codec.
    VarT<S> encode_raw(GraphT<S>& g, const VarT<S>& image) {
        if (is_identity()) return image;
        auto z = space_to_depth(image, spec_.downsample_factor);
        return linear(z, g.param(enc_w_), g.param(enc_b_));
    }

    VarT<S> decode_raw(GraphT<S>& g, const VarT<S>& latent) {
        if (is_identity()) return latent;
        auto p = linear(latent, g.param(dec_w_), g.param(dec_b_));
        return depth_to_space(p, spec_.downsample_factor);
    }

    // Sets per-channel shift/scale so encoded training data is roughly
    // unit-scale per channel.
    void calibrate(const std::vector<TensorT<S>>& images) {
        if (is_identity() || images.empty()) return;
        shift_.setZero();
        scale_.setOnes();
        Eigen::Index n = 0;
        typename TensorT<S>::Matrix sum =
            TensorT<S>::Matrix::Zero(spec_.latent_channels, 1);
        typename TensorT<S>::Matrix sum_sq = sum;
        for (const auto& img : images) {
            const auto z = encode(img);
            sum += z.m.rowwise().sum();
            sum_sq += z.m.cwiseProduct(z.m).rowwise().sum();
            n += z.m.cols();
        }
        shift_ = sum / static_cast<S>(n);
        scale_ = ((sum_sq / static_cast<S>(n)) - shift_.cwiseProduct(shift_))
                     .cwiseMax(S(1e-8))
                     .cwiseSqrt();
    }

    void set_calibration(typename TensorT<S>::Matrix shift, typename TensorT<S>::Matrix scale) {
        shift_ = std::move(shift);
        scale_ = std::move(scale);
    }
    const typename TensorT<S>::Matrix& shift() const { return shift_; }
    const typename TensorT<S>::Matrix& scale_factors() const { return scale_; }

    void collect(std::vector<ParamT<S>*>& out) {
        if (is_identity()) return;
        out.push_back(&enc_w_);
        out.push_back(&enc_b_);
        out.push_back(&dec_w_);
        out.push_back(&dec_b_);
    }

    int latent_height(int image_height) const { return image_height / spec_.downsample_factor; }
    int latent_width(int image_width) const { return image_width / spec_.downsample_factor; }

private:
    void check_image(const TensorT<S>& image) const {
        if (image.channels() != image_channels_ ||
            image.height % spec_.downsample_factor != 0 ||
            image.width % spec_.downsample_factor != 0) {
            throw ShapeError("codec: image shape incompatible with downsample factor");
        }
    }

    CodecSpec spec_;
    int image_channels_ = 1;
    ParamT<S> enc_w_, enc_b_, dec_w_, dec_b_;
    typename TensorT<S>::Matrix shift_, scale_;
};

// ---------------------------------------------------------------------------
// Text encoder
// ---------------------------------------------------------------------------

// Hash-bucket bag-of-tokens embedder: whitespace tokens are FNV-hashed into
// a fixed vocabulary and looked up in a trainable embedding table. Serves as
// the asset-free stand-in for a pretrained encoder behind the same surface;
// pretrained weights can be loaded into the table from an asset blob.
template <class S>
class TextEncoderT {
public:
    TextEncoderT() = default;

    TextEncoderT(TextEncoderSpec spec, Rng& rng) : spec_(std::move(spec)) {
        if (spec_.tokenizer_id != "hash-fnv1a-v1") {
            throw ConfigError("unknown tokenizer '" + spec_.tokenizer_id + "'");
        }
        table_.name = "text.embedding";
        table_.value = TensorT<S>(1, spec_.vocab_size,
                                  typename TensorT<S>::Matrix(spec_.embedding_dim,
                                                              spec_.vocab_size));
        const double std = 1.0 / std::sqrt(static_cast<double>(spec_.embedding_dim));
        for (Eigen::Index c = 0; c < table_.value.m.cols(); ++c) {
            for (Eigen::Index r = 0; r < table_.value.m.rows(); ++r) {
                table_.value.m(r, c) = static_cast<S>(rng.normal() * std);
            }
        }
        table_.trainable = spec_.trainable;
        table_.zero_grad();
    }

    const TextEncoderSpec& spec() const { return spec_; }

    std::vector<int> tokenize(const std::string& prompt) const {
        std::vector<int> ids;
        std::string word;
        auto flush = [&] {
            if (!word.empty()) {
                ids.push_back(static_cast<int>(fnv1a64(word) %
                                               static_cast<std::uint64_t>(spec_.vocab_size)));
                word.clear();
            }
        };
        for (char ch : prompt) {
            if (std::isspace(static_cast<unsigned char>(ch))) {
                flush();
            } else {
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            }
        }
        flush();
        if (static_cast<int>(ids.size()) > spec_.max_sequence_length) {
            std::cerr << "[echosynth] prompt truncated to " << spec_.max_sequence_length
                      << " tokens\n";
            ids.resize(static_cast<std::size_t>(spec_.max_sequence_length));
        }
        return ids;
    }

    // Empty prompts yield a single zero padding vector rather than an error.
    VarT<S> encode_var(GraphT<S>& g, const std::string& prompt) {
        const auto ids = tokenize(prompt);
        if (ids.empty()) {
            return g.constant(TensorT<S>::tokens(spec_.embedding_dim, 1));
        }
        return select_cols(g.param(table_), ids);
    }

    TensorT<S> encode(const std::string& prompt) {
        GraphT<S> g;
        return encode_var(g, prompt).value();
    }

    void collect(std::vector<ParamT<S>*>& out) { out.push_back(&table_); }

private:
    TextEncoderSpec spec_;
    ParamT<S> table_;
};

// ---------------------------------------------------------------------------
// Label-map rasterization
// ---------------------------------------------------------------------------

// One-hot channels per class, nearest-neighbor resampled to the denoiser's
// input resolution.
template <class S>
TensorT<S> rasterize_label_map(const Mask& mask, int classes, int out_h, int out_w) {
    TensorT<S> out = TensorT<S>::spatial(classes, out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min<int>(static_cast<int>(mask.rows()) - 1,
                                     y * static_cast<int>(mask.rows()) / out_h);
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min<int>(static_cast<int>(mask.cols()) - 1,
                                         x * static_cast<int>(mask.cols()) / out_w);
            const int cls = mask(sy, sx);
            if (cls < 0 || cls >= classes) {
                throw ShapeError("label map contains class " + std::to_string(cls) +
                                 " outside [0, " + std::to_string(classes - 1) + "]");
            }
            out.m(cls, static_cast<Eigen::Index>(y) * out_w + x) = S(1);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

template <class S>
class ModelBundleT {
public:
    static ModelBundleT make_unconditional(DenoiserSpec d, ScheduleMeta sm, std::uint64_t seed) {
        if (d.context_dim != 0) {
            throw ConfigError("unconditional bundle requires context_dim = 0");
        }
        ModelBundleT b;
        b.mode_ = GenerationMode::unconditional;
        b.seed_ = seed;
        Rng rng(seed);
        b.denoiser_.emplace(d, rng);
        b.codec_.emplace(CodecSpec{"identity", 1, d.in_channels}, d.in_channels, rng);
        b.schedule_ = make_schedule(sm);
        return b;
    }

    static ModelBundleT make_text(DenoiserSpec d, CodecSpec c, TextEncoderSpec t, ScheduleMeta sm,
                                  std::uint64_t seed) {
        if (d.context_dim != t.embedding_dim) {
            throw ConfigError("denoiser context_dim must equal text embedding_dim");
        }
        if (d.context_dim <= 0) {
            throw ConfigError("text bundle requires context_dim > 0");
        }
        if (c.kind == "patch" && d.in_channels != c.latent_channels) {
            throw ConfigError("denoiser in_channels must equal codec latent_channels");
        }
        ModelBundleT b;
        b.mode_ = GenerationMode::text;
        b.seed_ = seed;
        Rng rng(seed);
        b.denoiser_.emplace(d, rng);
        const int image_channels = 1;
        b.codec_.emplace(c, image_channels, rng);
        b.text_encoder_.emplace(t, rng);
        b.schedule_ = make_schedule(sm);
        b.apply_trainability();
        return b;
    }

    GenerationMode mode() const { return mode_; }
    std::uint64_t seed() const { return seed_; }
    const NoiseSchedule& schedule() const { return schedule_; }

    UNetDenoiser<S>& denoiser() { return *denoiser_; }
    const UNetDenoiser<S>& denoiser() const { return *denoiser_; }
    CodecT<S>& codec() { return *codec_; }
    bool has_text_encoder() const { return text_encoder_.has_value(); }
    TextEncoderT<S>& text_encoder() {
        if (!text_encoder_) throw ConfigError("bundle has no text encoder");
        return *text_encoder_;
    }
    bool has_control() const { return control_.has_value(); }
    ControlBranchT<S>& control() {
        if (!control_) throw ConfigError("bundle has no control branch");
        return *control_;
    }

    std::vector<ParamT<S>*> all_params() {
        std::vector<ParamT<S>*> out;
        denoiser_->collect(out);
        codec_->collect(out);
        if (text_encoder_) text_encoder_->collect(out);
        if (control_) control_->collect(out);
        return out;
    }

    std::vector<ParamT<S>*> trainable_params() {
        std::vector<ParamT<S>*> out;
        for (auto* p : all_params()) {
            if (p->trainable) out.push_back(p);
        }
        return out;
    }

    std::vector<ParamT<S>*> frozen_params() {
        std::vector<ParamT<S>*> out;
        for (auto* p : all_params()) {
            if (!p->trainable) out.push_back(p);
        }
        return out;
    }

    std::uint64_t frozen_checksum() { return params_checksum(frozen_params()); }

    // Mode-dependent freezing. In text mode the codec stays frozen and the
    // text encoder follows its trainable flag; in text_seg only the control
    // branch (including its zero-convolutions) updates.
    void apply_trainability() {
        std::vector<ParamT<S>*> ps;
        switch (mode_) {
            case GenerationMode::unconditional:
                break;
            case GenerationMode::text: {
                ps.clear();
                codec_->collect(ps);
                for (auto* p : ps) p->trainable = false;
                ps.clear();
                if (text_encoder_) {
                    text_encoder_->collect(ps);
                    for (auto* p : ps) p->trainable = text_encoder_->spec().trainable;
                }
                break;
            }
            case GenerationMode::text_seg: {
                ps.clear();
                denoiser_->collect(ps);
                codec_->collect(ps);
                if (text_encoder_) text_encoder_->collect(ps);
                for (auto* p : ps) p->trainable = false;
                ps.clear();
                if (control_) {
                    control_->collect(ps);
                    for (auto* p : ps) p->trainable = true;
                }
                break;
            }
        }
    }

    // Validates that supplied conditioning matches the bundle mode.
    void check_conditioning(bool has_prompt, bool has_map) const {
        switch (mode_) {
            case GenerationMode::unconditional:
                if (has_prompt || has_map) {
                    throw ConfigError("unconditional bundle cannot take conditioning");
                }
                break;
            case GenerationMode::text:
                if (!has_prompt) throw ConfigError("text bundle requires a prompt");
                if (has_map) throw ConfigError("text bundle cannot take a label map");
                break;
            case GenerationMode::text_seg:
                if (!has_prompt) throw ConfigError("text_seg bundle requires a prompt");
                if (!has_map) throw ConfigError("text_seg bundle requires a label map");
                break;
        }
    }

    std::optional<std::string> lexicon_hash;

    template <class T>
    friend ModelBundleT<T> init_control_from_base(const ModelBundleT<T>& base);

private:
    ModelBundleT() = default;

    GenerationMode mode_ = GenerationMode::unconditional;
    std::uint64_t seed_ = 0;
    NoiseSchedule schedule_;
    std::optional<UNetDenoiser<S>> denoiser_;
    std::optional<CodecT<S>> codec_;
    std::optional<TextEncoderT<S>> text_encoder_;
    std::optional<ControlBranchT<S>> control_;
};

// Builds a text_seg bundle from a text bundle. The control branch starts as
// an exact copy of the base encoder path; the base is frozen.
template <class S>
ModelBundleT<S> init_control_from_base(const ModelBundleT<S>& base) {
    if (base.mode_ != GenerationMode::text) {
        throw ConfigError("init_control_from_base requires a text-mode bundle");
    }
    ModelBundleT<S> b = base;
    b.mode_ = GenerationMode::text_seg;
    Rng rng(base.seed_ ^ 0x636f6e74726f6cull);
    b.control_.emplace(*b.denoiser_, ControlBranchSpec{}, rng);
    b.apply_trainability();
    return b;
}

// ---------------------------------------------------------------------------
// Bundle operations
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> encode_image(ModelBundleT<S>& b, const TensorT<S>& image) {
    return b.codec().encode(image);
}

template <class S>
TensorT<S> decode_latent(ModelBundleT<S>& b, const TensorT<S>& latent) {
    return b.codec().decode(latent);
}

template <class S>
TensorT<S> encode_text(ModelBundleT<S>& b, const std::string& prompt) {
    return b.text_encoder().encode(prompt);
}

template <class S>
TensorT<S> denoise(ModelBundleT<S>& b, const TensorT<S>& z_t, int t, const TensorT<S>* context) {
    const bool wants_ctx = b.denoiser().spec().context_dim > 0;
    if (wants_ctx != (context != nullptr)) {
        throw ConfigError("denoise: context presence must match the bundle mode");
    }
    GraphT<S> g;
    std::optional<VarT<S>> ctx;
    if (context != nullptr) {
        ctx = g.constant(*context);
    }
    auto out = b.denoiser().forward(g, g.constant(z_t), t, ctx ? &*ctx : nullptr);
    if (!out.value().all_finite()) {
        throw NumericError("denoiser produced non-finite output at timestep " + std::to_string(t));
    }
    return out.value();
}

// Rasterized condition map variant; equals denoise() while every
// zero-convolution remains zero.
template <class S>
TensorT<S> control_denoise(ModelBundleT<S>& b, const TensorT<S>& z_t, int t,
                           const TensorT<S>& context, const TensorT<S>& cond_map) {
    if (b.mode() != GenerationMode::text_seg) {
        throw ConfigError("control_denoise requires a text_seg bundle");
    }
    GraphT<S> g;
    auto ctx = g.constant(context);
    auto sig = b.control().compute(g, g.constant(z_t), t, &ctx, cond_map,
                                   b.denoiser().spec().depth);
    auto out = b.denoiser().forward(g, g.constant(z_t), t, &ctx, &sig);
    if (!out.value().all_finite()) {
        throw NumericError("control denoiser produced non-finite output at timestep " +
                           std::to_string(t));
    }
    return out.value();
}

}  // namespace echosynth
