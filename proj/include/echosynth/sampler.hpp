// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Full-length DDPM sampling and a strided multi-step fast sampler. Both are
// deterministic given the seed. The fn-level entry points take a plain
// denoiser callback so an analytic oracle can stand in for the network.

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "echosynth/models.hpp"
#include "echosynth/schedule.hpp"

namespace echosynth {

template <class S>
using DenoiseFn = std::function<TensorT<S>(const TensorT<S>&, int)>;

struct SampleShape {
    int channels = 1;
    int height = 32;
    int width = 32;
};

// Evenly spaced descending timesteps from T to 1; steps == T degenerates to
// the step-for-step sequence [T, T-1, ..., 1].
inline std::vector<int> fast_sample_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) {
        throw ParameterError("steps = " + std::to_string(steps) + " outside [1, " +
                             std::to_string(T) + "]");
    }
    std::vector<int> taus(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double t = steps == 1 ? T : T - i * (T - 1.0) / (steps - 1.0);
        taus[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(t));
    }
    return taus;
}

template <class S>
TensorT<S> ddpm_sample_fn(const DenoiseFn<S>& fn, SampleShape shape, const NoiseSchedule& s,
                          std::uint64_t seed) {
    Rng rng(seed);
    TensorT<S> x = randn_spatial<S>(rng, shape.channels, shape.height, shape.width);
    TensorT<S> zero = TensorT<S>::spatial(shape.channels, shape.height, shape.width);
    for (int t = s.T(); t >= 1; --t) {
        const TensorT<S> eps = fn(x, t);
        const TensorT<S> z = t > 1 ? randn_like(rng, x) : zero;
        x = reverse_step(x, t, eps, s, z);
    }
    return x;
}

// Second-order multi-step solver over the strided subsequence: a deterministic
// noise-prediction update with a two-step Adams-Bashforth extrapolation of
// eps between visits.
template <class S>
TensorT<S> fast_sample_fn(const DenoiseFn<S>& fn, SampleShape shape, int steps,
                          const NoiseSchedule& s, std::uint64_t seed) {
    const auto taus = fast_sample_timesteps(s.T(), steps);
    Rng rng(seed);
    TensorT<S> x = randn_spatial<S>(rng, shape.channels, shape.height, shape.width);
    TensorT<S> eps_prev;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const int t = taus[i];
        const TensorT<S> eps = fn(x, t);
        TensorT<S> eps_eff = eps;
        if (i > 0) {
            eps_eff.m = S(1.5) * eps.m - S(0.5) * eps_prev.m;
        }
        const double abar = s.alpha_bar(t);
        const double abar_next = i + 1 < taus.size() ? s.alpha_bar(taus[i + 1]) : 1.0;
        TensorT<S> x0_hat = x;
        x0_hat.m = (x.m - static_cast<S>(std::sqrt(1.0 - abar)) * eps_eff.m) /
                   static_cast<S>(std::sqrt(abar));
        x.m = static_cast<S>(std::sqrt(abar_next)) * x0_hat.m +
              static_cast<S>(std::sqrt(1.0 - abar_next)) * eps_eff.m;
        eps_prev = eps;
    }
    return x;
}

struct SampleCond {
    std::optional<Prompt> prompt;
    std::optional<Mask> label_map;
    // Classifier-free guidance scale; disabled unless set.
    std::optional<double> guidance_scale;
};

template <class S>
DenoiseFn<S> make_denoise_fn(ModelBundleT<S>& b, const SampleCond& cond, SampleShape shape) {
    b.check_conditioning(cond.prompt.has_value(), cond.label_map.has_value());
    if (b.mode() == GenerationMode::unconditional) {
        return [&b](const TensorT<S>& z, int t) { return denoise<S>(b, z, t, nullptr); };
    }
    const TensorT<S> ctx = b.text_encoder().encode(cond.prompt->text);
    const TensorT<S> empty_ctx = b.text_encoder().encode("");
    const std::optional<double> guidance = cond.guidance_scale;
    if (b.mode() == GenerationMode::text) {
        return [&b, ctx, empty_ctx, guidance](const TensorT<S>& z, int t) {
            TensorT<S> e = denoise<S>(b, z, t, &ctx);
            if (guidance) {
                TensorT<S> eu = denoise<S>(b, z, t, &empty_ctx);
                e.m = eu.m + static_cast<S>(*guidance) * (e.m - eu.m);
            }
            return e;
        };
    }
    const TensorT<S> cond_map = rasterize_label_map<S>(
        *cond.label_map, b.control().spec().condition_channels, shape.height, shape.width);
    return [&b, ctx, empty_ctx, cond_map, guidance](const TensorT<S>& z, int t) {
        TensorT<S> e = control_denoise<S>(b, z, t, ctx, cond_map);
        if (guidance) {
            TensorT<S> eu = control_denoise<S>(b, z, t, empty_ctx, cond_map);
            e.m = eu.m + static_cast<S>(*guidance) * (e.m - eu.m);
        }
        return e;
    };
}

template <class S>
TensorT<S> ddpm_sample(ModelBundleT<S>& b, SampleShape shape, std::uint64_t seed,
                       const SampleCond& cond = {}) {
    return ddpm_sample_fn<S>(make_denoise_fn<S>(b, cond, shape), shape, b.schedule(), seed);
}

template <class S>
TensorT<S> fast_sample(ModelBundleT<S>& b, SampleShape shape, int steps, std::uint64_t seed,
                       const SampleCond& cond = {}) {
    return fast_sample_fn<S>(make_denoise_fn<S>(b, cond, shape), shape, steps, b.schedule(), seed);
}

}  // namespace echosynth
