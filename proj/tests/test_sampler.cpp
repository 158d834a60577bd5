// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "echosynth/sampler.hpp"
#include "support/toy_models.hpp"

using namespace echosynth;

namespace {

// Analytic denoiser for a one-point dataset: returns the exact noise that
// explains x_t given the known training point.
template <class S>
DenoiseFn<S> oracle_denoiser(const TensorT<S>& x0, const NoiseSchedule& s) {
    return [x0, &s](const TensorT<S>& x_t, int t) {
        const double abar = s.alpha_bar(t);
        TensorT<S> eps = x_t;
        eps.m = (x_t.m - static_cast<S>(std::sqrt(abar)) * x0.m) /
                static_cast<S>(std::sqrt(1.0 - abar));
        return eps;
    };
}

}  // namespace

TEST_SUITE_BEGIN("sampler");

TEST_CASE("fast_sample_timesteps stride") {
    const auto all = fast_sample_timesteps(10, 10);
    REQUIRE(all.size() == 10);
    for (int i = 0; i < 10; ++i) CHECK(all[static_cast<std::size_t>(i)] == 10 - i);

    const auto strided = fast_sample_timesteps(1000, 50);
    CHECK(strided.size() == 50);
    CHECK(strided.front() == 1000);
    CHECK(strided.back() == 1);
    for (std::size_t i = 1; i < strided.size(); ++i) CHECK(strided[i] < strided[i - 1]);

    CHECK_THROWS_AS(fast_sample_timesteps(10, 11), ParameterError);
    CHECK_THROWS_AS(fast_sample_timesteps(10, 0), ParameterError);
}

TEST_CASE("oracle denoiser convergence on a one-point dataset") {
    const auto s = make_schedule(100, 1e-4, 0.05);
    Rng rng(3);
    Tensor x0 = randn_spatial<float>(rng, 1, 4, 4);
    x0.m *= 0.5f;
    const auto fn = oracle_denoiser<float>(x0, s);

    const auto endpoint = ddpm_sample_fn<float>(fn, {1, 4, 4}, s, 7);
    CHECK(l2_diff(endpoint, x0) < 1e-2f);

    const auto fast10 = fast_sample_fn<float>(fn, {1, 4, 4}, 10, s, 7);
    CHECK(l2_diff(fast10, endpoint) < 5e-2f);
    const auto fast50 = fast_sample_fn<float>(fn, {1, 4, 4}, 50, s, 7);
    CHECK(l2_diff(fast50, endpoint) < 5e-2f);
}

TEST_CASE("sampling is deterministic in the seed") {
    auto b = testing::micro_uncond_bundle<float>(5, {"linear", 12, 1e-3, 0.2});
    const auto a = ddpm_sample(b, {1, 8, 8}, 123);
    const auto a2 = ddpm_sample(b, {1, 8, 8}, 123);
    CHECK(a.m == a2.m);
    const auto c = ddpm_sample(b, {1, 8, 8}, 124);
    CHECK(l2_diff(a, c) > 0.0f);

    const auto f = fast_sample(b, {1, 8, 8}, 6, 123);
    const auto f2 = fast_sample(b, {1, 8, 8}, 6, 123);
    CHECK(f.m == f2.m);
}

TEST_CASE("conditioning is validated against the bundle mode") {
    auto u = testing::micro_uncond_bundle<float>(5, {"linear", 12, 1e-3, 0.2});
    SampleCond with_prompt;
    with_prompt.prompt = render_textual({View::two_chamber, Phase::ed});
    CHECK_THROWS_AS(ddpm_sample(u, {1, 8, 8}, 1, with_prompt), ConfigError);

    auto txt = testing::micro_text_bundle<float>(6, {"linear", 12, 1e-3, 0.2});
    CHECK_THROWS_AS(ddpm_sample(txt, {1, 8, 8}, 1, {}), ConfigError);

    auto ts = init_control_from_base(txt);
    CHECK_THROWS_AS(ddpm_sample(ts, {1, 8, 8}, 1, with_prompt), ConfigError);

    SampleCond full = with_prompt;
    full.label_map = Mask::Zero(8, 8);
    const auto out = fast_sample(ts, {1, 8, 8}, 4, 9, full);
    CHECK(out.height == 8);

    // Guidance path stays finite and deterministic.
    full.guidance_scale = 2.0;
    const auto g1 = fast_sample(ts, {1, 8, 8}, 4, 9, full);
    const auto g2 = fast_sample(ts, {1, 8, 8}, 4, 9, full);
    CHECK(g1.m == g2.m);
    CHECK(g1.all_finite());
}

TEST_SUITE_END();
