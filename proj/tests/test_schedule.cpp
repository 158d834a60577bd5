// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "echosynth/rng.hpp"
#include "echosynth/schedule.hpp"

using namespace echosynth;

TEST_SUITE_BEGIN("schedule");

TEST_CASE("linear schedule matches an independent cumulative product") {
    const auto s = make_schedule(1000, 1e-4, 0.02);
    // Independent recomputation in long double.
    long double prod = 1.0L;
    for (int t = 1; t <= 1000; ++t) {
        const long double beta = 1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L;
        prod *= (1.0L - beta);
        CHECK(std::abs(static_cast<double>(prod) - s.alpha_bar(t)) < 1e-12);
    }
    CHECK(s.alpha_bar(1000) == doctest::Approx(4.04e-5).epsilon(0.05));
    for (int t = 2; t <= 1000; ++t) {
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
}

TEST_CASE("single step schedule") {
    const auto s = make_schedule(1, 0.3, 0.3);
    CHECK(s.betas() == std::vector<double>{0.3});
    CHECK(s.alpha_bar(1) == doctest::Approx(0.7));
}

TEST_CASE("two step constant beta") {
    const auto s = make_schedule(2, 0.5, 0.5);
    CHECK(s.alpha_bar(1) == doctest::Approx(0.5));
    CHECK(s.alpha_bar(2) == doctest::Approx(0.25));
}

TEST_CASE("parameter errors name the offending bound") {
    CHECK_THROWS_WITH_AS(make_schedule(0, 1e-4, 0.02), doctest::Contains("T ="), ParameterError);
    CHECK_THROWS_WITH_AS(make_schedule(10, 0.0, 0.02), doctest::Contains("beta_start"),
                         ParameterError);
    CHECK_THROWS_WITH_AS(make_schedule(10, 1e-4, 1.0), doctest::Contains("beta_end"),
                         ParameterError);
    CHECK_THROWS_AS(make_schedule(10, 0.02, 0.01), ParameterError);
    CHECK_THROWS_AS(make_schedule(10, 1e-4, 0.02, "cosine"), ParameterError);
}

TEST_CASE("alpha_bar monotone over random valid schedules") {
    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        const int T = 1 + static_cast<int>(rng.uniform_int(400));
        const double b0 = 1e-5 + rng.uniform() * 0.3;
        const double b1 = b0 + rng.uniform() * (0.9 - b0);
        const auto s = make_schedule(T, b0, b1);
        double prod = 1.0;
        for (int t = 1; t <= T; ++t) {
            prod *= s.alpha(t);
            CHECK(s.alpha_bar(t) == prod);  // exact: same product order
            CHECK(s.alpha_bar(t) > 0.0);
            CHECK(s.alpha_bar(t) < 1.0);
            if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }
}

TEST_CASE("forward_step arithmetic") {
    const auto s = make_schedule(2, 0.5, 0.5);
    Tensor x = Tensor::spatial(1, 2, 2);
    x.m.setOnes();
    Tensor zero = Tensor::spatial(1, 2, 2);

    SUBCASE("zero noise") {
        const auto y = forward_step(x, 1, zero, s);
        CHECK(y.m(0, 0) == doctest::Approx(std::sqrt(0.5)));
    }
    SUBCASE("zero signal") {
        Tensor e = x;
        const auto y = forward_step(zero, 1, e, s);
        CHECK(y.m(0, 3) == doctest::Approx(std::sqrt(0.5)));
    }
    SUBCASE("both ones") {
        const auto y = forward_step(x, 1, x, s);
        CHECK(y.m(0, 0) == doctest::Approx(1.41421356).epsilon(1e-6));
    }
    SUBCASE("shape mismatch") {
        Tensor bad = Tensor::spatial(1, 2, 3);
        CHECK_THROWS_AS(forward_step(x, 1, bad, s), ShapeError);
    }
}

TEST_CASE("q_sample arithmetic and marginals") {
    const auto s = make_schedule(2, 0.5, 0.5);

    SUBCASE("zero noise") {
        Tensor x0 = Tensor::spatial(1, 1, 1);
        x0.m(0, 0) = 2.0f;
        Tensor zero = Tensor::spatial(1, 1, 1);
        CHECK(q_sample(x0, 2, zero, s).m(0, 0) == doctest::Approx(2.0 * 0.5));
    }
    SUBCASE("hand case t=2") {
        Tensor x0 = Tensor::spatial(1, 1, 1);
        x0.m(0, 0) = 1.0f;
        Tensor e = x0;
        CHECK(q_sample(x0, 2, e, s).m(0, 0) == doctest::Approx(1.3660254).epsilon(1e-6));
    }
    SUBCASE("t out of range") {
        Tensor x0 = Tensor::spatial(1, 1, 1);
        CHECK_THROWS_AS(q_sample(x0, 3, x0, s), IndexError);
        CHECK_THROWS_AS(q_sample(x0, 0, x0, s), IndexError);
    }
}

TEST_CASE("iterated forward steps match the q_sample marginal") {
    // Monte-Carlo over scalar draws: mean and variance of the t-step chain
    // against the closed form, within 3 standard errors.
    const auto s = make_schedule(8, 0.02, 0.2);
    const int t = 8;
    const int n = 20000;
    const double x0 = 0.7;
    Rng rng(7);
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = x0;
        for (int step = 1; step <= t; ++step) {
            x = std::sqrt(1.0 - s.beta(step)) * x + std::sqrt(s.beta(step)) * rng.normal();
        }
        sum += x;
        sum_sq += x * x;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    const double expect_mean = std::sqrt(s.alpha_bar(t)) * x0;
    const double expect_var = 1.0 - s.alpha_bar(t);
    const double se_mean = std::sqrt(expect_var / n);
    const double se_var = expect_var * std::sqrt(2.0 / (n - 1));
    CHECK(std::abs(mean - expect_mean) < 3.0 * se_mean);
    CHECK(std::abs(var - expect_var) < 3.0 * se_var);
}

TEST_CASE("q_sample variance matches 1 - alpha_bar") {
    const auto s = make_schedule(100, 1e-3, 0.1);
    const int t = 60;
    const int n = 20000;
    Rng rng(11);
    Tensor x0 = Tensor::spatial(1, 1, 1);
    x0.m(0, 0) = 0.3f;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        Tensor e = Tensor::spatial(1, 1, 1);
        e.m(0, 0) = static_cast<float>(rng.normal());
        const double v = q_sample(x0, t, e, s).m(0, 0);
        sum += v;
        sum_sq += v * v;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    const double expect_var = 1.0 - s.alpha_bar(t);
    CHECK(std::abs(var - expect_var) < 3.0 * expect_var * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("reverse_step contracts") {
    const auto s = make_schedule(4, 0.1, 0.4);
    Tensor x = Tensor::spatial(1, 2, 2);
    x.m.setConstant(0.8f);
    Tensor zero = Tensor::spatial(1, 2, 2);

    SUBCASE("zero prediction") {
        const auto y = reverse_step(x, 2, zero, s, zero);
        CHECK(y.m(0, 0) == doctest::Approx(0.8 / std::sqrt(s.alpha(2))));
    }
    SUBCASE("t=0 is an index error") {
        CHECK_THROWS_AS(reverse_step(x, 0, zero, s, zero), IndexError);
    }
    SUBCASE("nonzero z at t=1 is a contract violation") {
        Tensor z = zero;
        z.m(0, 1) = 1.0f;
        CHECK_THROWS_AS(reverse_step(x, 1, zero, s, z), ContractError);
    }
    SUBCASE("oracle eps at t=1 recovers x0") {
        Rng rng(3);
        Tensor x0 = randn_spatial<float>(rng, 1, 4, 4);
        Tensor eps = randn_spatial<float>(rng, 1, 4, 4);
        const auto x1 = q_sample(x0, 1, eps, s);
        Tensor z = Tensor::spatial(1, 4, 4);
        const auto rec = reverse_step(x1, 1, eps, s, z);
        CHECK(max_abs_diff(rec, x0) < 1e-5f);
    }
}

TEST_CASE("schedule ops are pure") {
    const auto s = make_schedule(16, 1e-3, 0.2);
    Rng rng(5);
    Tensor x0 = randn_spatial<float>(rng, 2, 3, 3);
    Tensor eps = randn_spatial<float>(rng, 2, 3, 3);
    const auto a = q_sample(x0, 9, eps, s);
    const auto b = q_sample(x0, 9, eps, s);
    CHECK(a.m == b.m);
    const auto f1 = forward_step(x0, 4, eps, s);
    const auto f2 = forward_step(x0, 4, eps, s);
    CHECK(f1.m == f2.m);
}

TEST_SUITE_END();
