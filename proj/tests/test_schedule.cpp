// SPDX-License-Identifier: Apache-2.0
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>

#include "doctest.h"
#include "lradiff/rng.hpp"
#include "lradiff/schedule.hpp"

using namespace lradiff;
using BigFloat = boost::multiprecision::cpp_bin_float_50;

namespace {

// Independent sequential product in 50-digit arithmetic.
std::vector<BigFloat> alpha_bar_oracle(std::span<const double> betas) {
    std::vector<BigFloat> out;
    BigFloat prod = 1;
    for (double b : betas) {
        prod *= BigFloat(1) - BigFloat(b);
        out.push_back(prod);
    }
    return out;
}

}  // namespace

TEST_CASE("linear schedule: hand-computed products") {
    const auto one = linear_beta_schedule(1, 0.5, 0.5);
    CHECK(one.alpha_bar(1) == doctest::Approx(0.5).epsilon(1e-15));

    const auto two = linear_beta_schedule(2, 0.1, 0.2);
    CHECK(two.beta(1) == doctest::Approx(0.1));
    CHECK(two.beta(2) == doctest::Approx(0.2));
    CHECK(two.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(two.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-15));
    CHECK(two.alpha_bar(0) == 1.0);
}

TEST_CASE("default schedule: terminal alpha_bar below 1e-4 and matches high-precision product") {
    const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
    const auto oracle = alpha_bar_oracle(s.betas());
    CHECK(oracle.back() < BigFloat(1e-4));
    CHECK(s.alpha_bar(1000) < 1e-4);
    for (int t = 1; t <= 1000; ++t)
        REQUIRE(std::abs(s.alpha_bar(t) - oracle[t - 1].convert_to<double>()) <= 1e-12);
}

TEST_CASE("schedule invariants under random betas") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int T = static_cast<int>(rng.uniform_int(1, 2000));
        const double lo = 1e-5 + 0.05 * rng.uniform();
        const double hi = lo + (0.5 - lo) * rng.uniform();
        const auto s = linear_beta_schedule(T, lo, hi);
        const auto oracle = alpha_bar_oracle(s.betas());
        CHECK(s.posterior_variance(1) == 0.0);
        for (int t = 1; t <= T; ++t) {
            REQUIRE(std::abs(s.alpha_bar(t) - oracle[t - 1].convert_to<double>()) <= 1e-12);
            REQUIRE(s.alpha_bar(t) > 0.0);
            REQUIRE(s.alpha_bar(t) < 1.0);
            if (t > 1) REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));
            REQUIRE(s.posterior_variance(t) >= 0.0);
            REQUIRE(s.posterior_variance(t) <= s.beta(t));
        }
    }
}

TEST_CASE("posterior variance") {
    const auto s = linear_beta_schedule(2, 0.1, 0.2);
    CHECK(posterior_variance(s, 1) == 0.0);
    // (1 - 0.9) / (1 - 0.72) * 0.2
    CHECK(posterior_variance(s, 2) == doctest::Approx(0.1 / 0.28 * 0.2).epsilon(1e-14));
    CHECK(posterior_variance(s, 2) == doctest::Approx(0.0714285714285714));
    CHECK_THROWS_AS(posterior_variance(s, 0), std::out_of_range);
    CHECK_THROWS_AS(posterior_variance(s, 3), std::out_of_range);
}

TEST_CASE("schedule rejects bad arguments") {
    CHECK_THROWS_AS(linear_beta_schedule(0), std::invalid_argument);
    CHECK_THROWS_AS(linear_beta_schedule(10, 0.0, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(linear_beta_schedule(10, 0.03, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(linear_beta_schedule(10, 0.01, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(NoiseSchedule({}), std::invalid_argument);
}

TEST_CASE("ddim trajectory examples") {
    CHECK(ddim_trajectory(10, 10) == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    CHECK(ddim_trajectory(1000, 10) ==
          std::vector<int>{1, 112, 223, 334, 445, 556, 667, 778, 889, 1000});
    CHECK(ddim_trajectory(5, 2) == std::vector<int>{1, 5});
    CHECK(ddim_trajectory(7, 1) == std::vector<int>{7});
    CHECK_THROWS_AS(ddim_trajectory(5, 6), std::invalid_argument);
    CHECK_THROWS_AS(ddim_trajectory(5, 0), std::invalid_argument);
}

TEST_CASE("ddim trajectory property: increasing, pinned endpoints") {
    Rng rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
        const int T = static_cast<int>(rng.uniform_int(2, 10000));
        const int S = static_cast<int>(rng.uniform_int(2, T));
        const auto tau = ddim_trajectory(T, S);
        REQUIRE(tau.size() == static_cast<std::size_t>(S));
        REQUIRE(tau.front() == 1);
        REQUIRE(tau.back() == T);
        for (std::size_t i = 1; i < tau.size(); ++i) REQUIRE(tau[i] > tau[i - 1]);
    }
}
