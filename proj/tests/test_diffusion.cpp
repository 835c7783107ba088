// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "lradiff/diffusion.hpp"
#include "oracles.hpp"

using namespace lradiff;

namespace {

DiffusionConfig make_cfg(int n, NoiseSchedule s, int S = 10, FqMode mode = FqMode::zero) {
    DiffusionConfig cfg;
    cfg.schedule = std::move(s);
    cfg.sample_steps = S;
    cfg.fq_mode = mode;
    cfg.n_classes = n;
    return cfg;
}

// Schedule with a prescribed alpha_bar at step 1.
NoiseSchedule single_step(double alpha_bar) { return NoiseSchedule({1.0 - alpha_bar}); }

Conditioning cond_of(std::size_t batch, std::size_t feat, Matrix f_q = {}) {
    return {Matrix(batch, feat), Matrix(), std::move(f_q)};
}

Matrix one_hot_rows(std::span<const int> cls, int n) {
    Matrix m(cls.size(), static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < cls.size(); ++i) m(i, cls[i]) = 1.0;
    return m;
}

}  // namespace

TEST_CASE("forward_sample closed form") {
    const auto cfg = make_cfg(2, single_step(0.25));
    const std::vector<double> y0{1, 0};
    auto y = forward_sample(cfg, y0, std::vector<double>{0, 0}, 1, std::vector<double>{0, 0});
    CHECK(y[0] == doctest::Approx(0.5));
    CHECK(y[1] == doctest::Approx(0.0));
    y = forward_sample(cfg, y0, std::vector<double>{0.2, 0.2}, 1, std::vector<double>{1, -1});
    CHECK(y[0] == doctest::Approx(0.5 + 0.1 + std::sqrt(0.75)));
    CHECK(y[0] == doctest::Approx(1.4660254));
    CHECK(y[1] == doctest::Approx(-0.7660254));
    CHECK_THROWS_AS(forward_sample(cfg, y0, std::vector<double>{0}, 1, std::vector<double>{0, 0}),
                    DimensionError);
    CHECK_THROWS_AS(forward_sample(cfg, y0, y0, 2, y0), std::out_of_range);
}

TEST_CASE("forward_sample at T with eps = 0 nearly erases a one-hot label") {
    const auto cfg = make_cfg(10, linear_beta_schedule(1000));
    std::vector<double> y0(10, 0.0);
    y0[3] = 1.0;
    const auto y = forward_sample(cfg, y0, std::vector<double>(10, 0.0), 1000, std::vector<double>(10, 0.0));
    double norm = 0.0;
    for (double v : y) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(std::sqrt(cfg.schedule.alpha_bar(1000))));
    CHECK(std::sqrt(norm) < 0.02);
}

TEST_CASE("training_loss of a zeroed model is the mean squared noise norm") {
    const auto cfg = make_cfg(10, linear_beta_schedule(1000));
    DenoiserConfig mc{10, 2, 0, 16, 8, 1, 1000};
    DenoiserModel model(mc, 1);
    model.parameters()[model.output_weight_index()].fill(0.0);
    model.parameters()[model.output_bias_index()].fill(0.0);
    model.mark_modified();
    std::vector<int> cls(10000);
    for (std::size_t i = 0; i < cls.size(); ++i) cls[i] = static_cast<int>(i % 10);
    TrainingBatch batch{one_hot_rows(cls, 10), cond_of(cls.size(), 2)};
    Rng rng(4);
    const auto ev = training_loss(cfg, model, batch, rng);
    double direct = 0.0;
    for (double v : ev.eps.data()) direct += v * v;
    direct /= static_cast<double>(cls.size());
    CHECK(ev.loss == doctest::Approx(direct).epsilon(1e-12));
    CHECK(ev.loss > 9.5);
    CHECK(ev.loss < 10.5);
    for (int t : ev.t) REQUIRE((t >= 1 && t <= 1000));
}

TEST_CASE("training_loss determinism, replication and permutation invariance") {
    const auto cfg = make_cfg(3, linear_beta_schedule(100));
    DenoiserConfig mc{3, 2, 0, 8, 4, 2, 100};
    Rng data(5);
    TrainingBatch batch{one_hot_rows(std::vector<int>{0, 2, 1, 1, 0}, 3),
                        {oracle::random_matrix(5, 2, data), Matrix(), Matrix()}};
    {
        DenoiserModel a(mc, 3), b(mc, 3);
        Rng r1(9), r2(9);
        CHECK(training_loss(cfg, a, batch, r1).loss == training_loss(cfg, b, batch, r2).loss);
    }
    {
        // One item vs the same item four times with identical (t, eps). Batch
        // normalization sees a constant batch either way.
        DenoiserModel m(mc, 3);
        TrainingBatch one{one_hot_rows(std::vector<int>{2}, 3), {Matrix(1, 2, 0.3), Matrix(), Matrix()}};
        TrainingBatch four{one_hot_rows(std::vector<int>{2, 2, 2, 2}, 3),
                           {Matrix(4, 2, 0.3), Matrix(), Matrix()}};
        const Matrix eps1(1, 3, std::vector<double>{0.5, -1.0, 0.25});
        Matrix eps4(4, 3);
        for (std::size_t r = 0; r < 4; ++r) std::copy(eps1.data().begin(), eps1.data().end(), eps4.row(r).begin());
        const double l1 = training_loss(cfg, m, one, std::vector<int>{17}, eps1).loss;
        const double l4 = training_loss(cfg, m, four, std::vector<int>{17, 17, 17, 17}, eps4).loss;
        CHECK(l1 == doctest::Approx(l4).epsilon(1e-12));
    }
    {
        DenoiserModel m(mc, 3);
        const std::vector<int> t{3, 50, 99, 1, 42};
        const Matrix eps = oracle::random_matrix(5, 3, data);
        const std::vector<std::size_t> perm{4, 2, 0, 3, 1};
        TrainingBatch shuffled{Matrix(5, 3), {Matrix(5, 2), Matrix(), Matrix()}};
        Matrix eps_p(5, 3);
        std::vector<int> t_p(5);
        for (std::size_t i = 0; i < 5; ++i) {
            std::copy(batch.y0.row(perm[i]).begin(), batch.y0.row(perm[i]).end(), shuffled.y0.row(i).begin());
            std::copy(batch.cond.f_p.row(perm[i]).begin(), batch.cond.f_p.row(perm[i]).end(),
                      shuffled.cond.f_p.row(i).begin());
            std::copy(eps.row(perm[i]).begin(), eps.row(perm[i]).end(), eps_p.row(i).begin());
            t_p[i] = t[perm[i]];
        }
        const double a = training_loss(cfg, m, batch, t, eps).loss;
        const double b = training_loss(cfg, m, shuffled, t_p, eps_p).loss;
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
    DenoiserModel m(mc, 3);
    Rng r(1);
    TrainingBatch empty{Matrix(0, 3), cond_of(0, 2)};
    CHECK_THROWS(training_loss(cfg, m, empty, r));
}

TEST_CASE("denoised_label") {
    const Conditioning c = cond_of(1, 2);
    {
        // alpha_bar ~ 1 at tau = 1.
        const auto cfg = make_cfg(2, NoiseSchedule({1e-12, 0.5}));
        const Matrix y(1, 2, std::vector<double>{0.3, 0.7});
        const Matrix out = denoised_label(cfg, oracle::ConstantNoise({0.4, -0.2}), y, c, 1);
        CHECK(out(0, 0) == doctest::Approx(0.3).epsilon(1e-5));
        CHECK(out(0, 1) == doctest::Approx(0.7).epsilon(1e-5));
    }
    {
        const auto cfg = make_cfg(2, linear_beta_schedule(50, 0.01, 0.2));
        const Matrix y(1, 2, std::vector<double>{0.3, -1.1});
        const Matrix out = denoised_label(cfg, oracle::ConstantNoise({0.0, 0.0}), y, c, 30);
        const double s = std::sqrt(cfg.schedule.alpha_bar(30));
        CHECK(out(0, 0) == doctest::Approx(0.3 / s));
        CHECK(out(0, 1) == doctest::Approx(-1.1 / s));
    }
    {
        Rng rng(3);
        const auto cfg = make_cfg(4, linear_beta_schedule(200, 1e-3, 0.05), 10, FqMode::provided);
        const Matrix y0 = one_hot_rows(std::vector<int>{2}, 4);
        const Matrix f_q = oracle::random_matrix(1, 4, rng, 0.3);
        const Matrix eps = oracle::random_matrix(1, 4, rng);
        const Matrix y_t = forward_sample(cfg, y0, f_q, std::vector<int>{120}, eps);
        const oracle::TrueNoiseOracle truth(cfg, y0, f_q);
        const Matrix out = denoised_label(cfg, truth, y_t, cond_of(1, 2, f_q), 120);
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out(0, j) - y0(0, j)) < 1e-10);
    }
}

TEST_CASE("ddim_step preconditions and determinism") {
    const auto cfg = make_cfg(3, linear_beta_schedule(100));
    const oracle::ConstantNoise model({0.1, 0.2, 0.3});
    const Matrix y(1, 3, std::vector<double>{0.5, 0.1, -0.2});
    const Conditioning c = cond_of(1, 2);
    CHECK(ddim_step(cfg, model, y, c, 50, 20) == ddim_step(cfg, model, y, c, 50, 20));
    CHECK_THROWS_AS(ddim_step(cfg, model, y, c, 20, 20), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(cfg, model, y, c, 20, 30), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(cfg, model, y, c, 101, 30), std::invalid_argument);
}

TEST_CASE("exact inversion with the true-noise oracle") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(2, 10));
        const int T = static_cast<int>(rng.uniform_int(5, 300));
        const bool provided = trial % 2 == 1;
        const auto cfg = make_cfg(n, linear_beta_schedule(T, 1e-4, 0.02 + 0.2 * rng.uniform()), T,
                                  provided ? FqMode::provided : FqMode::zero);
        const std::size_t batch = 3;
        std::vector<int> cls(batch);
        for (int& c : cls) c = static_cast<int>(rng.uniform_int(0, n - 1));
        const Matrix y0 = one_hot_rows(cls, n);
        const Matrix f_q = provided ? oracle::random_matrix(batch, n, rng, 0.5) : Matrix(batch, n);
        const Matrix eps = oracle::random_matrix(batch, n, rng);
        const Matrix y_T = forward_sample(cfg, y0, f_q, std::vector<int>(batch, T), eps);
        const oracle::TrueNoiseOracle truth(cfg, y0, f_q);
        const Conditioning c = cond_of(batch, 1, provided ? f_q : Matrix());
        const Matrix rec = ddim_sample(cfg, truth, c, y_T);
        for (std::size_t i = 0; i < rec.size(); ++i)
            REQUIRE(std::abs(rec.data()[i] - y0.data()[i]) < 1e-8);
    }
}

TEST_CASE("generalized non-Markovian sampler") {
    const auto s = linear_beta_schedule(10, 0.05, 0.3);
    const std::vector<double> y0{0, 1, 0}, f_q{0.1, -0.2, 0.3};
    Rng rng(1);
    std::vector<double> bad(10, 0.0);
    bad[5] = 2.0;
    CHECK_THROWS_AS(generalized_nonmarkovian_sample(s, y0, f_q, bad, rng), std::invalid_argument);
    CHECK_THROWS_AS(generalized_nonmarkovian_sample(s, y0, f_q, std::vector<double>(9, 0.0), rng),
                    std::invalid_argument);

    // sigma = 0: everything below y_T is a function of the y_T draw. Two
    // streams with the same seed agree; the path equals the closed form with
    // the y_T noise carried down.
    Rng a(5), b(5);
    const std::vector<double> zero(10, 0.0);
    const Matrix p1 = generalized_nonmarkovian_sample(s, y0, f_q, zero, a);
    const Matrix p2 = generalized_nonmarkovian_sample(s, y0, f_q, zero, b);
    CHECK(p1 == p2);
    const double sT = std::sqrt(s.alpha_bar(10));
    for (std::size_t j = 0; j < 3; ++j) {
        const double eps = (p1(9, j) - sT * y0[j] - (1 - sT) * f_q[j]) / std::sqrt(1 - s.alpha_bar(10));
        for (int t = 1; t <= 10; ++t) {
            const double st = std::sqrt(s.alpha_bar(t));
            CHECK(p1(t - 1, j) ==
                  doctest::Approx(st * y0[j] + (1 - st) * f_q[j] + std::sqrt(1 - s.alpha_bar(t)) * eps));
        }
    }

    // sigma_t^2 = 1 - abar_{t-1}: the y_t noise does not propagate, so the
    // step mean is the same for any y_t.
    std::vector<double> full(10, 0.0);
    for (int t = 2; t <= 10; ++t) full[t - 1] = std::sqrt(1.0 - s.alpha_bar(t - 1));
    Rng c(8);
    const Matrix p3 = generalized_nonmarkovian_sample(s, y0, f_q, full, c);
    for (double v : p3.data()) CHECK(std::isfinite(v));
}

TEST_CASE("non-Markovian sampler keeps the closed-form marginals (small Monte-Carlo)") {
    const auto s = linear_beta_schedule(10, 0.05, 0.3);
    const std::vector<double> y0{1, 0, 0}, f_q{0.2, 0.1, -0.3};
    std::vector<double> sigma(10, 0.0);
    for (int t = 2; t <= 10; ++t) sigma[t - 1] = std::sqrt(s.posterior_variance(t));
    Rng rng(99);
    const int paths = 20000;
    Matrix sum(10, 3), sq(10, 3);
    for (int p = 0; p < paths; ++p) {
        const Matrix path = generalized_nonmarkovian_sample(s, y0, f_q, sigma, rng);
        for (std::size_t i = 0; i < path.size(); ++i) {
            sum.data()[i] += path.data()[i];
            sq.data()[i] += path.data()[i] * path.data()[i];
        }
    }
    for (int t = 1; t <= 10; ++t) {
        const double st = std::sqrt(s.alpha_bar(t));
        for (std::size_t j = 0; j < 3; ++j) {
            const double mean = sum(t - 1, j) / paths;
            const double var = sq(t - 1, j) / paths - mean * mean;
            CHECK(std::abs(mean - (st * y0[j] + (1 - st) * f_q[j])) < 0.03);
            CHECK(std::abs(var - (1 - s.alpha_bar(t))) < 0.05);
        }
    }
}

TEST_CASE("mle_infer and vote_infer") {
    const auto cfg = make_cfg(4, linear_beta_schedule(1000));
    {
        // A predictor that pushes every y toward class 2.
        const Matrix target = one_hot_rows(std::vector<int>{2, 2, 2}, 4);
        const oracle::TrueNoiseOracle pull(cfg, target, Matrix(3, 4));
        const Conditioning c = cond_of(3, 2);
        const auto r1 = mle_infer(cfg, pull, c);
        const auto r2 = mle_infer(cfg, pull, c);
        CHECK(r1.classes == std::vector<int>{2, 2, 2});
        CHECK(r1.y0_hat == r2.y0_hat);
        Rng rng(3);
        CHECK(vote_infer(cfg, pull, c, 25, [&] { return rng.normal(); }) == std::vector<int>{2, 2, 2});
    }
    {
        // Zero draw coincides with the MLE start.
        const oracle::ConstantNoise model({0.3, -0.1, 0.2, 0.0});
        const Conditioning c = cond_of(5, 2);
        const auto mle = mle_infer(cfg, model, c);
        CHECK(vote_infer(cfg, model, c, 1, [] { return 0.0; }) == mle.classes);
        for (int cls : mle.classes) CHECK((cls >= 0 && cls < 4));
    }
    {
        // Tie-breaking: an all-zero y0_hat resolves to class 0.
        const oracle::ConstantNoise zero({0.0, 0.0, 0.0, 0.0});
        const auto r = mle_infer(cfg, zero, cond_of(2, 2));
        CHECK(r.classes == std::vector<int>{0, 0});
    }
    CHECK_THROWS_AS(vote_infer(cfg, oracle::ConstantNoise({0, 0, 0, 0}), cond_of(1, 2), 0,
                               [] { return 0.0; }),
                    std::invalid_argument);
}

TEST_CASE("resolve_fq honours the mode") {
    auto cfg = make_cfg(3, linear_beta_schedule(10), 5);
    Conditioning c = cond_of(2, 1, Matrix(2, 3, 0.7));
    CHECK(resolve_fq(cfg, c) == Matrix(2, 3));
    cfg.fq_mode = FqMode::provided;
    CHECK(resolve_fq(cfg, c) == Matrix(2, 3, 0.7));
    c.f_q = Matrix();
    CHECK_THROWS(resolve_fq(cfg, c));
}

TEST_CASE("LabelVector invariants") {
    const auto v = LabelVector::one_hot(2, 4);
    CHECK(v.values == std::vector<double>{0, 0, 1, 0});
    CHECK_NOTHROW(v.check());
    CHECK_THROWS(LabelVector::one_hot(4, 4));
    LabelVector bad{{0.5, 0.5}, LabelStage::one_hot};
    CHECK_THROWS(bad.check());
}
