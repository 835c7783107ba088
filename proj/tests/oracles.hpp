// SPDX-License-Identifier: Apache-2.0
// Independent reference computations shared by the unit and acceptance suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "lradiff/denoiser.hpp"
#include "lradiff/diffusion.hpp"
#include "lradiff/retrieval.hpp"
#include "lradiff/rng.hpp"

namespace lradiff::oracle {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

// ---------------------------------------------------------------------------
// Central finite differences on the train-mode MSE loss.

struct GradCheckCase {
    DenoiserConfig cfg;
    Matrix y_t, f_p, x_raw, target;
    std::vector<int> t;
};

inline GradCheckCase random_gradcheck_case(Rng& rng, bool with_raw) {
    GradCheckCase c;
    c.cfg.n_classes = 3;
    c.cfg.feat_dim = static_cast<int>(rng.uniform_int(2, 5));
    c.cfg.raw_dim = with_raw ? static_cast<int>(rng.uniform_int(1, 4)) : 0;
    c.cfg.hidden = 8;
    c.cfg.time_embed_dim = 6;
    c.cfg.blocks = 2;
    c.cfg.max_t = 50;
    const std::size_t batch = 4;
    c.y_t = random_matrix(batch, 3, rng);
    c.f_p = random_matrix(batch, static_cast<std::size_t>(c.cfg.feat_dim), rng);
    if (with_raw) c.x_raw = random_matrix(batch, static_cast<std::size_t>(c.cfg.raw_dim), rng);
    c.target = random_matrix(batch, 3, rng);
    for (std::size_t i = 0; i < batch; ++i) c.t.push_back(static_cast<int>(rng.uniform_int(1, 50)));
    return c;
}

inline double mse_loss(DenoiserModel& model, const GradCheckCase& c, Matrix* d_out,
                       ForwardCache* cache_out) {
    ForwardCache cache;
    const Matrix* raw = c.x_raw.empty() ? nullptr : &c.x_raw;
    const Matrix out = model.forward_train(DenoiserInput{c.y_t, c.f_p, raw, c.t}, cache);
    const double b = static_cast<double>(out.rows());
    double loss = 0.0;
    if (d_out) *d_out = Matrix(out.rows(), out.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double diff = out.data()[i] - c.target.data()[i];
        loss += diff * diff / b;
        if (d_out) d_out->data()[i] = 2.0 * diff / b;
    }
    if (cache_out) *cache_out = std::move(cache);
    return loss;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor); entries smaller than the
/// floor are compared in absolute terms.
inline GradCheckResult finite_difference_check(DenoiserModel& model, const GradCheckCase& c,
                                               double h = 1e-5, double floor = 1e-6) {
    Matrix d_out;
    ForwardCache cache;
    mse_loss(model, c, &d_out, &cache);
    const Gradients analytic = model.backward(cache, d_out);
    GradCheckResult res;
    auto& params = model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            double& w = params[p].data()[i];
            const double saved = w;
            w = saved + h;
            const double up = mse_loss(model, c, nullptr, nullptr);
            w = saved - h;
            const double down = mse_loss(model, c, nullptr, nullptr);
            w = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[p].data()[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            res.max_rel_error = std::max(res.max_rel_error, std::abs(a - numeric) / denom);
            ++res.checked;
        }
    }
    model.mark_modified();
    return res;
}

// ---------------------------------------------------------------------------
// Noise predictor that knows y0 and returns the exact eps behind y_t.

class TrueNoiseOracle final : public NoisePredictor {
public:
    TrueNoiseOracle(const DiffusionConfig& cfg, Matrix y0, Matrix f_q)
        : cfg_(cfg), y0_(std::move(y0)), f_q_(std::move(f_q)) {}

    Matrix predict_noise(const Matrix& y_t, const Conditioning&,
                         std::span<const int> t) const override {
        Matrix eps(y_t.rows(), y_t.cols());
        for (std::size_t r = 0; r < y_t.rows(); ++r) {
            const double ab = cfg_.schedule.alpha_bar(t[r]);
            const double sq = std::sqrt(ab);
            for (std::size_t j = 0; j < y_t.cols(); ++j)
                eps(r, j) = (y_t(r, j) - sq * y0_(r, j) - (1.0 - sq) * f_q_(r, j)) / std::sqrt(1.0 - ab);
        }
        return eps;
    }

private:
    const DiffusionConfig& cfg_;
    Matrix y0_, f_q_;
};

/// Predictor returning a constant matrix row for every item.
class ConstantNoise final : public NoisePredictor {
public:
    explicit ConstantNoise(std::vector<double> value) : value_(std::move(value)) {}
    Matrix predict_noise(const Matrix& y_t, const Conditioning&, std::span<const int>) const override {
        Matrix out(y_t.rows(), y_t.cols());
        for (std::size_t r = 0; r < out.rows(); ++r)
            std::copy(value_.begin(), value_.end(), out.row(r).begin());
        return out;
    }

private:
    std::vector<double> value_;
};

// ---------------------------------------------------------------------------
// Exhaustive kNN.

inline std::vector<Neighbor> brute_force_knn(const Matrix& data, std::span<const double> q,
                                             std::size_t k, Metric metric,
                                             std::ptrdiff_t exclude = -1) {
    std::vector<Neighbor> all;
    double qn = 0.0;
    for (double v : q) qn += v * v;
    qn = std::sqrt(qn);
    for (std::size_t i = 0; i < data.rows(); ++i) {
        if (static_cast<std::ptrdiff_t>(i) == exclude) continue;
        const auto x = data.row(i);
        double dist = 0.0;
        if (metric == Metric::euclidean) {
            double sq = 0.0;
            for (std::size_t j = 0; j < q.size(); ++j) sq += (q[j] - x[j]) * (q[j] - x[j]);
            dist = std::sqrt(sq);
        } else {
            double xn = 0.0;
            for (double v : x) xn += v * v;
            xn = std::sqrt(xn);
            double s = 0.0;
            for (std::size_t j = 0; j < q.size(); ++j) {
                const double a = qn > 0.0 ? q[j] / qn : q[j];
                const double b = xn > 0.0 ? x[j] / xn : x[j];
                s += a * b;
            }
            dist = 1.0 - s;
        }
        all.push_back({i, dist});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
    });
    all.resize(k);
    return all;
}

inline std::vector<int> brute_force_knn_vote(const Matrix& data, std::span<const int> labels,
                                             const Matrix& queries, std::size_t k, int n_classes,
                                             Metric metric) {
    std::vector<int> out;
    for (std::size_t q = 0; q < queries.rows(); ++q) {
        std::vector<int> votes(static_cast<std::size_t>(n_classes), 0);
        for (const auto& nb : brute_force_knn(data, queries.row(q), k, metric)) ++votes[labels[nb.id]];
        int best = 0;
        for (int c = 1; c < n_classes; ++c)
            if (votes[c] > votes[best]) best = c;
        out.push_back(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bayes accuracy of an equal-prior isotropic Gaussian mixture in 2-D by
// midpoint quadrature of max_c N(x; mu_c, sigma^2 I) / C.

inline double bayes_accuracy_2d(const Matrix& means, double sigma, double step = 0.02) {
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    for (std::size_t c = 0; c < means.rows(); ++c) {
        lo_x = std::min(lo_x, means(c, 0));
        hi_x = std::max(hi_x, means(c, 0));
        lo_y = std::min(lo_y, means(c, 1));
        hi_y = std::max(hi_y, means(c, 1));
    }
    const double pad = 8.0 * sigma;
    const double norm = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
    double total = 0.0;
    for (double x = lo_x - pad + step / 2; x < hi_x + pad; x += step)
        for (double y = lo_y - pad + step / 2; y < hi_y + pad; y += step) {
            double best = 0.0;
            for (std::size_t c = 0; c < means.rows(); ++c) {
                const double dx = x - means(c, 0), dy = y - means(c, 1);
                best = std::max(best, norm * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
            }
            total += best;
        }
    return total * step * step / static_cast<double>(means.rows());
}

/// Binomial standard deviation of an observed fraction.
inline double binomial_sigma(double p, double n) { return std::sqrt(p * (1.0 - p) / n); }

}  // namespace lradiff::oracle
