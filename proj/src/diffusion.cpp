// SPDX-License-Identifier: Apache-2.0
#include "lradiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "lradiff/parallel.hpp"

namespace lradiff {

void DiffusionConfig::validate() const {
    if (n_classes < 1) throw std::invalid_argument("DiffusionConfig: n_classes must be >= 1");
    if (sample_steps < 1 || sample_steps > schedule.steps())
        throw std::invalid_argument("DiffusionConfig: need 1 <= S <= T");
}

LabelVector LabelVector::one_hot(int cls, int n_classes) {
    if (cls < 0 || cls >= n_classes)
        throw std::out_of_range("one_hot: class " + std::to_string(cls) + " outside [0, " +
                                std::to_string(n_classes) + ")");
    LabelVector v{std::vector<double>(static_cast<std::size_t>(n_classes), 0.0), LabelStage::one_hot};
    v.values[static_cast<std::size_t>(cls)] = 1.0;
    return v;
}

void LabelVector::check() const {
    if (stage != LabelStage::one_hot) return;
    int ones = 0;
    for (double v : values) {
        if (v == 1.0)
            ++ones;
        else if (v != 0.0)
            throw std::invalid_argument("LabelVector: one-hot stage holds a non 0/1 entry");
    }
    if (ones != 1) throw std::invalid_argument("LabelVector: one-hot stage needs exactly one 1");
}

Conditioning Conditioning::slice(std::size_t begin, std::size_t end) const {
    auto rows = [&](const Matrix& m) {
        if (m.empty()) return Matrix(0, m.cols());
        Matrix out(end - begin, m.cols());
        std::copy(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
                  m.data().begin() + static_cast<std::ptrdiff_t>(end * m.cols()), out.data().begin());
        return out;
    };
    return {rows(f_p), rows(x_raw), rows(f_q)};
}

Matrix resolve_fq(const DiffusionConfig& cfg, const Conditioning& cond) {
    const std::size_t batch = cond.size();
    const std::size_t n = static_cast<std::size_t>(cfg.n_classes);
    if (cfg.fq_mode == FqMode::zero) return Matrix(batch, n);
    require_shape(cond.f_q, batch, n, "f_q");
    return cond.f_q;
}

Matrix ModelPredictor::predict_noise(const Matrix& y_t, const Conditioning& cond,
                                     std::span<const int> t) const {
    const Matrix* raw = cond.x_raw.empty() ? nullptr : &cond.x_raw;
    return model_.forward_eval(DenoiserInput{y_t, cond.f_p, raw, t});
}

namespace {

struct Coeffs {
    double signal, mean, noise;  // sqrt(abar), 1 - sqrt(abar), sqrt(1 - abar)
};

Coeffs coeffs(const NoiseSchedule& s, int t) {
    const double ab = s.alpha_bar(t);
    const double sq = std::sqrt(ab);
    return {sq, 1.0 - sq, std::sqrt(1.0 - ab)};
}

void check_pair(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError(std::string(what) + ": shape mismatch");
}

}  // namespace

std::vector<double> forward_sample(const DiffusionConfig& cfg, std::span<const double> y0,
                                   std::span<const double> f_q, int t, std::span<const double> eps) {
    if (y0.size() != f_q.size() || y0.size() != eps.size() ||
        y0.size() != static_cast<std::size_t>(cfg.n_classes))
        throw DimensionError("forward_sample: vectors must all have n_classes entries");
    const Coeffs c = coeffs(cfg.schedule, t);
    std::vector<double> y(y0.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = c.signal * y0[i] + c.mean * f_q[i] + c.noise * eps[i];
    return y;
}

Matrix forward_sample(const DiffusionConfig& cfg, const Matrix& y0, const Matrix& f_q,
                      std::span<const int> t, const Matrix& eps) {
    check_pair(y0, f_q, "forward_sample");
    check_pair(y0, eps, "forward_sample");
    if (t.size() != y0.rows()) throw DimensionError("forward_sample: one timestep per row");
    Matrix y(y0.rows(), y0.cols());
    for (std::size_t r = 0; r < y0.rows(); ++r) {
        const Coeffs c = coeffs(cfg.schedule, t[r]);
        for (std::size_t j = 0; j < y0.cols(); ++j)
            y(r, j) = c.signal * y0(r, j) + c.mean * f_q(r, j) + c.noise * eps(r, j);
    }
    return y;
}

LossEvaluation training_loss(const DiffusionConfig& cfg, DenoiserModel& model,
                             const TrainingBatch& batch, std::span<const int> t, const Matrix& eps) {
    const std::size_t b = batch.y0.rows();
    if (b == 0) throw std::invalid_argument("training_loss: empty batch");
    if (batch.y0.cols() != static_cast<std::size_t>(cfg.n_classes))
        throw DimensionError("training_loss: target width must equal n_classes");
    const Matrix f_q = resolve_fq(cfg, batch.cond);
    LossEvaluation ev;
    ev.t.assign(t.begin(), t.end());
    ev.eps = eps;
    const Matrix y_t = forward_sample(cfg, batch.y0, f_q, t, eps);
    const Matrix* raw = batch.cond.x_raw.empty() ? nullptr : &batch.cond.x_raw;
    ev.eps_hat = model.forward_train(DenoiserInput{y_t, batch.cond.f_p, raw, ev.t}, ev.cache);
    ev.d_output = Matrix(b, eps.cols());
    double total = 0.0;
    const double scale = 2.0 / static_cast<double>(b);
    for (std::size_t r = 0; r < b; ++r) {
        double item = 0.0;
        for (std::size_t j = 0; j < eps.cols(); ++j) {
            const double diff = ev.eps_hat(r, j) - eps(r, j);
            item += diff * diff;
            ev.d_output(r, j) = scale * diff;
        }
        total += item;
    }
    ev.loss = total / static_cast<double>(b);
    return ev;
}

LossEvaluation training_loss(const DiffusionConfig& cfg, DenoiserModel& model,
                             const TrainingBatch& batch, Rng& rng) {
    const std::size_t b = batch.y0.rows();
    const std::size_t n = static_cast<std::size_t>(cfg.n_classes);
    std::vector<int> t(b);
    Matrix eps(b, n);
    for (std::size_t r = 0; r < b; ++r) {
        t[r] = static_cast<int>(rng.uniform_int(1, cfg.steps()));
        for (std::size_t j = 0; j < n; ++j) eps(r, j) = rng.normal();
    }
    return training_loss(cfg, model, batch, t, eps);
}

namespace {

Matrix denoise_with(const DiffusionConfig& cfg, const Matrix& y_tau, const Matrix& f_q,
                    const Matrix& eps_hat, int tau) {
    const Coeffs c = coeffs(cfg.schedule, tau);
    Matrix y0(y_tau.rows(), y_tau.cols());
    for (std::size_t i = 0; i < y0.size(); ++i)
        y0.data()[i] =
            (y_tau.data()[i] - c.mean * f_q.data()[i] - c.noise * eps_hat.data()[i]) / c.signal;
    return y0;
}

Matrix predict(const NoisePredictor& model, const Matrix& y, const Conditioning& cond, int tau) {
    const std::vector<int> t(y.rows(), tau);
    Matrix eps = model.predict_noise(y, cond, t);
    check_pair(y, eps, "noise predictor");
    return eps;
}

// DDIM update with precomputed f_q and eps_hat.
Matrix step_with(const DiffusionConfig& cfg, const Matrix& y_tau, const Matrix& f_q,
                 const Matrix& eps_hat, int tau_s, int tau_prev) {
    Matrix y0 = denoise_with(cfg, y_tau, f_q, eps_hat, tau_s);
    const Coeffs c = coeffs(cfg.schedule, tau_prev);
    for (std::size_t i = 0; i < y0.size(); ++i)
        y0.data()[i] = c.signal * y0.data()[i] + c.mean * f_q.data()[i] + c.noise * eps_hat.data()[i];
    return y0;
}

void check_shape(const DiffusionConfig& cfg, const Matrix& y, const Conditioning& cond) {
    if (y.cols() != static_cast<std::size_t>(cfg.n_classes) || y.rows() != cond.size())
        throw DimensionError("label batch must be B x n_classes with B matching the conditioning");
}

}  // namespace

Matrix denoised_label(const DiffusionConfig& cfg, const NoisePredictor& model, const Matrix& y_tau,
                      const Conditioning& cond, int tau) {
    check_shape(cfg, y_tau, cond);
    const double ab = cfg.schedule.alpha_bar(tau);
    if (!(ab > 0.0 && ab <= 1.0)) throw std::domain_error("denoised_label: alpha_bar outside (0,1]");
    return denoise_with(cfg, y_tau, resolve_fq(cfg, cond), predict(model, y_tau, cond, tau), tau);
}

Matrix ddim_step(const DiffusionConfig& cfg, const NoisePredictor& model, const Matrix& y_tau,
                 const Conditioning& cond, int tau_s, int tau_prev) {
    if (!(tau_prev < tau_s) || tau_prev < 1 || tau_s > cfg.steps())
        throw std::invalid_argument("ddim_step: need 1 <= tau_prev < tau_s <= T (got " +
                                    std::to_string(tau_prev) + ", " + std::to_string(tau_s) + ")");
    check_shape(cfg, y_tau, cond);
    return step_with(cfg, y_tau, resolve_fq(cfg, cond), predict(model, y_tau, cond, tau_s), tau_s,
                     tau_prev);
}

Matrix ddim_sample(const DiffusionConfig& cfg, const NoisePredictor& model, const Conditioning& cond,
                   const Matrix& y_T, std::span<const int> trajectory) {
    if (trajectory.empty()) throw std::invalid_argument("ddim_sample: empty trajectory");
    for (std::size_t s = 1; s < trajectory.size(); ++s)
        if (trajectory[s] <= trajectory[s - 1])
            throw std::invalid_argument("ddim_sample: trajectory must be strictly increasing");
    check_shape(cfg, y_T, cond);
    const Matrix f_q = resolve_fq(cfg, cond);
    Matrix y = y_T;
    for (std::size_t s = trajectory.size() - 1; s > 0; --s) {
        const Matrix eps = predict(model, y, cond, trajectory[s]);
        y = step_with(cfg, y, f_q, eps, trajectory[s], trajectory[s - 1]);
    }
    const Matrix eps = predict(model, y, cond, trajectory.front());
    return denoise_with(cfg, y, f_q, eps, trajectory.front());
}

Matrix ddim_sample(const DiffusionConfig& cfg, const NoisePredictor& model, const Conditioning& cond,
                   const Matrix& y_T) {
    const auto tau = ddim_trajectory(cfg.steps(), cfg.sample_steps);
    return ddim_sample(cfg, model, cond, y_T, tau);
}

Matrix generalized_nonmarkovian_sample(const NoiseSchedule& schedule, std::span<const double> y0,
                                       std::span<const double> f_q, std::span<const double> sigma,
                                       Rng& rng) {
    const int T = schedule.steps();
    const std::size_t n = y0.size();
    if (f_q.size() != n) throw DimensionError("nonmarkovian sample: y0 and f_q sizes differ");
    if (sigma.size() != static_cast<std::size_t>(T))
        throw std::invalid_argument("nonmarkovian sample: need one sigma per step");
    std::vector<double> residual(static_cast<std::size_t>(T), 0.0);
    for (int t = 2; t <= T; ++t) {
        const double bound = 1.0 - schedule.alpha_bar(t - 1);
        const double s2 = sigma[t - 1] * sigma[t - 1];
        if (!(sigma[t - 1] >= 0.0) || s2 > bound * (1.0 + 1e-12))
            throw std::invalid_argument("nonmarkovian sample: sigma_t^2 must lie in [0, 1 - alpha_bar_{t-1}] at t=" +
                                        std::to_string(t));
        residual[t - 1] = std::sqrt(std::max(0.0, bound - s2));
    }

    Matrix path(static_cast<std::size_t>(T), n);
    {
        const Coeffs c = coeffs(schedule, T);
        for (std::size_t j = 0; j < n; ++j)
            path(T - 1, j) = c.signal * y0[j] + c.mean * f_q[j] + c.noise * rng.normal();
    }
    for (int t = T; t >= 2; --t) {
        const Coeffs now = coeffs(schedule, t);
        const Coeffs prev = coeffs(schedule, t - 1);
        for (std::size_t j = 0; j < n; ++j) {
            const double eps_tilde =
                (path(t - 1, j) - now.signal * y0[j] - now.mean * f_q[j]) / now.noise;
            const double mean = prev.signal * y0[j] + prev.mean * f_q[j] + residual[t - 1] * eps_tilde;
            const double s = sigma[t - 1];
            path(t - 2, j) = s > 0.0 ? mean + s * rng.normal() : mean;
        }
    }
    return path;
}

InferenceResult mle_infer(const DiffusionConfig& cfg, const NoisePredictor& model,
                          const Conditioning& cond) {
    cfg.validate();
    const std::size_t batch = cond.size();
    const std::size_t n = static_cast<std::size_t>(cfg.n_classes);
    const auto tau = ddim_trajectory(cfg.steps(), cfg.sample_steps);
    InferenceResult result{std::vector<int>(batch), Matrix(batch, n)};
    parallel_for(batch, [&](std::size_t begin, std::size_t end) {
        const Conditioning part = cond.slice(begin, end);
        const Matrix y0 = ddim_sample(cfg, model, part, resolve_fq(cfg, part), tau);
        for (std::size_t r = 0; r < y0.rows(); ++r) {
            std::copy(y0.row(r).begin(), y0.row(r).end(), result.y0_hat.row(begin + r).begin());
            result.classes[begin + r] = static_cast<int>(argmax(y0.row(r)));
        }
    }, 256);
    return result;
}

std::vector<int> vote_infer(const DiffusionConfig& cfg, const NoisePredictor& model,
                            const Conditioning& cond, int n_samples,
                            const std::function<double()>& standard_normal) {
    cfg.validate();
    if (n_samples < 1) throw std::invalid_argument("vote_infer: n_samples must be >= 1");
    const std::size_t batch = cond.size();
    const std::size_t n = static_cast<std::size_t>(cfg.n_classes);
    const auto samples = static_cast<std::size_t>(n_samples);
    const Matrix f_q = resolve_fq(cfg, cond);

    // starts[s] holds the y_T batch of sample s.
    std::vector<Matrix> starts(samples, Matrix(batch, n));
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t s = 0; s < samples; ++s)
            for (std::size_t j = 0; j < n; ++j) starts[s](i, j) = f_q(i, j) + standard_normal();

    const auto tau = ddim_trajectory(cfg.steps(), cfg.sample_steps);
    std::vector<int> votes(batch * n, 0);
    parallel_for(batch, [&](std::size_t begin, std::size_t end) {
        const Conditioning part = cond.slice(begin, end);
        for (std::size_t s = 0; s < samples; ++s) {
            Matrix y_T(end - begin, n);
            for (std::size_t r = begin; r < end; ++r)
                std::copy(starts[s].row(r).begin(), starts[s].row(r).end(), y_T.row(r - begin).begin());
            const Matrix y0 = ddim_sample(cfg, model, part, y_T, tau);
            for (std::size_t r = 0; r < y0.rows(); ++r) ++votes[(begin + r) * n + argmax(y0.row(r))];
        }
    }, 256);

    std::vector<int> classes(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const auto first = votes.begin() + static_cast<std::ptrdiff_t>(i * n);
        classes[i] = static_cast<int>(std::max_element(first, first + static_cast<std::ptrdiff_t>(n)) - first);
    }
    return classes;
}

}  // namespace lradiff
