// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "lradiff/denoiser.hpp"
#include "lradiff/matrix.hpp"
#include "lradiff/rng.hpp"
#include "lradiff/schedule.hpp"

namespace lradiff {

/// Source of the prior mean f_q(x) of the terminal distribution.
enum class FqMode { zero, provided };

struct DiffusionConfig {
    NoiseSchedule schedule = linear_beta_schedule(1000);
    int sample_steps = 10;
    FqMode fq_mode = FqMode::zero;
    int n_classes = 0;

    void validate() const;
    int steps() const noexcept { return schedule.steps(); }
};

enum class LabelStage { one_hot, diffused, denoised };

struct LabelVector {
    std::vector<double> values;
    LabelStage stage = LabelStage::diffused;

    static LabelVector one_hot(int cls, int n_classes);
    /// Throws unless the stage invariant holds.
    void check() const;
};

/// Per-item conditioning. f_p: B x feat_dim. x_raw: B x raw_dim or empty.
/// f_q: B x n_classes, read only when the config says FqMode::provided.
struct Conditioning {
    Matrix f_p;
    Matrix x_raw;
    Matrix f_q;

    std::size_t size() const noexcept { return f_p.rows(); }
    Conditioning slice(std::size_t begin, std::size_t end) const;
};

/// f_q(x) as used by every diffusion formula: zeros under FqMode::zero.
Matrix resolve_fq(const DiffusionConfig& cfg, const Conditioning& cond);

/// eps_theta as seen by the sampler. Implementations must be pure and
/// row-independent so that inference is safe to split across threads.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual Matrix predict_noise(const Matrix& y_t, const Conditioning& cond,
                                 std::span<const int> t) const = 0;
};

/// Eval-mode DenoiserModel behind the NoisePredictor interface.
class ModelPredictor final : public NoisePredictor {
public:
    explicit ModelPredictor(const DenoiserModel& model) : model_(model) {}
    Matrix predict_noise(const Matrix& y_t, const Conditioning& cond,
                         std::span<const int> t) const override;

private:
    const DenoiserModel& model_;
};

/// y_t = sqrt(abar_t) y0 + (1 - sqrt(abar_t)) f_q + sqrt(1 - abar_t) eps.
std::vector<double> forward_sample(const DiffusionConfig& cfg, std::span<const double> y0,
                                   std::span<const double> f_q, int t, std::span<const double> eps);
Matrix forward_sample(const DiffusionConfig& cfg, const Matrix& y0, const Matrix& f_q,
                      std::span<const int> t, const Matrix& eps);

struct TrainingBatch {
    Matrix y0;  // B x n targets (one-hot, or probability vectors for mean targets)
    Conditioning cond;
};

struct LossEvaluation {
    double loss = 0.0;
    std::vector<int> t;
    Matrix eps;
    Matrix eps_hat;
    Matrix d_output;  // gradient of loss w.r.t. eps_hat
    ForwardCache cache;
};

/// Mean over the batch of ||eps - eps_theta(y_t, ...)||^2 with t uniform on
/// {1..T} and eps standard normal drawn per item from rng.
LossEvaluation training_loss(const DiffusionConfig& cfg, DenoiserModel& model,
                             const TrainingBatch& batch, Rng& rng);

/// Same loss with caller-fixed timesteps and noise.
LossEvaluation training_loss(const DiffusionConfig& cfg, DenoiserModel& model,
                             const TrainingBatch& batch, std::span<const int> t, const Matrix& eps);

/// The denoised-label estimate of y0 from y_tau.
Matrix denoised_label(const DiffusionConfig& cfg, const NoisePredictor& model, const Matrix& y_tau,
                      const Conditioning& cond, int tau);

/// One deterministic generalized-DDIM step from tau_s down to tau_prev.
Matrix ddim_step(const DiffusionConfig& cfg, const NoisePredictor& model, const Matrix& y_tau,
                 const Conditioning& cond, int tau_s, int tau_prev);

/// Runs the reverse process along `trajectory` starting from y_T and returns
/// the final denoised label y0_hat.
Matrix ddim_sample(const DiffusionConfig& cfg, const NoisePredictor& model, const Conditioning& cond,
                   const Matrix& y_T, std::span<const int> trajectory);
Matrix ddim_sample(const DiffusionConfig& cfg, const NoisePredictor& model, const Conditioning& cond,
                   const Matrix& y_T);

/// Draws a full path from the non-Markovian forward process with per-step
/// standard deviations sigma[t-1], t = 1..T (sigma[0] is unused). Row t-1 of
/// the result holds y_t.
Matrix generalized_nonmarkovian_sample(const NoiseSchedule& schedule, std::span<const double> y0,
                                       std::span<const double> f_q, std::span<const double> sigma,
                                       Rng& rng);

struct InferenceResult {
    std::vector<int> classes;
    Matrix y0_hat;
};

/// Maximum-likelihood shortcut: deterministic DDIM from y_T = f_q(x).
InferenceResult mle_infer(const DiffusionConfig& cfg, const NoisePredictor& model,
                          const Conditioning& cond);

/// Majority vote over n_samples DDIM runs from y_T ~ N(f_q, I). Draws come
/// from `standard_normal`, item-major, n_classes per sample.
std::vector<int> vote_infer(const DiffusionConfig& cfg, const NoisePredictor& model,
                            const Conditioning& cond, int n_samples,
                            const std::function<double()>& standard_normal);

}  // namespace lradiff
