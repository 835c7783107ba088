// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lradiff {

/// Variance schedule of the label diffusion. Steps are indexed 1..T; the
/// accessors take that external index and treat alpha_bar(0) as 1.
class NoiseSchedule {
public:
    /// Builds the cumulative quantities from an explicit beta sequence.
    explicit NoiseSchedule(std::vector<double> betas);

    int steps() const noexcept { return static_cast<int>(beta_.size()); }

    double beta(int t) const;
    double alpha_bar(int t) const;  // t in [0, T]
    double posterior_variance(int t) const;

    std::span<const double> betas() const noexcept { return beta_; }
    std::span<const double> alpha_bars() const noexcept { return alpha_bar_; }

private:
    void check_step(int t) const;

    std::vector<double> beta_;
    std::vector<double> alpha_bar_;      // alpha_bar_[t-1] is the value at step t
    std::vector<double> posterior_var_;
};

NoiseSchedule linear_beta_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02);

/// Free-function form of NoiseSchedule::posterior_variance.
double posterior_variance(const NoiseSchedule& s, int t);

/// Strictly increasing sub-trajectory tau[0] = 1, ..., tau[S-1] = T with
/// uniform rounded spacing. S = 1 yields {T}.
std::vector<int> ddim_trajectory(int steps, int sample_steps);

}  // namespace lradiff
