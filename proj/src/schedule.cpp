// SPDX-License-Identifier: Apache-2.0
#include "lradiff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lradiff {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) throw std::invalid_argument("NoiseSchedule: at least one step required");
    alpha_bar_.resize(beta_.size());
    posterior_var_.resize(beta_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
        const double b = beta_[i];
        if (!(b > 0.0 && b < 1.0))
            throw std::invalid_argument("NoiseSchedule: beta must lie in (0,1), got " +
                                        std::to_string(b) + " at step " + std::to_string(i + 1));
        const double prev = prod;
        prod *= 1.0 - b;
        alpha_bar_[i] = prod;
        posterior_var_[i] = (1.0 - prev) / (1.0 - prod) * b;
    }
}

void NoiseSchedule::check_step(int t) const {
    if (t < 1 || t > steps())
        throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " +
                                std::to_string(steps()) + "]");
}

double NoiseSchedule::beta(int t) const {
    check_step(t);
    return beta_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    check_step(t);
    return alpha_bar_[t - 1];
}

double NoiseSchedule::posterior_variance(int t) const {
    check_step(t);
    return posterior_var_[t - 1];
}

double posterior_variance(const NoiseSchedule& s, int t) { return s.posterior_variance(t); }

NoiseSchedule linear_beta_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("linear_beta_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("linear_beta_schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    if (steps == 1) {
        betas[0] = beta_start;
    } else {
        for (int i = 0; i < steps; ++i)
            betas[i] = beta_start + (beta_end - beta_start) * i / static_cast<double>(steps - 1);
    }
    return NoiseSchedule(std::move(betas));
}

std::vector<int> ddim_trajectory(int steps, int sample_steps) {
    if (sample_steps < 1 || sample_steps > steps)
        throw std::invalid_argument("ddim_trajectory: need 1 <= S <= T (S=" +
                                    std::to_string(sample_steps) + ", T=" +
                                    std::to_string(steps) + ")");
    if (sample_steps == 1) return {steps};
    std::vector<int> tau(static_cast<std::size_t>(sample_steps));
    const double stride = static_cast<double>(steps - 1) / (sample_steps - 1);
    for (int s = 0; s < sample_steps; ++s)
        tau[s] = static_cast<int>(std::lround(1.0 + s * stride));
    return tau;
}

}  // namespace lradiff
