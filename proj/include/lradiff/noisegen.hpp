// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "lradiff/matrix.hpp"
#include "lradiff/rng.hpp"

namespace lradiff {

enum class TransitionKind { uniform, asymmetric };

/// Row-stochastic label corruption matrix: P(i, j) = Pr[noisy = j | clean = i].
struct TransitionMatrix {
    Matrix probs;
    TransitionKind kind = TransitionKind::uniform;

    int n_classes() const noexcept { return static_cast<int>(probs.rows()); }
};

TransitionMatrix uniform_matrix(int n_classes, double tau);

/// Class i flips to mapping[i] with probability tau.
TransitionMatrix asymmetric_matrix(int n_classes, double tau, std::span<const int> mapping);

/// Resamples every label independently from its row of P.
std::vector<int> apply_transition(std::span<const int> labels, const TransitionMatrix& P, Rng& rng);

/// Clean-classifier posterior eta(x) per point and the noise factor c.
struct PosteriorTable {
    Matrix eta;
    double noise_factor = 0.0;

    void validate() const;
};

/// Most likely and second most likely class of a posterior row (ties to lower index).
std::pair<int, int> top_two(std::span<const double> eta_row);

/// Flip probability -(c/2)(eta_u - eta_s)^2 + c/2, clipped to [0, 1].
double pmd_flip_probability(std::span<const double> eta_row, double c);

struct PmdResult {
    std::vector<int> initial_labels;  // argmax eta(x)
    std::vector<int> noisy_labels;
};

/// Labels each point with its most likely class and flips it to the second
/// most likely class with the PMD probability.
PmdResult pmd_corrupt(const PosteriorTable& table, Rng& rng);

/// Mean PMD flip probability over the table at noise factor c.
double expected_pmd_rate(const PosteriorTable& table, double c);

/// Supremum of expected_pmd_rate over c (every point with a nonzero margin gap flips).
double max_pmd_rate(const PosteriorTable& table);

/// Bisection for the c whose expected flip fraction is within `tol` of target.
double calibrate_noise_factor(const PosteriorTable& table, double target_rate, double tol = 1e-4);

}  // namespace lradiff
