// SPDX-License-Identifier: Apache-2.0
#include "lradiff/noisegen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lradiff {

namespace {

void check_tau(double tau) {
    if (!(tau >= 0.0 && tau < 1.0))
        throw std::invalid_argument("noise rate tau must lie in [0, 1), got " + std::to_string(tau));
}

}  // namespace

TransitionMatrix uniform_matrix(int n_classes, double tau) {
    if (n_classes < 2) throw std::invalid_argument("uniform_matrix: need at least 2 classes");
    check_tau(tau);
    const auto n = static_cast<std::size_t>(n_classes);
    TransitionMatrix tm{Matrix(n, n, tau / (n_classes - 1)), TransitionKind::uniform};
    for (std::size_t i = 0; i < n; ++i) tm.probs(i, i) = 1.0 - tau;
    return tm;
}

TransitionMatrix asymmetric_matrix(int n_classes, double tau, std::span<const int> mapping) {
    if (n_classes < 2) throw std::invalid_argument("asymmetric_matrix: need at least 2 classes");
    check_tau(tau);
    if (mapping.size() != static_cast<std::size_t>(n_classes))
        throw std::invalid_argument("asymmetric_matrix: mapping needs one target per class");
    const auto n = static_cast<std::size_t>(n_classes);
    TransitionMatrix tm{Matrix(n, n, 0.0), TransitionKind::asymmetric};
    for (std::size_t i = 0; i < n; ++i) {
        const int j = mapping[i];
        if (j < 0 || j >= n_classes)
            throw std::invalid_argument("asymmetric_matrix: mapping target out of range");
        if (static_cast<std::size_t>(j) == i)
            throw std::invalid_argument("asymmetric_matrix: mapping has fixed point at class " +
                                        std::to_string(i));
        tm.probs(i, i) = 1.0 - tau;
        tm.probs(i, static_cast<std::size_t>(j)) += tau;
    }
    return tm;
}

std::vector<int> apply_transition(std::span<const int> labels, const TransitionMatrix& P, Rng& rng) {
    const int n = P.n_classes();
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= n)
            throw std::out_of_range("apply_transition: label " + std::to_string(y) + " out of range");
        const auto row = P.probs.row(static_cast<std::size_t>(y));
        const double u = rng.uniform();
        double cum = 0.0;
        int pick = y;
        for (int j = 0; j < n; ++j) {
            if (row[j] <= 0.0) continue;
            cum += row[j];
            pick = j;
            if (u < cum) break;
        }
        out[i] = pick;
    }
    return out;
}

void PosteriorTable::validate() const {
    if (eta.cols() < 2) throw std::invalid_argument("PosteriorTable: need at least 2 classes");
    for (std::size_t r = 0; r < eta.rows(); ++r) {
        double sum = 0.0;
        for (double v : eta.row(r)) {
            if (!(v >= 0.0)) throw std::invalid_argument("PosteriorTable: negative or NaN entry");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("PosteriorTable: row " + std::to_string(r) +
                                        " does not sum to 1");
    }
}

std::pair<int, int> top_two(std::span<const double> eta_row) {
    int u = 0;
    for (std::size_t j = 1; j < eta_row.size(); ++j)
        if (eta_row[j] > eta_row[static_cast<std::size_t>(u)]) u = static_cast<int>(j);
    int s = -1;
    for (std::size_t j = 0; j < eta_row.size(); ++j) {
        if (static_cast<int>(j) == u) continue;
        if (s < 0 || eta_row[j] > eta_row[static_cast<std::size_t>(s)]) s = static_cast<int>(j);
    }
    return {u, s};
}

double pmd_flip_probability(std::span<const double> eta_row, double c) {
    const auto [u, s] = top_two(eta_row);
    const double margin = eta_row[static_cast<std::size_t>(u)] - eta_row[static_cast<std::size_t>(s)];
    const double p = -0.5 * c * margin * margin + 0.5 * c;
    return std::clamp(p, 0.0, 1.0);
}

PmdResult pmd_corrupt(const PosteriorTable& table, Rng& rng) {
    table.validate();
    if (table.noise_factor < 0.0) throw std::invalid_argument("pmd_corrupt: negative noise factor");
    PmdResult res;
    res.initial_labels.resize(table.eta.rows());
    res.noisy_labels.resize(table.eta.rows());
    for (std::size_t r = 0; r < table.eta.rows(); ++r) {
        const auto row = table.eta.row(r);
        const auto [u, s] = top_two(row);
        const double p = pmd_flip_probability(row, table.noise_factor);
        res.initial_labels[r] = u;
        res.noisy_labels[r] = rng.uniform() < p ? s : u;
    }
    return res;
}

double expected_pmd_rate(const PosteriorTable& table, double c) {
    if (table.eta.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < table.eta.rows(); ++r) total += pmd_flip_probability(table.eta.row(r), c);
    return total / static_cast<double>(table.eta.rows());
}

double max_pmd_rate(const PosteriorTable& table) {
    if (table.eta.rows() == 0) return 0.0;
    std::size_t flippable = 0;
    for (std::size_t r = 0; r < table.eta.rows(); ++r) {
        const auto row = table.eta.row(r);
        const auto [u, s] = top_two(row);
        if (row[static_cast<std::size_t>(u)] - row[static_cast<std::size_t>(s)] < 1.0) ++flippable;
    }
    return static_cast<double>(flippable) / static_cast<double>(table.eta.rows());
}

double calibrate_noise_factor(const PosteriorTable& table, double target_rate, double tol) {
    table.validate();
    if (target_rate == 0.0) return 0.0;
    if (!(target_rate > 0.0) || !(target_rate < max_pmd_rate(table)))
        throw std::invalid_argument("calibrate_noise_factor: target rate " +
                                    std::to_string(target_rate) + " unreachable (max " +
                                    std::to_string(max_pmd_rate(table)) + ")");
    double lo = 0.0, hi = 2.0;
    while (expected_pmd_rate(table, hi) < target_rate) {
        hi *= 2.0;
        if (hi > 1e300) throw std::invalid_argument("calibrate_noise_factor: target unreachable");
    }
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        const double rate = expected_pmd_rate(table, mid);
        if (std::abs(rate - target_rate) <= tol * 1e-3) return mid;
        (rate < target_rate ? lo : hi) = mid;
    }
    const double c = 0.5 * (lo + hi);
    if (std::abs(expected_pmd_rate(table, c) - target_rate) > tol)
        throw std::runtime_error("calibrate_noise_factor: bisection did not converge");
    return c;
}

}  // namespace lradiff
