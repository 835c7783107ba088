// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lradiff/matrix.hpp"
#include "lradiff/retrieval.hpp"

namespace lradiff {

double accuracy(std::span<const int> pred, std::span<const int> truth);

/// Fraction of positions where the two label vectors differ.
double noise_rate(std::span<const int> noisy, std::span<const int> clean);

/// Over every entry of every candidate set, the fraction equal to that
/// point's clean label.
double candidate_clean_fraction(std::span<const CandidateSet> sets, std::span<const int> clean);

/// Majority label among the k nearest indexed points (no self-exclusion);
/// ties go to the lowest class id.
std::vector<int> knn_classifier(const RetrievalIndex& index, const Matrix& queries, std::size_t k,
                                int n_classes);

/// Ordered metric list rendered as key=value lines or a one-row CSV table.
class MetricsReport {
public:
    void add(std::string key, double value) { entries_.emplace_back(std::move(key), value); }
    const std::vector<std::pair<std::string, double>>& entries() const noexcept { return entries_; }

    void write_key_values(std::ostream& out) const;
    void write_csv(std::ostream& out, bool header = true) const;

private:
    std::vector<std::pair<std::string, double>> entries_;
};

}  // namespace lradiff
