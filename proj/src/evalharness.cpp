// SPDX-License-Identifier: Apache-2.0
#include "lradiff/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "lradiff/parallel.hpp"

namespace lradiff {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(a) +
                                    " vs " + std::to_string(b) + ")");
    if (a == 0) throw std::invalid_argument(std::string(what) + ": empty input");
}

std::string format_value(double v) {
    std::ostringstream os;
    if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 1e15)
        os << std::fixed << std::setprecision(1) << v;
    else
        os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

double accuracy(std::span<const int> pred, std::span<const int> truth) {
    check_lengths(pred.size(), truth.size(), "accuracy");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double noise_rate(std::span<const int> noisy, std::span<const int> clean) {
    check_lengths(noisy.size(), clean.size(), "noise_rate");
    return 1.0 - accuracy(noisy, clean);
}

double candidate_clean_fraction(std::span<const CandidateSet> sets, std::span<const int> clean) {
    check_lengths(sets.size(), clean.size(), "candidate_clean_fraction");
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = 0; j < sets[i].size(); ++j) {
            hits += sets[i].at(j) == clean[i];
            ++total;
        }
    return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<int> knn_classifier(const RetrievalIndex& index, const Matrix& queries, std::size_t k,
                                int n_classes) {
    if (n_classes < 1) throw std::invalid_argument("knn_classifier: n_classes must be >= 1");
    std::vector<int> out(queries.rows());
    parallel_for(queries.rows(), [&](std::size_t begin, std::size_t end) {
        std::vector<int> votes(static_cast<std::size_t>(n_classes));
        for (std::size_t q = begin; q < end; ++q) {
            std::fill(votes.begin(), votes.end(), 0);
            for (const auto& nb : index.query(queries.row(q), k)) {
                const int l = index.labels()[nb.id];
                if (l < 0 || l >= n_classes)
                    throw std::out_of_range("knn_classifier: stored label out of range");
                ++votes[static_cast<std::size_t>(l)];
            }
            out[q] = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
        }
    });
    return out;
}

void MetricsReport::write_key_values(std::ostream& out) const {
    for (const auto& [k, v] : entries_) out << k << '=' << format_value(v) << '\n';
}

void MetricsReport::write_csv(std::ostream& out, bool header) const {
    if (header) {
        for (std::size_t i = 0; i < entries_.size(); ++i) out << (i ? "," : "") << entries_[i].first;
        out << '\n';
    }
    for (std::size_t i = 0; i < entries_.size(); ++i)
        out << (i ? "," : "") << format_value(entries_[i].second);
    out << '\n';
}

}  // namespace lradiff
