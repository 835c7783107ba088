// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lradiff/binary_io.hpp"
#include "lradiff/matrix.hpp"
#include "lradiff/rng.hpp"

namespace lradiff {

enum class Metric { euclidean, cosine };

Metric parse_metric(const std::string& name);
std::string to_string(Metric m);

struct Neighbor {
    std::size_t id;
    double distance;

    bool operator==(const Neighbor&) const = default;
};

/// Exact kNN over a fixed feature matrix.
///
/// Euclidean queries abandon a candidate as soon as its partial squared
/// distance can no longer enter the current top k; completed distances are
/// accumulated in coordinate order, so reported values equal a plain scan.
/// Cosine distance is 1 - <q/|q|, x/|x|>, with zero vectors at distance 1.
class RetrievalIndex {
public:
    RetrievalIndex(Matrix features, std::vector<int> labels, Metric metric = Metric::euclidean);

    std::size_t size() const noexcept { return features_.rows(); }
    std::size_t dim() const noexcept { return features_.cols(); }
    Metric metric() const noexcept { return metric_; }
    const Matrix& features() const noexcept { return features_; }
    const std::vector<int>& labels() const noexcept { return labels_; }

    /// The k nearest stored points, sorted by (distance, id).
    std::vector<Neighbor> query(std::span<const double> q, std::size_t k,
                                std::optional<std::size_t> exclude_id = std::nullopt) const;

private:
    Matrix features_;
    Matrix normalized_;  // cosine only
    std::vector<int> labels_;
    Metric metric_;
};

inline RetrievalIndex build_index(Matrix features, std::vector<int> labels,
                                  Metric metric = Metric::euclidean) {
    return RetrievalIndex(std::move(features), std::move(labels), metric);
}

inline std::vector<Neighbor> query_knn(const RetrievalIndex& index, std::span<const double> q,
                                       std::size_t k,
                                       std::optional<std::size_t> exclude_id = std::nullopt) {
    return index.query(q, k, exclude_id);
}

/// A training point's own noisy label followed by its k neighbors' labels.
struct CandidateSet {
    int anchor_label = 0;
    std::vector<int> neighbor_labels;

    std::size_t size() const noexcept { return neighbor_labels.size() + 1; }
    int at(std::size_t i) const { return i == 0 ? anchor_label : neighbor_labels.at(i - 1); }
    void validate(int n_classes) const;
};

/// Candidate sets for every indexed point, each excluding the point itself.
std::vector<CandidateSet> build_candidate_sets(const RetrievalIndex& index, std::size_t k);

/// Uniform draw over the k+1 candidates as a one-hot vector.
std::vector<double> sample_target(const CandidateSet& c, int n_classes, Rng& rng);

/// Average of the k+1 one-hot candidate vectors.
std::vector<double> mean_target(const CandidateSet& c, int n_classes);

/// "LRAC" cache: u32 version, u64 n, u32 k, then n rows of k+1 u32 labels.
Bytes encode_candidate_sets(std::span<const CandidateSet> sets);
std::vector<CandidateSet> decode_candidate_sets(std::span<const std::uint8_t> bytes);

}  // namespace lradiff
