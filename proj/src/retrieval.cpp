// SPDX-License-Identifier: Apache-2.0
#include "lradiff/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

#include "lradiff/parallel.hpp"

namespace lradiff {

namespace {
constexpr std::uint32_t kCandidateVersion = 1;

struct Worse {
    // Max-heap on (distance, id): the top is the current k-th best.
    bool operator()(const Neighbor& a, const Neighbor& b) const {
        return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
    }
};
}  // namespace

Metric parse_metric(const std::string& name) {
    if (name == "euclidean") return Metric::euclidean;
    if (name == "cosine") return Metric::cosine;
    throw std::invalid_argument("unknown metric '" + name + "' (expected euclidean|cosine)");
}

std::string to_string(Metric m) { return m == Metric::euclidean ? "euclidean" : "cosine"; }

RetrievalIndex::RetrievalIndex(Matrix features, std::vector<int> labels, Metric metric)
    : features_(std::move(features)), labels_(std::move(labels)), metric_(metric) {
    if (features_.rows() == 0) throw std::invalid_argument("build_index: empty dataset");
    if (features_.cols() == 0) throw std::invalid_argument("build_index: zero-dimensional features");
    if (labels_.size() != features_.rows())
        throw std::invalid_argument("build_index: " + std::to_string(labels_.size()) +
                                    " labels for " + std::to_string(features_.rows()) + " rows");
    if (metric_ == Metric::cosine) {
        normalized_ = features_;
        for (std::size_t r = 0; r < normalized_.rows(); ++r) {
            auto row = normalized_.row(r);
            double sq = 0.0;
            for (double v : row) sq += v * v;
            const double norm = std::sqrt(sq);
            if (norm > 0.0)
                for (double& v : row) v /= norm;
        }
    }
}

std::vector<Neighbor> RetrievalIndex::query(std::span<const double> q, std::size_t k,
                                            std::optional<std::size_t> exclude_id) const {
    if (q.size() != dim())
        throw std::invalid_argument("query_knn: query has " + std::to_string(q.size()) +
                                    " dims, index has " + std::to_string(dim()));
    const std::size_t available = size() - (exclude_id && *exclude_id < size() ? 1 : 0);
    if (k < 1 || k > available)
        throw std::invalid_argument("query_knn: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(available) + "]");

    std::priority_queue<Neighbor, std::vector<Neighbor>, Worse> heap;
    const std::size_t d = dim();

    if (metric_ == Metric::euclidean) {
        double bound = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < size(); ++i) {
            if (exclude_id && i == *exclude_id) continue;
            const double* x = features_.row(i).data();
            double sq = 0.0;
            std::size_t j = 0;
            for (; j < d; ++j) {
                const double diff = q[j] - x[j];
                sq += diff * diff;
                // Ids arrive in increasing order, so an equal distance also loses.
                if (sq >= bound) break;
            }
            if (j < d) continue;
            if (heap.size() == k) {
                if (sq >= bound) continue;
                heap.pop();
            }
            heap.push({i, sq});
            if (heap.size() == k) bound = heap.top().distance;
        }
    } else {
        std::vector<double> qn(q.begin(), q.end());
        double sq = 0.0;
        for (double v : qn) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > 0.0)
            for (double& v : qn) v /= norm;
        for (std::size_t i = 0; i < size(); ++i) {
            if (exclude_id && i == *exclude_id) continue;
            const double* x = normalized_.row(i).data();
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += qn[j] * x[j];
            const Neighbor cand{i, 1.0 - s};
            if (heap.size() < k) {
                heap.push(cand);
            } else if (Worse{}(cand, heap.top())) {
                heap.pop();
                heap.push(cand);
            }
        }
    }

    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = heap.top();
        heap.pop();
    }
    if (metric_ == Metric::euclidean)
        for (auto& nb : out) nb.distance = std::sqrt(nb.distance);
    return out;
}

void CandidateSet::validate(int n_classes) const {
    for (std::size_t i = 0; i < size(); ++i)
        if (at(i) < 0 || at(i) >= n_classes)
            throw std::out_of_range("candidate label " + std::to_string(at(i)) + " outside [0, " +
                                    std::to_string(n_classes) + ")");
}

std::vector<CandidateSet> build_candidate_sets(const RetrievalIndex& index, std::size_t k) {
    std::vector<CandidateSet> sets(index.size());
    parallel_for(index.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            sets[i].anchor_label = index.labels()[i];
            if (k == 0) continue;
            const auto nbrs = index.query(index.features().row(i), k, i);
            sets[i].neighbor_labels.reserve(k);
            for (const auto& nb : nbrs) sets[i].neighbor_labels.push_back(index.labels()[nb.id]);
        }
    });
    return sets;
}

std::vector<double> sample_target(const CandidateSet& c, int n_classes, Rng& rng) {
    c.validate(n_classes);
    const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(c.size()) - 1));
    std::vector<double> y(static_cast<std::size_t>(n_classes), 0.0);
    y[static_cast<std::size_t>(c.at(pick))] = 1.0;
    return y;
}

std::vector<double> mean_target(const CandidateSet& c, int n_classes) {
    c.validate(n_classes);
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (std::size_t i = 0; i < c.size(); ++i) ++counts[static_cast<std::size_t>(c.at(i))];
    std::vector<double> y(counts.size());
    for (std::size_t j = 0; j < y.size(); ++j)
        y[j] = static_cast<double>(counts[j]) / static_cast<double>(c.size());
    return y;
}

Bytes encode_candidate_sets(std::span<const CandidateSet> sets) {
    const std::size_t k = sets.empty() ? 0 : sets.front().neighbor_labels.size();
    ByteWriter w;
    w.magic("LRAC");
    w.u32(kCandidateVersion);
    w.u64(sets.size());
    w.u32(static_cast<std::uint32_t>(k));
    for (const auto& c : sets) {
        if (c.neighbor_labels.size() != k)
            throw std::invalid_argument("encode_candidate_sets: ragged candidate sets");
        w.u32(static_cast<std::uint32_t>(c.anchor_label));
        for (int l : c.neighbor_labels) w.u32(static_cast<std::uint32_t>(l));
    }
    return w.take();
}

std::vector<CandidateSet> decode_candidate_sets(std::span<const std::uint8_t> bytes) {
    constexpr std::string_view what = "candidate cache";
    ByteReader r(bytes);
    r.expect_magic("LRAC", what);
    if (const auto v = r.u32(what); v != kCandidateVersion)
        throw FormatError("candidate cache: unsupported version " + std::to_string(v));
    const std::uint64_t n = r.u64(what);
    const std::uint32_t k = r.u32(what);
    if (r.remaining() != n * (k + 1ULL) * 4ULL)
        throw FormatError("candidate cache: payload size does not match header");
    std::vector<CandidateSet> sets(n);
    for (auto& c : sets) {
        c.anchor_label = static_cast<int>(r.u32(what));
        c.neighbor_labels.resize(k);
        for (int& l : c.neighbor_labels) l = static_cast<int>(r.u32(what));
    }
    return sets;
}

}  // namespace lradiff
