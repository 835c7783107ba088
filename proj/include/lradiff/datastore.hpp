// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lradiff/binary_io.hpp"
#include "lradiff/matrix.hpp"

namespace lradiff {

// "LRAF": u32 version, u64 n, u32 d, n*d float32 row-major.
Bytes encode_features(const Matrix& features);
Matrix decode_features(std::span<const std::uint8_t> bytes);
void write_features(const std::filesystem::path& path, const Matrix& features);
Matrix read_features(const std::filesystem::path& path);

struct LabelSet {
    std::vector<int> labels;
    int n_classes = 0;
};

// "LRAL": u32 version, u64 n, u32 n_classes, n u32 ids.
Bytes encode_labels(const LabelSet& labels);
LabelSet decode_labels(std::span<const std::uint8_t> bytes);
void write_labels(const std::filesystem::path& path, const LabelSet& labels);
LabelSet read_labels(const std::filesystem::path& path);

/// Isotropic Gaussian blobs with equal class priors.
struct BlobSpec {
    int n_classes = 4;
    int per_class = 500;
    Matrix means;  // n_classes x d
    double sigma = 1.0;
    std::uint64_t seed = 0;

    int dim() const noexcept { return static_cast<int>(means.cols()); }
    void validate() const;
};

/// Class means evenly spaced on a circle of `radius` in the first two
/// coordinates; remaining coordinates are zero. Requires dim >= 2.
Matrix circle_means(int n_classes, int dim, double radius);

struct BlobData {
    Matrix features;
    std::vector<int> labels;
};

/// per_class points per class, class-major order.
BlobData synth_blobs(const BlobSpec& spec);

/// Bayes posterior under equal priors: softmax_c(-|x - mean_c|^2 / (2 sigma^2)).
std::vector<double> blob_posterior(const BlobSpec& spec, std::span<const double> x);
Matrix blob_posterior(const BlobSpec& spec, const Matrix& points);

/// key=value manifest lines, sorted by key.
using Manifest = std::map<std::string, std::string>;
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace lradiff
