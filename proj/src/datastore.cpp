// SPDX-License-Identifier: Apache-2.0
#include "lradiff/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "lradiff/rng.hpp"

namespace lradiff {

namespace {
constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::uint32_t kLabelVersion = 1;
}  // namespace

Bytes encode_features(const Matrix& features) {
    ByteWriter w;
    w.magic("LRAF");
    w.u32(kFeatureVersion);
    w.u64(features.rows());
    w.u32(static_cast<std::uint32_t>(features.cols()));
    for (double v : features.data()) w.put(static_cast<float>(v));
    return w.take();
}

Matrix decode_features(std::span<const std::uint8_t> bytes) {
    constexpr std::string_view what = "feature file";
    ByteReader r(bytes);
    r.expect_magic("LRAF", what);
    if (const auto v = r.u32(what); v != kFeatureVersion)
        throw FormatError("feature file: unsupported version " + std::to_string(v));
    const std::uint64_t n = r.u64(what);
    const std::uint32_t d = r.u32(what);
    if (d != 0 && n > r.remaining() / 4 / d)
        throw FormatError("feature file: truncated payload");
    if (r.remaining() != n * d * 4ULL)
        throw FormatError(r.remaining() < n * d * 4ULL ? "feature file: truncated payload"
                                                        : "feature file: trailing bytes");
    Matrix m(n, d);
    for (double& v : m.data()) v = static_cast<double>(r.get<float>(what));
    return m;
}

void write_features(const std::filesystem::path& path, const Matrix& features) {
    write_file(path, encode_features(features));
}

Matrix read_features(const std::filesystem::path& path) {
    try {
        return decode_features(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Bytes encode_labels(const LabelSet& labels) {
    ByteWriter w;
    w.magic("LRAL");
    w.u32(kLabelVersion);
    w.u64(labels.labels.size());
    w.u32(static_cast<std::uint32_t>(labels.n_classes));
    for (int l : labels.labels) {
        if (l < 0 || l >= labels.n_classes)
            throw std::out_of_range("write_labels: label " + std::to_string(l) + " outside [0, " +
                                    std::to_string(labels.n_classes) + ")");
        w.u32(static_cast<std::uint32_t>(l));
    }
    return w.take();
}

LabelSet decode_labels(std::span<const std::uint8_t> bytes) {
    constexpr std::string_view what = "label file";
    ByteReader r(bytes);
    r.expect_magic("LRAL", what);
    if (const auto v = r.u32(what); v != kLabelVersion)
        throw FormatError("label file: unsupported version " + std::to_string(v));
    const std::uint64_t n = r.u64(what);
    const std::uint32_t n_classes = r.u32(what);
    if (r.remaining() != n * 4ULL)
        throw FormatError(r.remaining() < n * 4ULL ? "label file: truncated payload"
                                                    : "label file: trailing bytes");
    LabelSet out;
    out.n_classes = static_cast<int>(n_classes);
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t l = r.u32(what);
        if (l >= n_classes)
            throw FormatError("label file: label " + std::to_string(l) + " at position " +
                              std::to_string(i) + " >= n_classes " + std::to_string(n_classes));
        out.labels[i] = static_cast<int>(l);
    }
    return out;
}

void write_labels(const std::filesystem::path& path, const LabelSet& labels) {
    write_file(path, encode_labels(labels));
}

LabelSet read_labels(const std::filesystem::path& path) {
    try {
        return decode_labels(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void BlobSpec::validate() const {
    if (n_classes < 1 || per_class < 1) throw std::invalid_argument("BlobSpec: empty spec");
    if (means.rows() != static_cast<std::size_t>(n_classes) || means.cols() == 0)
        throw std::invalid_argument("BlobSpec: means must be n_classes x d");
    if (!(sigma >= 0.0)) throw std::invalid_argument("BlobSpec: sigma must be >= 0");
    for (std::size_t a = 0; a < means.rows(); ++a)
        for (std::size_t b = a + 1; b < means.rows(); ++b)
            if (std::equal(means.row(a).begin(), means.row(a).end(), means.row(b).begin()))
                throw std::invalid_argument("BlobSpec: class means must be pairwise distinct");
}

Matrix circle_means(int n_classes, int dim, double radius) {
    if (dim < 2) throw std::invalid_argument("circle_means: need dim >= 2");
    Matrix m(static_cast<std::size_t>(n_classes), static_cast<std::size_t>(dim));
    for (int c = 0; c < n_classes; ++c) {
        const double angle = 2.0 * std::numbers::pi * c / n_classes;
        m(c, 0) = radius * std::cos(angle);
        m(c, 1) = radius * std::sin(angle);
    }
    return m;
}

BlobData synth_blobs(const BlobSpec& spec) {
    spec.validate();
    const auto d = static_cast<std::size_t>(spec.dim());
    const std::size_t n = static_cast<std::size_t>(spec.n_classes) * spec.per_class;
    BlobData out{Matrix(n, d), std::vector<int>(n)};
    Rng rng(spec.seed);
    std::size_t r = 0;
    for (int c = 0; c < spec.n_classes; ++c)
        for (int i = 0; i < spec.per_class; ++i, ++r) {
            out.labels[r] = c;
            for (std::size_t j = 0; j < d; ++j)
                out.features(r, j) = spec.means(c, j) + spec.sigma * rng.normal();
        }
    return out;
}

std::vector<double> blob_posterior(const BlobSpec& spec, std::span<const double> x) {
    if (!(spec.sigma > 0.0)) throw std::invalid_argument("blob_posterior: sigma must be > 0");
    if (x.size() != static_cast<std::size_t>(spec.dim()))
        throw std::invalid_argument("blob_posterior: point dimension mismatch");
    std::vector<double> logit(static_cast<std::size_t>(spec.n_classes));
    for (std::size_t c = 0; c < logit.size(); ++c) {
        double sq = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double diff = x[j] - spec.means(c, j);
            sq += diff * diff;
        }
        logit[c] = -sq / (2.0 * spec.sigma * spec.sigma);
    }
    const double top = *std::max_element(logit.begin(), logit.end());
    double z = 0.0;
    for (double& v : logit) z += (v = std::exp(v - top));
    for (double& v : logit) v /= z;
    return logit;
}

Matrix blob_posterior(const BlobSpec& spec, const Matrix& points) {
    Matrix eta(points.rows(), static_cast<std::size_t>(spec.n_classes));
    for (std::size_t r = 0; r < points.rows(); ++r) {
        const auto row = blob_posterior(spec, points.row(r));
        std::copy(row.begin(), row.end(), eta.row(r).begin());
    }
    return eta;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (const auto& [k, v] : m) out << k << '=' << v << '\n';
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(path.string() + ": malformed manifest line");
        m[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return m;
}

}  // namespace lradiff
