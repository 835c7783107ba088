// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "lradiff/datastore.hpp"
#include "oracles.hpp"

using namespace lradiff;

namespace {

Matrix float_exact_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = static_cast<float>(rng.normal());
    return m;
}

}  // namespace

TEST_CASE("feature file round trip across sizes") {
    Rng rng(1);
    for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{1, 1}, {1000, 1}, {250, 4}, {1000, 1000}}) {
        const Matrix m = float_exact_matrix(rows, cols, rng);
        const Bytes bytes = encode_features(m);
        CHECK(bytes.size() == 20 + rows * cols * 4);
        CHECK(decode_features(bytes) == m);
    }
}

TEST_CASE("feature file errors") {
    Rng rng(2);
    const Bytes bytes = encode_features(float_exact_matrix(3, 2, rng));
    Bytes cut(bytes.begin(), bytes.end() - 2);
    CHECK_THROWS_AS(decode_features(cut), FormatError);
    Bytes extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(decode_features(extra), FormatError);
    Bytes magic = bytes;
    magic[3] = 'L';
    CHECK_THROWS_AS(decode_features(magic), FormatError);
    Bytes version = bytes;
    version[4] = 2;
    CHECK_THROWS_AS(decode_features(version), FormatError);
    CHECK_THROWS_AS(decode_features(Bytes{'L', 'R'}), FormatError);
}

TEST_CASE("label file round trip and validation") {
    Rng rng(3);
    for (std::size_t n : {1u, 1000u, 1000000u}) {
        LabelSet ls{std::vector<int>(n), 7};
        for (int& l : ls.labels) l = static_cast<int>(rng.uniform_int(0, 6));
        const Bytes bytes = encode_labels(ls);
        const auto back = decode_labels(bytes);
        CHECK(back.labels == ls.labels);
        CHECK(back.n_classes == 7);
        CHECK(encode_labels(back) == bytes);
    }
    LabelSet ls{{0, 1, 2}, 3};
    Bytes bytes = encode_labels(ls);
    bytes[bytes.size() - 4] = 3;  // last label := 3 >= n_classes
    CHECK_THROWS_AS(decode_labels(bytes), FormatError);
    Bytes cut(bytes.begin(), bytes.end() - 1);
    CHECK_THROWS_AS(decode_labels(cut), FormatError);
    CHECK_THROWS(encode_labels(LabelSet{{5}, 3}));
}

TEST_CASE("byte layout of the label header") {
    const Bytes b = encode_labels(LabelSet{{1, 0}, 2});
    const Bytes expected{'L', 'R', 'A', 'L', 1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0,
                         1, 0, 0, 0, 0, 0, 0, 0};
    CHECK(b == expected);
}

TEST_CASE("files on disk") {
    const auto dir = std::filesystem::temp_directory_path() / "lradiff_test_datastore";
    std::filesystem::create_directories(dir);
    Rng rng(4);
    const Matrix m = float_exact_matrix(10, 3, rng);
    write_features(dir / "f.bin", m);
    CHECK(read_features(dir / "f.bin") == m);
    write_labels(dir / "l.bin", LabelSet{{0, 1, 1}, 2});
    CHECK(read_labels(dir / "l.bin").labels == std::vector<int>{0, 1, 1});
    write_manifest(dir / "m.txt", {{"sigma", "1"}, {"classes", "4"}});
    CHECK(read_manifest(dir / "m.txt").at("classes") == "4");
    CHECK_THROWS(read_features(dir / "missing.bin"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("synth_blobs") {
    BlobSpec spec{3, 20, circle_means(3, 2, 2.0), 0.0, 5};
    auto data = synth_blobs(spec);
    for (std::size_t r = 0; r < data.features.rows(); ++r)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(data.features(r, j) == spec.means(data.labels[r], j));
    spec.sigma = 1.0;
    data = synth_blobs(spec);
    std::vector<int> counts(3, 0);
    for (int l : data.labels) ++counts[l];
    CHECK(counts == std::vector<int>{20, 20, 20});
    CHECK(synth_blobs(spec).features == data.features);
    spec.seed = 6;
    CHECK_FALSE(synth_blobs(spec).features == data.features);
    BlobSpec dup{2, 5, Matrix(2, 2, 1.0), 1.0, 0};
    CHECK_THROWS(synth_blobs(dup));
}

TEST_CASE("blob posterior") {
    BlobSpec spec{4, 1, circle_means(4, 2, 4.0), 1.0, 0};
    // Midpoint of means 0 (4,0) and 1 (0,4).
    const auto mid = blob_posterior(spec, std::vector<double>{2.0, 2.0});
    CHECK(mid[0] == doctest::Approx(mid[1]));
    CHECK(mid[0] > 0.49);
    BlobSpec sep{4, 1, circle_means(4, 2, 6.0), 1.0, 0};
    const auto at = blob_posterior(sep, std::vector<double>{6.0, 0.0});
    // Nearest rival is 6*sqrt(2) away: odds exp(-36) each.
    CHECK(at[0] > 0.99);
    CHECK(at[0] == doctest::Approx(1.0 / (1.0 + 2 * std::exp(-36.0) + std::exp(-72.0))));
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const auto row = blob_posterior(spec, std::vector<double>{8 * rng.normal(), 8 * rng.normal()});
        double s = 0.0;
        for (double v : row) s += v;
        REQUIRE(std::abs(s - 1.0) <= 1e-12);
    }
    spec.sigma = 0.0;
    CHECK_THROWS(blob_posterior(spec, std::vector<double>{0.0, 0.0}));
}

TEST_CASE("Bayes classifier on blob_posterior reaches the quadrature Bayes rate") {
    BlobSpec spec{4, 25000, circle_means(4, 2, 2.0), 1.0, 8};
    const auto data = synth_blobs(spec);
    const Matrix eta = blob_posterior(spec, data.features);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < eta.rows(); ++r) hits += static_cast<int>(argmax(eta.row(r))) == data.labels[r];
    const double mc = hits / double(eta.rows());
    const double bayes = oracle::bayes_accuracy_2d(spec.means, spec.sigma);
    CHECK(std::abs(mc - bayes) < 0.01);
}
