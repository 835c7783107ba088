// SPDX-License-Identifier: Apache-2.0
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "lradiff/datastore.hpp"
#include "lradiff/evalharness.hpp"
#include "lradiff/noisegen.hpp"
#include "lradiff/parallel.hpp"
#include "lradiff/retrieval.hpp"
#include "lradiff/trainer.hpp"

namespace py = pybind11;
using namespace lradiff;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32Array = py::array_t<int, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const F64Array& a, const char* name) {
    if (a.ndim() != 2) throw DimensionError(std::string(name) + " must be a 2-D array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data().begin());
    return m;
}

Matrix to_matrix_or_empty(const std::optional<F64Array>& a, const char* name) {
    return a ? to_matrix(*a, name) : Matrix();
}

std::vector<int> to_labels(const I32Array& a) {
    if (a.ndim() != 1) throw DimensionError("labels must be a 1-D array");
    return {a.data(), a.data() + a.size()};
}

F64Array from_matrix(const Matrix& m) {
    F64Array out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

I32Array from_labels(std::span<const int> v) {
    I32Array out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

I32Array candidates_to_array(std::span<const CandidateSet> sets, std::size_t k) {
    I32Array out({sets.size(), k + 1});
    int* p = out.mutable_data();
    for (const auto& c : sets)
        for (std::size_t i = 0; i < c.size(); ++i) *p++ = c.at(i);
    return out;
}

std::vector<CandidateSet> candidates_from_array(const I32Array& a) {
    if (a.ndim() != 2 || a.shape(1) < 1) throw DimensionError("candidate array must be n x (k+1)");
    std::vector<CandidateSet> sets(static_cast<std::size_t>(a.shape(0)));
    const int* p = a.data();
    for (auto& c : sets) {
        c.anchor_label = *p++;
        c.neighbor_labels.assign(p, p + a.shape(1) - 1);
        p += a.shape(1) - 1;
    }
    return sets;
}

TargetMode parse_target_mode(const std::string& s) {
    if (s == "sample") return TargetMode::sample;
    if (s == "mean") return TargetMode::mean;
    throw std::invalid_argument("target_mode must be 'sample' or 'mean'");
}

// Denoiser, optimizer and diffusion settings bundled as one trainable object.
class LabelDiffusion {
public:
    LabelDiffusion(int n_classes, int feat_dim, int raw_dim, int hidden, int time_embed_dim, int blocks,
                   int steps, int sample_steps, bool provided_fq, std::uint64_t seed)
        : ckpt_{make_diffusion(n_classes, steps, sample_steps, provided_fq),
                DenoiserModel({n_classes, feat_dim, raw_dim, hidden, time_embed_dim, blocks, steps},
                              Rng::substream(seed, 0).next_u64()),
                {}},
          seed_(seed) {}

    explicit LabelDiffusion(Checkpoint ckpt) : ckpt_(std::move(ckpt)) {}

    std::vector<double> fit(const F64Array& features, const I32Array& candidates, int epochs, int batch_size,
                            double lr, int warmup_epochs, const std::string& target_mode,
                            const std::optional<F64Array>& raw, const std::optional<F64Array>& fq,
                            const std::function<void(int, double)>& on_epoch) {
        const Conditioning data{to_matrix(features, "features"), to_matrix_or_empty(raw, "raw"),
                                to_matrix_or_empty(fq, "fq")};
        const auto sets = candidates_from_array(candidates);
        TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.lr = lr;
        tc.warmup_epochs = warmup_epochs;
        tc.target_mode = parse_target_mode(target_mode);
        tc.seed = Rng::substream(seed_, 1).next_u64();
        ckpt_.optimizer = init_optimizer(ckpt_.model, lr, warmup_epochs, epochs);
        std::vector<EpochStats> history;
        {
            py::gil_scoped_release release;
            history = train_denoiser(ckpt_.diffusion, ckpt_.model, ckpt_.optimizer, data, sets, tc,
                                     [&](const EpochStats& s) {
                                         if (!on_epoch) return;
                                         py::gil_scoped_acquire acquire;
                                         on_epoch(s.epoch, s.mean_loss);
                                     });
        }
        std::vector<double> losses;
        for (const auto& s : history) losses.push_back(s.mean_loss);
        return losses;
    }

    I32Array predict(const F64Array& features, const std::string& mode, int n_samples, std::uint64_t seed,
                     const std::optional<F64Array>& raw, const std::optional<F64Array>& fq) const {
        const Conditioning cond{to_matrix(features, "features"), to_matrix_or_empty(raw, "raw"),
                                to_matrix_or_empty(fq, "fq")};
        const ModelPredictor predictor(ckpt_.model);
        std::vector<int> classes;
        py::gil_scoped_release release;
        if (mode == "mle") {
            classes = mle_infer(ckpt_.diffusion, predictor, cond).classes;
        } else if (mode == "vote") {
            Rng rng(seed);
            classes = vote_infer(ckpt_.diffusion, predictor, cond, n_samples, [&] { return rng.normal(); });
        } else {
            throw std::invalid_argument("mode must be 'mle' or 'vote'");
        }
        py::gil_scoped_acquire acquire;
        return from_labels(classes);
    }

    F64Array denoise(const F64Array& features, const std::optional<F64Array>& raw,
                     const std::optional<F64Array>& fq) const {
        const Conditioning cond{to_matrix(features, "features"), to_matrix_or_empty(raw, "raw"),
                                to_matrix_or_empty(fq, "fq")};
        return from_matrix(mle_infer(ckpt_.diffusion, ModelPredictor(ckpt_.model), cond).y0_hat);
    }

    py::bytes to_bytes() const {
        const Bytes b = encode_checkpoint(ckpt_);
        return {reinterpret_cast<const char*>(b.data()), b.size()};
    }

    static LabelDiffusion from_bytes(const py::bytes& data) {
        const std::string s = data;
        const auto* p = reinterpret_cast<const std::uint8_t*>(s.data());
        return LabelDiffusion(decode_checkpoint({p, s.size()}));
    }

    void save(const std::string& path) const { write_file(path, encode_checkpoint(ckpt_)); }
    static LabelDiffusion load(const std::string& path) { return LabelDiffusion(decode_checkpoint(read_file(path))); }

    int n_classes() const { return ckpt_.diffusion.n_classes; }
    int steps() const { return ckpt_.diffusion.schedule.steps(); }
    int sample_steps() const { return ckpt_.diffusion.sample_steps; }

private:
    static DiffusionConfig make_diffusion(int n_classes, int steps, int sample_steps, bool provided_fq) {
        DiffusionConfig dc;
        dc.schedule = linear_beta_schedule(steps);
        dc.sample_steps = sample_steps;
        dc.fq_mode = provided_fq ? FqMode::provided : FqMode::zero;
        dc.n_classes = n_classes;
        dc.validate();
        return dc;
    }

    Checkpoint ckpt_;
    std::uint64_t seed_ = 0;
};

}  // namespace

PYBIND11_MODULE(_lradiff, m) {
    m.doc() = "Label-retrieval-augmented diffusion for noisy-label classification";

    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    m.def("set_max_threads", &set_max_threads, py::arg("n"));

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def(py::init<std::vector<double>>(), py::arg("betas"))
        .def_property_readonly("steps", &NoiseSchedule::steps)
        .def("beta", &NoiseSchedule::beta, py::arg("t"))
        .def("alpha_bar", &NoiseSchedule::alpha_bar, py::arg("t"))
        .def("posterior_variance", &NoiseSchedule::posterior_variance, py::arg("t"))
        .def_property_readonly("betas", [](const NoiseSchedule& s) {
            return std::vector<double>(s.betas().begin(), s.betas().end());
        });
    m.def("linear_beta_schedule", &linear_beta_schedule, py::arg("steps") = 1000, py::arg("beta_1") = 1e-4,
          py::arg("beta_T") = 0.02);
    m.def("ddim_trajectory", &ddim_trajectory, py::arg("steps"), py::arg("sample_steps"));

    m.def(
        "synth_blobs",
        [](int n_classes, int per_class, double radius, double sigma, std::uint64_t seed, int dim) {
            const BlobSpec spec{n_classes, per_class, circle_means(n_classes, dim, radius), sigma, seed};
            spec.validate();
            const auto data = synth_blobs(spec);
            return py::make_tuple(from_matrix(data.features), from_labels(data.labels));
        },
        py::arg("n_classes") = 4, py::arg("per_class") = 500, py::arg("radius") = 4.0, py::arg("sigma") = 1.0,
        py::arg("seed") = 0, py::arg("dim") = 2);
    m.def(
        "blob_posterior",
        [](const F64Array& points, int n_classes, double radius, double sigma, int dim) {
            const BlobSpec spec{n_classes, 1, circle_means(n_classes, dim, radius), sigma, 0};
            return from_matrix(blob_posterior(spec, to_matrix(points, "points")));
        },
        py::arg("points"), py::arg("n_classes") = 4, py::arg("radius") = 4.0, py::arg("sigma") = 1.0,
        py::arg("dim") = 2);

    m.def(
        "uniform_noise",
        [](const I32Array& labels, int n_classes, double tau, std::uint64_t seed) {
            Rng rng(seed);
            return from_labels(apply_transition(to_labels(labels), uniform_matrix(n_classes, tau), rng));
        },
        py::arg("labels"), py::arg("n_classes"), py::arg("tau"), py::arg("seed") = 0);
    m.def(
        "asymmetric_noise",
        [](const I32Array& labels, int n_classes, double tau, std::vector<int> mapping, std::uint64_t seed) {
            Rng rng(seed);
            return from_labels(
                apply_transition(to_labels(labels), asymmetric_matrix(n_classes, tau, mapping), rng));
        },
        py::arg("labels"), py::arg("n_classes"), py::arg("tau"), py::arg("mapping"), py::arg("seed") = 0);
    m.def(
        "pmd_noise",
        [](const F64Array& posterior, std::optional<double> noise_factor, std::optional<double> target_rate,
           std::uint64_t seed) {
            if (noise_factor.has_value() == target_rate.has_value())
                throw std::invalid_argument("give exactly one of noise_factor or target_rate");
            PosteriorTable table{to_matrix(posterior, "posterior"), 0.0};
            table.noise_factor = noise_factor ? *noise_factor : calibrate_noise_factor(table, *target_rate);
            table.validate();
            Rng rng(seed);
            const auto r = pmd_corrupt(table, rng);
            return py::make_tuple(from_labels(r.initial_labels), from_labels(r.noisy_labels), table.noise_factor);
        },
        py::arg("posterior"), py::arg("noise_factor") = py::none(), py::arg("target_rate") = py::none(),
        py::arg("seed") = 0, "Returns (argmax labels, noisy labels, noise factor).");

    m.def(
        "knn",
        [](const F64Array& features, const F64Array& queries, std::size_t k, const std::string& metric) {
            const Matrix q = to_matrix(queries, "queries");
            Matrix data = to_matrix(features, "features");
            std::vector<int> no_labels(data.rows(), 0);
            const RetrievalIndex idx(std::move(data), std::move(no_labels), parse_metric(metric));
            I32Array ids({q.rows(), k});
            F64Array dist({q.rows(), k});
            for (std::size_t r = 0; r < q.rows(); ++r) {
                const auto nb = idx.query(q.row(r), k);
                for (std::size_t j = 0; j < k; ++j) {
                    ids.mutable_at(r, j) = static_cast<int>(nb[j].id);
                    dist.mutable_at(r, j) = nb[j].distance;
                }
            }
            return py::make_tuple(ids, dist);
        },
        py::arg("features"), py::arg("queries"), py::arg("k"), py::arg("metric") = "euclidean");
    m.def(
        "candidate_sets",
        [](const F64Array& features, const I32Array& labels, std::size_t k, const std::string& metric) {
            const RetrievalIndex idx(to_matrix(features, "features"), to_labels(labels), parse_metric(metric));
            return candidates_to_array(build_candidate_sets(idx, k), k);
        },
        py::arg("features"), py::arg("labels"), py::arg("k") = 10, py::arg("metric") = "euclidean",
        "Per point: its own label followed by the labels of its k nearest other points.");
    m.def(
        "knn_classify",
        [](const F64Array& features, const I32Array& labels, const F64Array& queries, std::size_t k,
           int n_classes, const std::string& metric) {
            const RetrievalIndex idx(to_matrix(features, "features"), to_labels(labels), parse_metric(metric));
            return from_labels(knn_classifier(idx, to_matrix(queries, "queries"), k, n_classes));
        },
        py::arg("features"), py::arg("labels"), py::arg("queries"), py::arg("k"), py::arg("n_classes"),
        py::arg("metric") = "euclidean");

    m.def("accuracy", [](const I32Array& p, const I32Array& t) { return accuracy(to_labels(p), to_labels(t)); },
          py::arg("pred"), py::arg("truth"));
    m.def("noise_rate", [](const I32Array& n, const I32Array& c) { return noise_rate(to_labels(n), to_labels(c)); },
          py::arg("noisy"), py::arg("clean"));
    m.def(
        "candidate_clean_fraction",
        [](const I32Array& candidates, const I32Array& clean) {
            return candidate_clean_fraction(candidates_from_array(candidates), to_labels(clean));
        },
        py::arg("candidates"), py::arg("clean"));

    m.def("read_features", [](const std::string& p) { return from_matrix(read_features(p)); }, py::arg("path"));
    m.def("write_features", [](const std::string& p, const F64Array& a) { write_features(p, to_matrix(a, "features")); },
          py::arg("path"), py::arg("features"));
    m.def(
        "read_labels",
        [](const std::string& p) {
            const auto s = read_labels(p);
            return py::make_tuple(from_labels(s.labels), s.n_classes);
        },
        py::arg("path"), "Returns (labels, n_classes).");
    m.def("write_labels",
          [](const std::string& p, const I32Array& l, int n) { write_labels(p, {to_labels(l), n}); },
          py::arg("path"), py::arg("labels"), py::arg("n_classes"));

    py::class_<LabelDiffusion>(m, "LabelDiffusion")
        .def(py::init<int, int, int, int, int, int, int, int, bool, std::uint64_t>(), py::arg("n_classes"),
             py::arg("feat_dim"), py::arg("raw_dim") = 0, py::arg("hidden") = 128, py::arg("time_embed_dim") = 128,
             py::arg("blocks") = 3, py::arg("steps") = 1000, py::arg("sample_steps") = 10,
             py::arg("provided_fq") = false, py::arg("seed") = 0)
        .def("fit", &LabelDiffusion::fit, py::arg("features"), py::arg("candidates"), py::arg("epochs") = 200,
             py::arg("batch_size") = 256, py::arg("lr") = 1e-3, py::arg("warmup_epochs") = 10,
             py::arg("target_mode") = "sample", py::arg("raw") = py::none(), py::arg("fq") = py::none(),
             py::arg("on_epoch") = nullptr, "Train on candidate sets; returns the mean loss per epoch.")
        .def("predict", &LabelDiffusion::predict, py::arg("features"), py::arg("mode") = "mle",
             py::arg("n_samples") = 25, py::arg("seed") = 0, py::arg("raw") = py::none(), py::arg("fq") = py::none())
        .def("denoise", &LabelDiffusion::denoise, py::arg("features"), py::arg("raw") = py::none(),
             py::arg("fq") = py::none(), "Continuous label estimates from the mean-start sampler.")
        .def("to_bytes", &LabelDiffusion::to_bytes)
        .def_static("from_bytes", &LabelDiffusion::from_bytes, py::arg("data"))
        .def("save", &LabelDiffusion::save, py::arg("path"))
        .def_static("load", &LabelDiffusion::load, py::arg("path"))
        .def_property_readonly("n_classes", &LabelDiffusion::n_classes)
        .def_property_readonly("steps", &LabelDiffusion::steps)
        .def_property_readonly("sample_steps", &LabelDiffusion::sample_steps);
}
