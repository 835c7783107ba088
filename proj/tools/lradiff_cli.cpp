// SPDX-License-Identifier: Apache-2.0
// lradiff: command-line pipeline for synthetic noisy-label experiments.
//
//   lradiff synth    -> blob features, clean labels, manifest
//   lradiff noisify  -> corrupted labels + provenance sidecar
//   lradiff train    -> checkpoint
//   lradiff infer    -> predicted labels
//   lradiff eval     -> accuracy / noise_rate
#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lradiff/datastore.hpp"
#include "lradiff/evalharness.hpp"
#include "lradiff/noisegen.hpp"
#include "lradiff/parallel.hpp"
#include "lradiff/retrieval.hpp"
#include "lradiff/trainer.hpp"

using namespace lradiff;
namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shortest text that reads back to the same double.
std::string num(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

std::string join(std::span<const double> v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + num(v[i]);
    return out;
}

std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size() || item.empty()) throw FormatError("bad number '" + item + "'");
        out.push_back(v);
    }
    return out;
}

const std::string& need(const Manifest& m, const std::string& key) {
    const auto it = m.find(key);
    if (it == m.end()) throw FormatError("manifest is missing key '" + key + "'");
    return it->second;
}

int need_int(const Manifest& m, const std::string& key) {
    const auto v = split_doubles(need(m, key));
    if (v.size() != 1 || static_cast<double>(static_cast<int>(v[0])) != v[0])
        throw FormatError("manifest key '" + key + "' is not an integer");
    return static_cast<int>(v[0]);
}

BlobSpec spec_from_manifest(const Manifest& m) {
    BlobSpec spec;
    spec.n_classes = need_int(m, "n_classes");
    spec.per_class = need_int(m, "per_class");
    const int dim = need_int(m, "dim");
    spec.sigma = split_doubles(need(m, "sigma")).at(0);
    spec.seed = static_cast<std::uint64_t>(std::stoull(need(m, "seed")));
    const auto means = split_doubles(need(m, "means"));
    if (spec.n_classes <= 0 || dim <= 0 ||
        means.size() != static_cast<std::size_t>(spec.n_classes) * static_cast<std::size_t>(dim))
        throw FormatError("manifest means do not match n_classes x dim");
    spec.means = Matrix(static_cast<std::size_t>(spec.n_classes), static_cast<std::size_t>(dim));
    spec.means.data() = means;
    spec.validate();
    return spec;
}

std::vector<int> parse_mapping(const std::string& s, int n_classes) {
    std::vector<int> mapping(static_cast<std::size_t>(n_classes));
    if (s.empty()) {
        for (int i = 0; i < n_classes; ++i) mapping[static_cast<std::size_t>(i)] = (i + 1) % n_classes;
        return mapping;
    }
    const auto v = split_doubles(s);
    if (v.size() != mapping.size()) throw UsageError("--mapping needs one target per class");
    for (std::size_t i = 0; i < v.size(); ++i) mapping[i] = static_cast<int>(v[i]);
    return mapping;
}

Matrix load_optional(const std::string& path, std::size_t rows, const char* what) {
    if (path.empty()) return {};
    Matrix m = read_features(path);
    if (m.rows() != rows) throw DimensionError(std::string(what) + " row count does not match features");
    return m;
}

void emit(const MetricsReport& report, const std::string& csv) {
    report.write_key_values(std::cout);
    if (csv.empty()) return;
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + csv + " for writing");
    report.write_csv(out);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    int classes = 4;
    int per_class = 500;
    int dim = 2;
    double radius = 4.0;
    double sigma = 1.0;
    std::string features, labels, manifest;
};

void run_synth(const SynthArgs& a, std::uint64_t seed) {
    BlobSpec spec{a.classes, a.per_class, circle_means(a.classes, a.dim, a.radius), a.sigma, seed};
    spec.validate();
    const auto data = synth_blobs(spec);
    write_features(a.features, data.features);
    write_labels(a.labels, {data.labels, a.classes});
    const std::string manifest = a.manifest.empty() ? a.features + ".manifest" : a.manifest;
    write_manifest(manifest, {{"kind", "blobs"},
                              {"n_classes", std::to_string(a.classes)},
                              {"per_class", std::to_string(a.per_class)},
                              {"dim", std::to_string(a.dim)},
                              {"radius", num(a.radius)},
                              {"sigma", num(a.sigma)},
                              {"seed", std::to_string(seed)},
                              {"means", join(spec.means.data())},
                              {"points", std::to_string(data.labels.size())}});
    std::cout << "points=" << data.labels.size() << "\n";
}

struct NoisifyArgs {
    std::string labels, out, kind = "uniform";
    double tau = 0.0;
    std::string mapping;
    std::string transition = "uniform";  // second stage of "composed"
    std::string features, manifest, posterior;
    std::optional<double> noise_factor;
    std::optional<double> pmd_rate;
    std::string clean_out;
};

PosteriorTable posterior_source(const NoisifyArgs& a, std::size_t n) {
    PosteriorTable table;
    if (!a.posterior.empty()) {
        table.eta = read_features(a.posterior);
    } else if (!a.manifest.empty() && !a.features.empty()) {
        table.eta = blob_posterior(spec_from_manifest(read_manifest(a.manifest)), read_features(a.features));
    } else {
        throw UsageError("pmd noise needs --posterior, or --features with --manifest");
    }
    if (table.eta.rows() != n) throw DimensionError("posterior row count does not match labels");
    if (a.noise_factor) {
        table.noise_factor = *a.noise_factor;
    } else if (a.pmd_rate) {
        table.noise_factor = calibrate_noise_factor(table, *a.pmd_rate);
    } else {
        throw UsageError("pmd noise needs --noise-factor or --pmd-rate");
    }
    table.validate();
    return table;
}

void run_noisify(const NoisifyArgs& a, std::uint64_t seed) {
    const LabelSet in = read_labels(a.labels);
    Rng rng(seed);
    Manifest prov{{"kind", a.kind}, {"seed", std::to_string(seed)}, {"source", a.labels}};
    auto transition = [&](const std::string& kind, std::span<const int> labels) {
        prov["transition"] = kind;
        prov["tau"] = num(a.tau);
        if (kind == "uniform") return apply_transition(labels, uniform_matrix(in.n_classes, a.tau), rng);
        if (kind == "asymmetric") {
            const auto mapping = parse_mapping(a.mapping, in.n_classes);
            std::vector<double> m(mapping.begin(), mapping.end());
            prov["mapping"] = join(m);
            return apply_transition(labels, asymmetric_matrix(in.n_classes, a.tau, mapping), rng);
        }
        throw UsageError("unknown transition kind '" + kind + "'");
    };

    std::vector<int> noisy;
    std::optional<std::vector<int>> pmd_clean;
    if (a.kind == "uniform" || a.kind == "asymmetric") {
        noisy = transition(a.kind, in.labels);
    } else if (a.kind == "pmd" || a.kind == "composed") {
        const PosteriorTable table = posterior_source(a, in.labels.size());
        if (static_cast<int>(table.eta.cols()) != in.n_classes)
            throw DimensionError("posterior class count does not match labels");
        auto pmd = pmd_corrupt(table, rng);
        prov["noise_factor"] = num(table.noise_factor);
        if (a.pmd_rate) prov["pmd_rate_target"] = num(*a.pmd_rate);
        noisy = a.kind == "pmd" ? pmd.noisy_labels : transition(a.transition, pmd.noisy_labels);
        pmd_clean = std::move(pmd.initial_labels);
    } else {
        throw UsageError("unknown noise kind '" + a.kind + "'");
    }

    write_labels(a.out, {noisy, in.n_classes});
    if (pmd_clean && !a.clean_out.empty()) write_labels(a.clean_out, {*pmd_clean, in.n_classes});
    const double rate = noise_rate(noisy, in.labels);
    prov["noise_rate"] = num(rate);
    MetricsReport report;
    report.add("noise_rate", rate);
    if (pmd_clean) {
        const double vs_initial = noise_rate(noisy, *pmd_clean);
        prov["noise_rate_vs_bayes_labels"] = num(vs_initial);
        report.add("noise_rate_vs_bayes_labels", vs_initial);
    }
    write_manifest(a.out + ".provenance", prov);
    report.write_key_values(std::cout);
}

struct TrainArgs {
    std::string features, labels, clean, raw, fq, checkpoint, candidates_out;
    int T = 1000, S = 10;
    std::size_t k = 10;
    std::string metric = "euclidean";
    int hidden = 128, time_embed = 128, blocks = 3;
    int epochs = 200, batch = 256, warmup = 10;
    double lr = 1e-3;
    std::string target_mode = "sample";
};

void run_train(const TrainArgs& a, std::uint64_t seed) {
    const Matrix features = read_features(a.features);
    const LabelSet labels = read_labels(a.labels);
    if (labels.labels.size() != features.rows()) throw DimensionError("labels and features differ in length");
    const Matrix raw = load_optional(a.raw, features.rows(), "--raw");
    const Matrix fq = load_optional(a.fq, features.rows(), "--fq");

    DiffusionConfig dc;
    dc.schedule = linear_beta_schedule(a.T);
    dc.sample_steps = a.S;
    dc.fq_mode = fq.empty() ? FqMode::zero : FqMode::provided;
    dc.n_classes = labels.n_classes;
    dc.validate();

    const RetrievalIndex index(features, labels.labels, parse_metric(a.metric));
    const auto candidates = build_candidate_sets(index, a.k);
    if (!a.candidates_out.empty()) write_file(a.candidates_out, encode_candidate_sets(candidates));
    if (!a.clean.empty()) {
        const LabelSet clean = read_labels(a.clean);
        std::cout << "candidate_clean_fraction=" << num(candidate_clean_fraction(candidates, clean.labels)) << "\n";
    }

    TrainConfig tc;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch;
    tc.lr = a.lr;
    tc.warmup_epochs = a.warmup;
    if (a.target_mode == "sample") tc.target_mode = TargetMode::sample;
    else if (a.target_mode == "mean") tc.target_mode = TargetMode::mean;
    else throw UsageError("--target-mode must be sample or mean");
    tc.seed = Rng::substream(seed, 1).next_u64();

    const DenoiserConfig mc{labels.n_classes,  static_cast<int>(features.cols()),
                            static_cast<int>(raw.cols()), a.hidden, a.time_embed, a.blocks, a.T};
    DenoiserModel model(mc, Rng::substream(seed, 0).next_u64());
    auto opt = init_optimizer(model, a.lr, a.warmup, a.epochs);
    train_denoiser(dc, model, opt, {features, raw, fq}, candidates, tc, [](const EpochStats& s) {
        std::printf("epoch=%d loss=%.6f lr=%.6g\n", s.epoch, s.mean_loss, s.lr);
        std::fflush(stdout);
    });
    write_file(a.checkpoint, encode_checkpoint({dc, std::move(model), std::move(opt)}));
}

struct InferArgs {
    std::string checkpoint, features, raw, fq, out, mode = "mle";
    int samples = 25;
};

void run_infer(const InferArgs& a, std::uint64_t seed) {
    const Checkpoint ckpt = decode_checkpoint(read_file(a.checkpoint));
    const Matrix features = read_features(a.features);
    const Conditioning cond{features, load_optional(a.raw, features.rows(), "--raw"),
                            load_optional(a.fq, features.rows(), "--fq")};
    const ModelPredictor predictor(ckpt.model);
    std::vector<int> classes;
    if (a.mode == "mle") {
        classes = mle_infer(ckpt.diffusion, predictor, cond).classes;
    } else if (a.mode == "vote") {
        Rng rng(seed);
        classes = vote_infer(ckpt.diffusion, predictor, cond, a.samples, [&] { return rng.normal(); });
    } else {
        throw UsageError("--mode must be mle or vote");
    }
    write_labels(a.out, {classes, ckpt.diffusion.n_classes});
    std::cout << "points=" << classes.size() << "\n";
}

struct EvalArgs {
    std::string pred, truth, csv;
};

void run_eval(const EvalArgs& a) {
    const LabelSet pred = read_labels(a.pred);
    const LabelSet truth = read_labels(a.truth);
    MetricsReport report;
    report.add("accuracy", accuracy(pred.labels, truth.labels));
    report.add("noise_rate", noise_rate(pred.labels, truth.labels));
    emit(report, a.csv);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Label-retrieval-augmented diffusion for noisy-label classification"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    unsigned threads = 0;
    app.add_option("--seed", seed, "Seed for every random decision")->capture_default_str();
    app.add_option("--threads", threads, "Worker thread cap (0 = hardware concurrency)");

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate Gaussian blobs with clean labels");
    s->add_option("--classes", synth.classes)->capture_default_str();
    s->add_option("--per-class", synth.per_class)->capture_default_str();
    s->add_option("--dim", synth.dim)->capture_default_str();
    s->add_option("--radius", synth.radius)->capture_default_str();
    s->add_option("--sigma", synth.sigma)->capture_default_str();
    s->add_option("--features", synth.features)->required();
    s->add_option("--labels", synth.labels)->required();
    s->add_option("--manifest", synth.manifest, "Defaults to <features>.manifest");

    NoisifyArgs noisify;
    auto* n = app.add_subcommand("noisify", "Corrupt labels with a synthetic noise model");
    n->add_option("--labels", noisify.labels)->required();
    n->add_option("--out", noisify.out)->required();
    n->add_option("--kind", noisify.kind)->check(CLI::IsMember({"uniform", "asymmetric", "pmd", "composed"}))
        ->capture_default_str();
    n->add_option("--tau", noisify.tau, "Transition noise rate")->capture_default_str();
    n->add_option("--mapping", noisify.mapping, "Asymmetric target per class, e.g. 1,2,0");
    n->add_option("--transition", noisify.transition, "Transition applied after PMD for --kind composed")
        ->check(CLI::IsMember({"uniform", "asymmetric"}))->capture_default_str();
    n->add_option("--features", noisify.features, "Features for a blob posterior");
    n->add_option("--manifest", noisify.manifest, "Blob manifest for a blob posterior");
    n->add_option("--posterior", noisify.posterior, "Posterior table in feature format (rows sum to 1)");
    n->add_option("--noise-factor", noisify.noise_factor, "PMD noise factor c");
    n->add_option("--pmd-rate", noisify.pmd_rate, "Calibrate c to this expected PMD flip rate");
    n->add_option("--clean-out", noisify.clean_out, "Write the pre-flip argmax-posterior labels");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train the label denoiser");
    t->add_option("--features", train.features)->required();
    t->add_option("--labels", train.labels, "Noisy training labels")->required();
    t->add_option("--clean", train.clean, "Clean labels, for logging the candidate clean fraction");
    t->add_option("--raw", train.raw, "Optional raw input stream in feature format");
    t->add_option("--fq", train.fq, "Optional prior mean f_q in feature format");
    t->add_option("--checkpoint", train.checkpoint)->required();
    t->add_option("--candidates-out", train.candidates_out, "Write candidate sets");
    t->add_option("-T,--steps", train.T)->capture_default_str();
    t->add_option("-S,--sample-steps", train.S)->capture_default_str();
    t->add_option("-k,--neighbors", train.k)->capture_default_str();
    t->add_option("--metric", train.metric)->check(CLI::IsMember({"euclidean", "cosine"}))->capture_default_str();
    t->add_option("--hidden", train.hidden)->capture_default_str();
    t->add_option("--time-embed", train.time_embed)->capture_default_str();
    t->add_option("--blocks", train.blocks)->capture_default_str();
    t->add_option("--epochs", train.epochs)->capture_default_str();
    t->add_option("--batch", train.batch)->capture_default_str();
    t->add_option("--lr", train.lr)->capture_default_str();
    t->add_option("--warmup", train.warmup)->capture_default_str();
    t->add_option("--target-mode", train.target_mode)->check(CLI::IsMember({"sample", "mean"}))
        ->capture_default_str();

    InferArgs infer;
    auto* i = app.add_subcommand("infer", "Predict labels with a trained checkpoint");
    i->add_option("--checkpoint", infer.checkpoint)->required();
    i->add_option("--features", infer.features)->required();
    i->add_option("--raw", infer.raw);
    i->add_option("--fq", infer.fq);
    i->add_option("--out", infer.out)->required();
    i->add_option("--mode", infer.mode)->check(CLI::IsMember({"mle", "vote"}))->capture_default_str();
    i->add_option("--samples", infer.samples, "Samples per point for --mode vote")->capture_default_str();

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Compare predicted and true labels");
    e->add_option("--pred", eval.pred)->required();
    e->add_option("--truth", eval.truth)->required();
    e->add_option("--csv", eval.csv, "Also write metrics as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        std::cerr << "lradiff: usage error: " << ex.what() << "\n";
        return 2;
    }

    try {
        set_max_threads(threads);
        if (*s) run_synth(synth, seed);
        else if (*n) run_noisify(noisify, seed);
        else if (*t) run_train(train, seed);
        else if (*i) run_infer(infer, seed);
        else if (*e) run_eval(eval);
    } catch (const UsageError& ex) {
        std::cerr << "lradiff: usage error: " << ex.what() << "\n";
        return 2;
    } catch (const std::exception& ex) {
        std::cerr << "lradiff: error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
