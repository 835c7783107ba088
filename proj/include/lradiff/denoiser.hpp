// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lradiff/binary_io.hpp"
#include "lradiff/matrix.hpp"

namespace lradiff {

/// Architecture mismatch between a model and its inputs or a checkpoint.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite gradient or parameter; the optimizer refuses the update.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DenoiserConfig {
    int n_classes = 0;
    int feat_dim = 0;
    int raw_dim = 0;  // 0 disables the trainable raw-feature encoder
    int hidden = 128;
    int time_embed_dim = 128;
    int blocks = 3;
    int max_t = 1000;

    bool operator==(const DenoiserConfig&) const = default;
};

/// Sinusoidal embedding: entry 2i = sin(t / 10000^(2i/dim)), entry 2i+1 the cosine.
std::vector<double> time_embedding(int t, int dim, int max_t);

/// One batch of denoiser inputs; all matrices have one row per item.
struct DenoiserInput {
    const Matrix& y_t;              // B x n_classes
    const Matrix& f_p;              // B x feat_dim
    const Matrix* x_raw = nullptr;  // B x raw_dim, required iff raw_dim > 0
    std::span<const int> t;         // B timesteps in [1, max_t]
};

/// Activations kept by a train-mode forward pass for the matching backward.
struct ForwardCache {
    std::uint64_t model_id = 0;
    std::uint64_t model_version = 0;
    std::size_t batch = 0;

    Matrix cond_in, cond_proj, time_emb, cond_time, cond_h;
    Matrix raw_in, raw_pre, raw_act, raw_proj, raw_time, raw_h;
    std::vector<Matrix> block_in, block_pre, block_xhat, block_inv_std, block_out;
    Matrix output;
};

/// Gradient for every trainable tensor, in parameter declaration order.
using Gradients = std::vector<Matrix>;

/// The noise-prediction network eps_theta(y_t, x, f_p(x), t).
///
/// Layout: the label/feature stream (y_t concatenated with f_p(x)) and, when
/// enabled, the raw-feature stream are each projected to width `hidden` and
/// multiplied elementwise with their own projection of the time embedding.
/// The streams are concatenated and passed through `blocks` layers of
/// affine + batch normalization + softplus, then an affine map to n_classes.
class DenoiserModel {
public:
    DenoiserModel(const DenoiserConfig& cfg, std::uint64_t seed);

    const DenoiserConfig& config() const noexcept { return cfg_; }

    /// Eval mode: running batch-norm statistics, no state is touched.
    Matrix forward_eval(const DenoiserInput& in) const;

    /// Train mode: batch statistics, updates running statistics, fills cache.
    Matrix forward_train(const DenoiserInput& in, ForwardCache& cache);

    /// Exact gradients of sum(d_output .* output) w.r.t. every parameter,
    /// for the train-mode pass recorded in `cache`.
    Gradients backward(const ForwardCache& cache, const Matrix& d_output) const;

    std::vector<Matrix>& parameters() noexcept { return params_; }
    const std::vector<Matrix>& parameters() const noexcept { return params_; }
    const std::vector<std::string>& parameter_names() const noexcept { return names_; }

    std::vector<Matrix>& running_stats() noexcept { return running_; }
    const std::vector<Matrix>& running_stats() const noexcept { return running_; }

    /// Index of the output-layer weight and bias in parameters().
    std::size_t output_weight_index() const noexcept { return out_w_; }
    std::size_t output_bias_index() const noexcept { return out_w_ + 1; }

    /// Must be called after any external write to parameters(); invalidates caches.
    void mark_modified() noexcept { ++version_; }

    static constexpr double kBatchNormEps = 1e-5;
    static constexpr double kBatchNormMomentum = 0.1;

private:
    struct Stream {
        std::size_t proj = 0;  // weight index; bias follows
        std::size_t time = 0;
    };

    void validate(const DenoiserInput& in) const;
    std::size_t add_affine(const std::string& name, int out, int in, std::uint64_t& state);

    template <bool Train>
    Matrix run(const DenoiserInput& in, ForwardCache* cache, std::vector<Matrix>* running) const;

    DenoiserConfig cfg_;
    std::vector<Matrix> params_;
    std::vector<std::string> names_;
    std::vector<Matrix> running_;  // per block: mean, var

    Stream cond_;
    std::size_t raw_enc_ = 0;
    Stream raw_;
    std::vector<std::size_t> block_w_;  // affine weight; bias, gamma, beta follow
    std::size_t out_w_ = 0;

    std::uint64_t id_;
    std::uint64_t version_ = 0;
};

inline DenoiserModel init_model(const DenoiserConfig& cfg, std::uint64_t seed) {
    return DenoiserModel(cfg, seed);
}

struct OptimizerState {
    std::uint64_t step_count = 0;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    double base_lr = 1e-3;
    int warmup_epochs = 10;
    int total_epochs = 200;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

OptimizerState init_optimizer(const DenoiserModel& model, double base_lr, int warmup_epochs,
                              int total_epochs);

/// Bias-corrected Adam update. Throws DivergenceError, leaving model and
/// state untouched, if any gradient entry is non-finite.
void adam_step(DenoiserModel& model, OptimizerState& state, const Gradients& grads, double lr);

/// Linear warmup from 0 to base_lr, then half-cycle cosine decay.
double lr_at(int epoch, const OptimizerState& state);

Bytes save_params(const DenoiserModel& model, const OptimizerState& state);
void write_params(ByteWriter& w, const DenoiserModel& model, const OptimizerState& state);

std::pair<DenoiserModel, OptimizerState> load_params(std::span<const std::uint8_t> bytes);
std::pair<DenoiserModel, OptimizerState> read_params(ByteReader& r);

/// Loads a checkpoint and requires its architecture to equal `expected`.
std::pair<DenoiserModel, OptimizerState> load_params(std::span<const std::uint8_t> bytes,
                                                     const DenoiserConfig& expected);

}  // namespace lradiff
