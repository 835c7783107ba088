// SPDX-License-Identifier: Apache-2.0
#include "lradiff/denoiser.hpp"

#include <atomic>
#include <cmath>

#include "lradiff/rng.hpp"

namespace lradiff {

namespace {

std::atomic<std::uint64_t> g_next_model_id{1};

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kOptimizerVersion = 1;

double softplus(double z) noexcept { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) noexcept { return 1.0 / (1.0 + std::exp(-z)); }

Matrix hadamard(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

void check_positive(int v, const char* name) {
    if (v < 1) throw std::invalid_argument(std::string("init_model: ") + name + " must be >= 1");
}

}  // namespace

std::vector<double> time_embedding(int t, int dim, int max_t) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("time_embedding: dim must be even and >= 2");
    if (t < 1 || t > max_t)
        throw std::out_of_range("time_embedding: t=" + std::to_string(t) + " outside [1, " +
                                std::to_string(max_t) + "]");
    std::vector<double> e(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, 2.0 * i / dim);
        e[2 * i] = std::sin(t / freq);
        e[2 * i + 1] = std::cos(t / freq);
    }
    return e;
}

DenoiserModel::DenoiserModel(const DenoiserConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), id_(g_next_model_id++) {
    check_positive(cfg.n_classes, "n_classes");
    check_positive(cfg.feat_dim, "feat_dim");
    check_positive(cfg.hidden, "hidden");
    check_positive(cfg.time_embed_dim, "time_embed_dim");
    check_positive(cfg.blocks, "blocks");
    check_positive(cfg.max_t, "max_t");
    if (cfg.raw_dim < 0) throw std::invalid_argument("init_model: raw_dim must be >= 0");
    if (cfg.time_embed_dim % 2 != 0)
        throw std::invalid_argument("init_model: time_embed_dim must be even");

    std::uint64_t state = seed;
    const int w = cfg.hidden;
    cond_.proj = add_affine("cond.proj", w, cfg.n_classes + cfg.feat_dim, state);
    cond_.time = add_affine("cond.time", w, cfg.time_embed_dim, state);
    int streams = 1;
    if (cfg.raw_dim > 0) {
        raw_enc_ = add_affine("raw.encoder", w, cfg.raw_dim, state);
        raw_.proj = add_affine("raw.proj", w, w, state);
        raw_.time = add_affine("raw.time", w, cfg.time_embed_dim, state);
        streams = 2;
    }
    for (int k = 0; k < cfg.blocks; ++k) {
        const std::string name = "block" + std::to_string(k);
        block_w_.push_back(add_affine(name + ".affine", w, k == 0 ? streams * w : w, state));
        params_.emplace_back(1, w, 1.0);
        names_.push_back(name + ".bn.gamma");
        params_.emplace_back(1, w, 0.0);
        names_.push_back(name + ".bn.beta");
        running_.emplace_back(1, w, 0.0);
        running_.emplace_back(1, w, 1.0);
    }
    out_w_ = add_affine("output", cfg.n_classes, w, state);
}

std::size_t DenoiserModel::add_affine(const std::string& name, int out, int in,
                                      std::uint64_t& state) {
    Rng rng = Rng::substream(state, params_.size());
    ++state;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix weight(out, in), bias(1, out);
    for (double& v : weight.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
    for (double& v : bias.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
    const std::size_t index = params_.size();
    params_.push_back(std::move(weight));
    names_.push_back(name + ".weight");
    params_.push_back(std::move(bias));
    names_.push_back(name + ".bias");
    return index;
}

void DenoiserModel::validate(const DenoiserInput& in) const {
    const std::size_t batch = in.y_t.rows();
    if (batch == 0) throw DimensionError("denoiser: empty batch");
    if (in.y_t.cols() != static_cast<std::size_t>(cfg_.n_classes))
        throw DimensionError("denoiser: y_t has " + std::to_string(in.y_t.cols()) +
                             " columns, model expects " + std::to_string(cfg_.n_classes));
    if (in.f_p.rows() != batch || in.f_p.cols() != static_cast<std::size_t>(cfg_.feat_dim))
        throw DimensionError("denoiser: f_p shape mismatch (expected " + std::to_string(batch) +
                             "x" + std::to_string(cfg_.feat_dim) + ")");
    if (cfg_.raw_dim > 0) {
        if (in.x_raw == nullptr || in.x_raw->rows() != batch ||
            in.x_raw->cols() != static_cast<std::size_t>(cfg_.raw_dim))
            throw DimensionError("denoiser: raw input missing or mis-shaped");
    } else if (in.x_raw != nullptr && !in.x_raw->empty()) {
        throw DimensionError("denoiser: raw input given but model has raw_dim=0");
    }
    if (in.t.size() != batch) throw DimensionError("denoiser: one timestep per row required");
    for (int t : in.t)
        if (t < 1 || t > cfg_.max_t)
            throw std::out_of_range("denoiser: t=" + std::to_string(t) + " outside [1, " +
                                    std::to_string(cfg_.max_t) + "]");
}

template <bool Train>
Matrix DenoiserModel::run(const DenoiserInput& in, ForwardCache* cache,
                         std::vector<Matrix>* running) const {
    validate(in);
    const std::size_t batch = in.y_t.rows();
    const std::size_t w = static_cast<std::size_t>(cfg_.hidden);
    const auto& P = params_;

    const Matrix* cond_parts[] = {&in.y_t, &in.f_p};
    Matrix cond_in = hconcat(cond_parts);
    Matrix temb(batch, static_cast<std::size_t>(cfg_.time_embed_dim));
    for (std::size_t r = 0; r < batch; ++r) {
        const auto e = time_embedding(in.t[r], cfg_.time_embed_dim, cfg_.max_t);
        std::copy(e.begin(), e.end(), temb.row(r).begin());
    }

    Matrix cproj, ctime;
    affine_forward(cond_in, P[cond_.proj], P[cond_.proj + 1], cproj);
    affine_forward(temb, P[cond_.time], P[cond_.time + 1], ctime);
    Matrix h = hadamard(cproj, ctime);

    if (cfg_.raw_dim > 0) {
        Matrix raw_pre, raw_proj, raw_time;
        affine_forward(*in.x_raw, P[raw_enc_], P[raw_enc_ + 1], raw_pre);
        Matrix raw_act(raw_pre.rows(), raw_pre.cols());
        for (std::size_t i = 0; i < raw_pre.size(); ++i)
            raw_act.data()[i] = softplus(raw_pre.data()[i]);
        affine_forward(raw_act, P[raw_.proj], P[raw_.proj + 1], raw_proj);
        affine_forward(temb, P[raw_.time], P[raw_.time + 1], raw_time);
        Matrix raw_h = hadamard(raw_proj, raw_time);
        const Matrix* parts[] = {&h, &raw_h};
        Matrix joined = hconcat(parts);
        if constexpr (Train) {
            cache->raw_in = *in.x_raw;
            cache->raw_pre = std::move(raw_pre);
            cache->raw_act = std::move(raw_act);
            cache->raw_proj = std::move(raw_proj);
            cache->raw_time = std::move(raw_time);
            cache->raw_h = std::move(raw_h);
        }
        if constexpr (Train) cache->cond_h = h;
        h = std::move(joined);
    } else if constexpr (Train) {
        cache->cond_h = h;
    }

    if constexpr (Train) {
        cache->model_id = id_;
        cache->model_version = version_;
        cache->batch = batch;
        cache->cond_in = std::move(cond_in);
        cache->time_emb = std::move(temb);
        cache->cond_proj = std::move(cproj);
        cache->cond_time = std::move(ctime);
        cache->block_in.clear();
        cache->block_pre.clear();
        cache->block_xhat.clear();
        cache->block_inv_std.clear();
        cache->block_out.clear();
    }

    for (std::size_t k = 0; k < block_w_.size(); ++k) {
        const std::size_t wi = block_w_[k];
        const Matrix& gamma = P[wi + 2];
        const Matrix& beta = P[wi + 3];
        Matrix pre;
        affine_forward(h, P[wi], P[wi + 1], pre);

        Matrix mean(1, w), inv_std(1, w);
        if constexpr (Train) {
            Matrix var(1, w);
            for (std::size_t r = 0; r < batch; ++r)
                for (std::size_t j = 0; j < w; ++j) mean(0, j) += pre(r, j);
            for (std::size_t j = 0; j < w; ++j) mean(0, j) /= static_cast<double>(batch);
            for (std::size_t r = 0; r < batch; ++r)
                for (std::size_t j = 0; j < w; ++j) {
                    const double d = pre(r, j) - mean(0, j);
                    var(0, j) += d * d;
                }
            const double unbias = batch > 1 ? static_cast<double>(batch) / (batch - 1) : 1.0;
            Matrix& run_mean = (*running)[2 * k];
            Matrix& run_var = (*running)[2 * k + 1];
            for (std::size_t j = 0; j < w; ++j) {
                var(0, j) /= static_cast<double>(batch);
                inv_std(0, j) = 1.0 / std::sqrt(var(0, j) + kBatchNormEps);
                run_mean(0, j) = (1.0 - kBatchNormMomentum) * run_mean(0, j) +
                                 kBatchNormMomentum * mean(0, j);
                run_var(0, j) = (1.0 - kBatchNormMomentum) * run_var(0, j) +
                                kBatchNormMomentum * var(0, j) * unbias;
            }
        } else {
            for (std::size_t j = 0; j < w; ++j) {
                mean(0, j) = running_[2 * k](0, j);
                inv_std(0, j) = 1.0 / std::sqrt(running_[2 * k + 1](0, j) + kBatchNormEps);
            }
        }

        Matrix xhat(batch, w), out(batch, w);
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t j = 0; j < w; ++j) {
                const double xh = (pre(r, j) - mean(0, j)) * inv_std(0, j);
                xhat(r, j) = xh;
                out(r, j) = softplus(gamma(0, j) * xh + beta(0, j));
            }
        if constexpr (Train) {
            cache->block_in.push_back(std::move(h));
            cache->block_pre.push_back(std::move(pre));
            cache->block_xhat.push_back(std::move(xhat));
            cache->block_inv_std.push_back(std::move(inv_std));
            cache->block_out.push_back(out);
        }
        h = std::move(out);
    }

    Matrix output;
    affine_forward(h, P[out_w_], P[out_w_ + 1], output);
    if constexpr (Train) cache->output = output;
    return output;
}

Matrix DenoiserModel::forward_eval(const DenoiserInput& in) const {
    return run<false>(in, nullptr, nullptr);
}

Matrix DenoiserModel::forward_train(const DenoiserInput& in, ForwardCache& cache) {
    return run<true>(in, &cache, &running_);
}

Gradients DenoiserModel::backward(const ForwardCache& cache, const Matrix& d_output) const {
    if (cache.model_id != id_ || cache.model_version != version_ || cache.block_out.empty())
        throw std::logic_error("backward: no matching train-mode forward pass for this model state");
    if (d_output.rows() != cache.batch ||
        d_output.cols() != static_cast<std::size_t>(cfg_.n_classes))
        throw DimensionError("backward: output gradient shape does not match cached batch");

    const std::size_t batch = cache.batch;
    const std::size_t w = static_cast<std::size_t>(cfg_.hidden);
    const auto& P = params_;
    Gradients g;
    g.reserve(P.size());
    for (const Matrix& p : P) g.emplace_back(p.rows(), p.cols());

    Matrix dh;
    affine_backward(cache.block_out.back(), P[out_w_], d_output, g[out_w_], g[out_w_ + 1], &dh);

    for (std::size_t kk = block_w_.size(); kk-- > 0;) {
        const std::size_t wi = block_w_[kk];
        const Matrix& gamma = P[wi + 2];
        const Matrix& beta = P[wi + 3];
        const Matrix& xhat = cache.block_xhat[kk];
        const Matrix& inv_std = cache.block_inv_std[kk];
        Matrix& d_gamma = g[wi + 2];
        Matrix& d_beta = g[wi + 3];

        Matrix dxhat(batch, w);
        Matrix sum_dxhat(1, w), sum_dxhat_xhat(1, w);
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t j = 0; j < w; ++j) {
                const double z = gamma(0, j) * xhat(r, j) + beta(0, j);
                const double dz = dh(r, j) * sigmoid(z);
                d_gamma(0, j) += dz * xhat(r, j);
                d_beta(0, j) += dz;
                const double dx = dz * gamma(0, j);
                dxhat(r, j) = dx;
                sum_dxhat(0, j) += dx;
                sum_dxhat_xhat(0, j) += dx * xhat(r, j);
            }
        Matrix dpre(batch, w);
        const double inv_b = 1.0 / static_cast<double>(batch);
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t j = 0; j < w; ++j)
                dpre(r, j) = inv_std(0, j) * inv_b *
                             (static_cast<double>(batch) * dxhat(r, j) - sum_dxhat(0, j) -
                              xhat(r, j) * sum_dxhat_xhat(0, j));
        Matrix d_in;
        affine_backward(cache.block_in[kk], P[wi], dpre, g[wi], g[wi + 1], &d_in);
        dh = std::move(d_in);
    }

    // dh is now the gradient w.r.t. the concatenated streams.
    Matrix d_cproj(batch, w), d_ctime(batch, w);
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t j = 0; j < w; ++j) {
            d_cproj(r, j) = dh(r, j) * cache.cond_time(r, j);
            d_ctime(r, j) = dh(r, j) * cache.cond_proj(r, j);
        }
    affine_backward(cache.cond_in, P[cond_.proj], d_cproj, g[cond_.proj], g[cond_.proj + 1], nullptr);
    affine_backward(cache.time_emb, P[cond_.time], d_ctime, g[cond_.time], g[cond_.time + 1], nullptr);

    if (cfg_.raw_dim > 0) {
        Matrix d_rproj(batch, w), d_rtime(batch, w);
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t j = 0; j < w; ++j) {
                const double d = dh(r, w + j);
                d_rproj(r, j) = d * cache.raw_time(r, j);
                d_rtime(r, j) = d * cache.raw_proj(r, j);
            }
        Matrix d_act;
        affine_backward(cache.raw_act, P[raw_.proj], d_rproj, g[raw_.proj], g[raw_.proj + 1], &d_act);
        affine_backward(cache.time_emb, P[raw_.time], d_rtime, g[raw_.time], g[raw_.time + 1], nullptr);
        for (std::size_t i = 0; i < d_act.size(); ++i)
            d_act.data()[i] *= sigmoid(cache.raw_pre.data()[i]);
        affine_backward(cache.raw_in, P[raw_enc_], d_act, g[raw_enc_], g[raw_enc_ + 1], nullptr);
    }
    return g;
}

OptimizerState init_optimizer(const DenoiserModel& model, double base_lr, int warmup_epochs,
                              int total_epochs) {
    if (!(base_lr > 0.0)) throw std::invalid_argument("init_optimizer: base_lr must be positive");
    if (total_epochs < 1 || warmup_epochs < 0 || warmup_epochs >= total_epochs)
        throw std::invalid_argument("init_optimizer: need 0 <= warmup < total epochs");
    OptimizerState s;
    s.base_lr = base_lr;
    s.warmup_epochs = warmup_epochs;
    s.total_epochs = total_epochs;
    for (const Matrix& p : model.parameters()) {
        s.first_moment.emplace_back(p.rows(), p.cols());
        s.second_moment.emplace_back(p.rows(), p.cols());
    }
    return s;
}

void adam_step(DenoiserModel& model, OptimizerState& state, const Gradients& grads, double lr) {
    auto& params = model.parameters();
    if (grads.size() != params.size() || state.first_moment.size() != params.size())
        throw DimensionError("adam_step: gradient/parameter count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols())
            throw DimensionError("adam_step: gradient shape mismatch for " +
                                 model.parameter_names()[i]);
        for (double v : grads[i].data())
            if (!std::isfinite(v))
                throw DivergenceError("adam_step: non-finite gradient in " +
                                      model.parameter_names()[i]);
    }
    const auto step = static_cast<double>(state.step_count + 1);
    const double c1 = 1.0 - std::pow(state.beta1, step);
    const double c2 = 1.0 - std::pow(state.beta2, step);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].data();
        auto& m = state.first_moment[i].data();
        auto& v = state.second_moment[i].data();
        const auto& g = grads[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
    ++state.step_count;
    model.mark_modified();
}

double lr_at(int epoch, const OptimizerState& state) {
    if (epoch < 0 || epoch >= state.total_epochs)
        throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(state.total_epochs) + ")");
    if (epoch < state.warmup_epochs)
        return state.base_lr * epoch / static_cast<double>(state.warmup_epochs);
    const double progress = static_cast<double>(epoch - state.warmup_epochs) /
                            (state.total_epochs - state.warmup_epochs);
    return state.base_lr * 0.5 * (1.0 + std::cos(std::acos(-1.0) * progress));
}

void write_params(ByteWriter& w, const DenoiserModel& model, const OptimizerState& state) {
    const auto& c = model.config();
    w.magic("LRDM");
    w.u32(kCheckpointVersion);
    for (int dim : {c.n_classes, c.feat_dim, c.raw_dim, c.hidden, c.time_embed_dim, c.blocks, c.max_t})
        w.u32(static_cast<std::uint32_t>(dim));
    for (const Matrix& p : model.parameters()) w.f64s(p.data());
    for (const Matrix& s : model.running_stats()) w.f64s(s.data());

    w.magic("LROS");
    w.u32(kOptimizerVersion);
    w.u64(state.step_count);
    w.f64(state.base_lr);
    w.u32(static_cast<std::uint32_t>(state.warmup_epochs));
    w.u32(static_cast<std::uint32_t>(state.total_epochs));
    w.f64(state.beta1);
    w.f64(state.beta2);
    w.f64(state.eps);
    w.u32(static_cast<std::uint32_t>(state.first_moment.size()));
    for (const Matrix& m : state.first_moment) w.f64s(m.data());
    for (const Matrix& v : state.second_moment) w.f64s(v.data());
}

Bytes save_params(const DenoiserModel& model, const OptimizerState& state) {
    ByteWriter w;
    write_params(w, model, state);
    return w.take();
}

std::pair<DenoiserModel, OptimizerState> read_params(ByteReader& r) {
    constexpr std::string_view what = "model checkpoint";
    r.expect_magic("LRDM", what);
    const std::uint32_t version = r.u32(what);
    if (version != kCheckpointVersion)
        throw FormatError("model checkpoint: unsupported version " + std::to_string(version));
    DenoiserConfig c;
    for (int* dim : {&c.n_classes, &c.feat_dim, &c.raw_dim, &c.hidden, &c.time_embed_dim,
                     &c.blocks, &c.max_t}) {
        const std::uint32_t v = r.u32(what);
        if (v > (1u << 24)) throw FormatError("model checkpoint: implausible dimension");
        *dim = static_cast<int>(v);
    }
    DenoiserModel model = [&] {
        try {
            return DenoiserModel(c, 0);
        } catch (const std::invalid_argument& e) {
            throw FormatError(std::string("model checkpoint: invalid architecture: ") + e.what());
        }
    }();
    for (Matrix& p : model.parameters()) r.f64s(p.data(), what);
    for (Matrix& s : model.running_stats()) r.f64s(s.data(), what);
    model.mark_modified();

    r.expect_magic("LROS", "optimizer state");
    const std::uint32_t opt_version = r.u32("optimizer state");
    if (opt_version != kOptimizerVersion)
        throw FormatError("optimizer state: unsupported version " + std::to_string(opt_version));
    OptimizerState s;
    s.step_count = r.u64("optimizer state");
    s.base_lr = r.f64("optimizer state");
    s.warmup_epochs = static_cast<int>(r.u32("optimizer state"));
    s.total_epochs = static_cast<int>(r.u32("optimizer state"));
    s.beta1 = r.f64("optimizer state");
    s.beta2 = r.f64("optimizer state");
    s.eps = r.f64("optimizer state");
    const std::uint32_t count = r.u32("optimizer state");
    if (count != model.parameters().size())
        throw FormatError("optimizer state: tensor count does not match architecture");
    for (const Matrix& p : model.parameters()) s.first_moment.emplace_back(p.rows(), p.cols());
    for (const Matrix& p : model.parameters()) s.second_moment.emplace_back(p.rows(), p.cols());
    for (Matrix& m : s.first_moment) r.f64s(m.data(), "optimizer state");
    for (Matrix& v : s.second_moment) r.f64s(v.data(), "optimizer state");
    return {std::move(model), std::move(s)};
}

std::pair<DenoiserModel, OptimizerState> load_params(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    auto result = read_params(r);
    if (r.remaining() != 0) throw FormatError("model checkpoint: trailing bytes");
    return result;
}

std::pair<DenoiserModel, OptimizerState> load_params(std::span<const std::uint8_t> bytes,
                                                     const DenoiserConfig& expected) {
    auto result = load_params(bytes);
    const auto& got = result.first.config();
    if (!(got == expected))
        throw DimensionError("checkpoint architecture (n_classes=" + std::to_string(got.n_classes) +
                             ", feat_dim=" + std::to_string(got.feat_dim) +
                             ", hidden=" + std::to_string(got.hidden) +
                             ") does not match the requested model (n_classes=" +
                             std::to_string(expected.n_classes) +
                             ", feat_dim=" + std::to_string(expected.feat_dim) +
                             ", hidden=" + std::to_string(expected.hidden) + ")");
    return result;
}

}  // namespace lradiff
