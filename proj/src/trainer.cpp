// SPDX-License-Identifier: Apache-2.0
#include "lradiff/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace lradiff {

namespace {
constexpr std::uint32_t kConfigVersion = 1;

Matrix gather(const Matrix& m, std::span<const std::size_t> rows) {
    if (m.empty()) return Matrix(0, m.cols());
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
    return out;
}
}  // namespace

std::vector<EpochStats> train_denoiser(const DiffusionConfig& cfg, DenoiserModel& model,
                                       OptimizerState& opt, const Conditioning& data,
                                       std::span<const CandidateSet> candidates,
                                       const TrainConfig& train,
                                       const std::function<void(const EpochStats&)>& on_epoch) {
    cfg.validate();
    const std::size_t n = data.size();
    if (n == 0) throw std::invalid_argument("train_denoiser: empty training set");
    if (candidates.size() != n)
        throw std::invalid_argument("train_denoiser: one candidate set per training point required");
    if (train.batch_size < 1 || train.epochs < 1)
        throw std::invalid_argument("train_denoiser: batch size and epochs must be >= 1");
    for (const auto& c : candidates) c.validate(cfg.n_classes);

    Rng rng(train.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<EpochStats> history;
    const auto width = static_cast<std::size_t>(cfg.n_classes);

    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        const double lr = lr_at(epoch, opt);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(train.batch_size)) {
            const std::size_t end = std::min(n, begin + static_cast<std::size_t>(train.batch_size));
            const std::span<const std::size_t> rows(order.data() + begin, end - begin);
            TrainingBatch batch{Matrix(rows.size(), width),
                                {gather(data.f_p, rows), gather(data.x_raw, rows), gather(data.f_q, rows)}};
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const auto& cand = candidates[rows[i]];
                const auto y0 = train.target_mode == TargetMode::sample
                                    ? sample_target(cand, cfg.n_classes, rng)
                                    : mean_target(cand, cfg.n_classes);
                std::copy(y0.begin(), y0.end(), batch.y0.row(i).begin());
            }
            const LossEvaluation ev = training_loss(cfg, model, batch, rng);
            const Gradients grads = model.backward(ev.cache, ev.d_output);
            adam_step(model, opt, grads, lr);
            loss_sum += ev.loss * static_cast<double>(rows.size());
            seen += rows.size();
        }
        EpochStats stats{epoch, loss_sum / static_cast<double>(seen), lr};
        history.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    return history;
}

Bytes encode_checkpoint(const Checkpoint& ckpt) {
    ByteWriter w;
    write_params(w, ckpt.model, ckpt.optimizer);
    w.magic("LRDC");
    w.u32(kConfigVersion);
    w.u32(static_cast<std::uint32_t>(ckpt.diffusion.steps()));
    w.f64s(ckpt.diffusion.schedule.betas());
    w.u32(static_cast<std::uint32_t>(ckpt.diffusion.sample_steps));
    w.u32(ckpt.diffusion.fq_mode == FqMode::zero ? 0u : 1u);
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    constexpr std::string_view what = "diffusion config";
    ByteReader r(bytes);
    auto [model, opt] = read_params(r);
    r.expect_magic("LRDC", what);
    if (const auto v = r.u32(what); v != kConfigVersion)
        throw FormatError("diffusion config: unsupported version " + std::to_string(v));
    const std::uint32_t steps = r.u32(what);
    if (steps == 0 || steps > r.remaining() / 8) throw FormatError("diffusion config: bad step count");
    std::vector<double> betas(steps);
    r.f64s(betas, what);
    const std::uint32_t sample_steps = r.u32(what);
    const std::uint32_t fq = r.u32(what);
    if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
    if (fq > 1) throw FormatError("diffusion config: unknown f_q mode");
    DiffusionConfig cfg;
    try {
        cfg.schedule = NoiseSchedule(std::move(betas));
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("diffusion config: ") + e.what());
    }
    cfg.sample_steps = static_cast<int>(sample_steps);
    cfg.fq_mode = fq == 0 ? FqMode::zero : FqMode::provided;
    cfg.n_classes = model.config().n_classes;
    if (cfg.steps() > model.config().max_t)
        throw FormatError("checkpoint: schedule longer than the model's time range");
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("diffusion config: ") + e.what());
    }
    return Checkpoint{std::move(cfg), std::move(model), std::move(opt)};
}

}  // namespace lradiff
