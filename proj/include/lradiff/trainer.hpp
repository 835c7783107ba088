// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "lradiff/denoiser.hpp"
#include "lradiff/diffusion.hpp"
#include "lradiff/retrieval.hpp"

namespace lradiff {

/// How a training target y0 is built from a point's candidate set.
enum class TargetMode { sample, mean };

struct TrainConfig {
    int epochs = 200;
    int batch_size = 256;
    double lr = 1e-3;
    int warmup_epochs = 10;
    TargetMode target_mode = TargetMode::sample;
    std::uint64_t seed = 0;
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
};

/// Label-retrieval-augmented training: each visit of a point draws a fresh
/// target from {y, y^(1), ..., y^(k)} (or uses their mean), and takes an Adam
/// step on the noise-prediction loss. Batches follow a seeded permutation
/// per epoch.
std::vector<EpochStats> train_denoiser(const DiffusionConfig& cfg, DenoiserModel& model,
                                       OptimizerState& opt, const Conditioning& data,
                                       std::span<const CandidateSet> candidates,
                                       const TrainConfig& train,
                                       const std::function<void(const EpochStats&)>& on_epoch = {});

/// Everything inference needs, persisted as one file: the "LRDM" model block
/// followed by an "LRDC" block (u32 version, u32 T, T f64 betas, u32 S,
/// u32 f_q mode).
struct Checkpoint {
    DiffusionConfig diffusion;
    DenoiserModel model;
    OptimizerState optimizer;
};

Bytes encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace lradiff
