#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scl/loss.hpp"
#include "scl/memory.hpp"
#include "scl/model.hpp"
#include "scl/sampling.hpp"
#include "scl/synthdata.hpp"

namespace scl {

// Which keys feed the mixture bank updates.
enum class MixtureKeys { Joint, Global, Local };

const char* to_string(MixtureKeys k);
MixtureKeys parse_mixture_keys(const std::string& s);

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t init_epochs = 5;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    double flip_probability = 0.5;
    MixtureKeys mixture_keys = MixtureKeys::Joint;
    SimilarityConfig similarity;
    LossConfig loss;

    void validate(std::size_t sample_count) const;
};

// Velocity buffers aligned with ModelParams::parameters().
struct OptimizerState {
    std::vector<Tensor> velocity;

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

OptimizerState init_optimizer(ModelParams& params);

// v <- momentum * v + grad; p <- p - lr * v, for every tensor in `params`.
void sgd_momentum_step(std::span<const ModelParams::Named> params, OptimizerState& state, double learning_rate,
                       double momentum);

struct TrainState {
    ModelParams params;
    MemoryBanks banks;
    OptimizerState optimizer;
    std::size_t epoch = 0;  // completed epochs
};

TrainState init_training(std::size_t sample_count, const ModelDims& dims, const TrainConfig& cfg,
                         bool share_stripe_projection = false);

enum class Phase { Init, Train };
const char* to_string(Phase p);

struct EpochStats {
    std::size_t epoch = 0;  // zero-based index of the epoch just run
    Phase phase = Phase::Init;
    // Per-sample means.
    double loss_global = 0.0;
    double loss_local = 0.0;
    double loss_total = 0.0;
    std::size_t steps = 0;
};

// Instrumentation points. after_step fires once per batch after backward and
// the optimizer step, before any bank write; after_update fires after each
// sample's bank updates.
struct BankUpdate {
    std::size_t anchor = 0;
    std::vector<std::size_t> mixture_rows;
};

struct TrainHooks {
    std::function<void(const MemoryBanks&)> after_step;
    std::function<void(const MemoryBanks&, const BankUpdate&)> after_update;
};

EpochStats run_init_epoch(std::span<const ImageSample> train, TrainState& state, const TrainConfig& cfg,
                          const TrainHooks& hooks = {});
EpochStats run_train_epoch(std::span<const ImageSample> train, TrainState& state, const TrainConfig& cfg,
                           const TrainHooks& hooks = {});
// Runs the next epoch in the appropriate phase and advances state.epoch.
EpochStats run_epoch(std::span<const ImageSample> train, TrainState& state, const TrainConfig& cfg,
                     const TrainHooks& hooks = {});

// The sample order of one epoch.
std::vector<std::size_t> epoch_order(std::size_t sample_count, std::uint64_t seed, std::size_t epoch);

// n distinct indices from [0, count) excluding `anchor`, seeded per (epoch, anchor).
std::vector<std::size_t> random_negatives(std::size_t count, std::size_t anchor, std::size_t n, std::uint64_t seed,
                                          std::size_t epoch);

}  // namespace scl
