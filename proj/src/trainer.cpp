#include "scl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "scl/errors.hpp"
#include "scl/rng.hpp"

namespace scl {

namespace {

enum : std::uint64_t { kShuffleTag = 1, kFlipTag = 2, kNegativeTag = 3, kModelTag = 4 };

}  // namespace

const char* to_string(MixtureKeys k) {
    switch (k) {
        case MixtureKeys::Joint: return "joint";
        case MixtureKeys::Global: return "global";
        case MixtureKeys::Local: return "local";
    }
    return "?";
}

MixtureKeys parse_mixture_keys(const std::string& s) {
    if (s == "joint") return MixtureKeys::Joint;
    if (s == "global") return MixtureKeys::Global;
    if (s == "local") return MixtureKeys::Local;
    throw ConfigError("mixture_keys must be one of joint, global, local (got '" + s + "')");
}

const char* to_string(Phase p) { return p == Phase::Init ? "init" : "train"; }

void TrainConfig::validate(std::size_t sample_count) const {
    if (epochs == 0) throw ConfigError("train: epochs must be positive");
    if (init_epochs >= epochs) throw ConfigError("train: init_epochs must be below epochs");
    if (batch_size == 0) throw ConfigError("train: batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0, 1)");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
        throw ConfigError("train: flip_probability must lie in [0, 1]");
    }
    similarity.validate(sample_count);
    loss.validate();
}

OptimizerState init_optimizer(ModelParams& params) {
    OptimizerState s;
    for (const auto& p : params.parameters()) s.velocity.emplace_back(p.tensor->shape());
    return s;
}

void sgd_momentum_step(std::span<const ModelParams::Named> params, OptimizerState& state, double learning_rate,
                       double momentum) {
    if (state.velocity.size() != params.size()) {
        throw std::invalid_argument("sgd_momentum_step: optimizer holds " + std::to_string(state.velocity.size()) +
                                    " buffers for " + std::to_string(params.size()) + " parameters");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k].tensor;
        Tensor& v = state.velocity[k];
        if (!p.has_grad()) throw std::logic_error("sgd_momentum_step: no gradient for " + params[k].name);
        if (v.shape() != p.shape()) {
            throw ShapeError("sgd_momentum_step: velocity " + shape_str(v.shape()) + " does not match " +
                             params[k].name + " " + shape_str(p.shape()));
        }
        const auto g = p.grad();
        auto pv = p.data();
        auto vv = v.data();
        for (std::size_t i = 0; i < pv.size(); ++i) {
            vv[i] = momentum * vv[i] + g[i];
            pv[i] -= learning_rate * vv[i];
        }
    }
}

TrainState init_training(std::size_t sample_count, const ModelDims& dims, const TrainConfig& cfg,
                         bool share_stripe_projection) {
    cfg.validate(sample_count);
    TrainState s;
    s.params = init_model(dims, derive_seed(cfg.seed, {kModelTag}), share_stripe_projection);
    s.banks = init_banks(sample_count, dims.key_dim, dims.stripes);
    s.optimizer = init_optimizer(s.params);
    return s;
}

std::vector<std::size_t> epoch_order(std::size_t sample_count, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(sample_count);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, {kShuffleTag, epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

std::vector<std::size_t> random_negatives(std::size_t count, std::size_t anchor, std::size_t n, std::uint64_t seed,
                                          std::size_t epoch) {
    if (anchor >= count) throw std::out_of_range("random_negatives: anchor outside the sample range");
    if (n > count - 1) {
        throw ConfigError("random_negatives: " + std::to_string(n) + " negatives requested from " +
                          std::to_string(count - 1) + " candidates");
    }
    std::vector<std::size_t> pool;
    pool.reserve(count - 1);
    for (std::size_t j = 0; j < count; ++j)
        if (j != anchor) pool.push_back(j);
    std::mt19937_64 rng(derive_seed(seed, {kNegativeTag, epoch, anchor}));
    // Partial Fisher-Yates: the first n slots become a uniform draw without replacement.
    for (std::size_t k = 0; k < n; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
        std::swap(pool[k], pool[pick(rng)]);
    }
    pool.resize(n);
    return pool;
}

namespace {

struct BatchKeys {
    std::vector<double> global, stripes, local;
};

std::vector<double> row_copy(const Tensor& t, std::size_t first_row, std::size_t rows) {
    const std::size_t c = t.cols();
    const auto d = t.data().subspan(first_row * c, rows * c);
    return {d.begin(), d.end()};
}

// Builds the (L_g, L_l) nodes of one sample from its graph keys.
using SampleLoss =
    std::function<std::pair<Var, Var>(Graph& g, std::size_t sample, Var v_global, Var v_local, const BatchKeys& keys)>;
using SampleUpdate = std::function<void(std::size_t sample, const BatchKeys& keys)>;

EpochStats run_phase(std::span<const ImageSample> train, TrainState& state, const TrainConfig& cfg, Phase phase,
                     const TrainHooks& hooks, const SampleLoss& build_loss, const SampleUpdate& update_banks) {
    const std::size_t n = train.size();
    if (state.banks.size() != n) {
        throw std::invalid_argument("train: bank holds " + std::to_string(state.banks.size()) + " rows for " +
                                    std::to_string(n) + " samples");
    }
    const ModelDims& dims = state.params.dims;
    const std::size_t epoch = state.epoch;
    const auto order = epoch_order(n, cfg.seed, epoch);
    auto params = state.params.parameters();

    EpochStats stats;
    stats.epoch = epoch;
    stats.phase = phase;
    double sum_g = 0.0, sum_l = 0.0, sum_t = 0.0;

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
        const std::size_t batch = std::min(cfg.batch_size, n - start);
        std::vector<ImageSample> images;
        images.reserve(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t i = order[start + b];
            std::mt19937_64 rng(derive_seed(cfg.seed, {kFlipTag, epoch, i}));
            images.push_back(augment_flip(train[i], cfg.flip_probability, rng));
        }
        std::vector<const ImageSample*> ptrs;
        for (const auto& im : images) ptrs.push_back(&im);

        Graph g;
        const auto m = bind_model(g, state.params, true);
        const auto fmap = extract_features(g, m, g.input("patches", patchify(ptrs, dims)), batch);
        const auto keys = project_keys(g, m, pool_features(g, fmap, batch, dims), dims, true);

        std::vector<BatchKeys> batch_keys(batch);
        Var total;
        std::vector<Var> per_global, per_local;
        for (std::size_t b = 0; b < batch; ++b) {
            BatchKeys& k = batch_keys[b];
            k.global = row_copy(g.value(keys.global), b, 1);
            k.stripes = row_copy(g.value(keys.stripes), b * dims.stripes, dims.stripes);
            k.local = row_copy(g.value(keys.local_concat), b, 1);
            const auto [lg, ll] = build_loss(g, order[start + b], g.slice_rows(keys.global, b, 1),
                                             g.slice_rows(keys.local_concat, b, 1), k);
            per_global.push_back(lg);
            per_local.push_back(ll);
            const Var t = total_loss(g, lg, ll, cfg.loss.lambda_p);
            total = total.valid() ? g.add(total, t) : t;
        }

        // Every parameter gets a zeroed buffer, including ones off the loss path.
        for (auto& p : params) {
            p.tensor->ensure_grad();
            p.tensor->zero_grad();
        }
        g.backward(total);
        sgd_momentum_step(params, state.optimizer, cfg.learning_rate, cfg.momentum);
        update_running_stats(state.params, g, keys);
        ++stats.steps;
        if (hooks.after_step) hooks.after_step(state.banks);

        for (std::size_t b = 0; b < batch; ++b) {
            const double lg = g.value(per_global[b]).item(), ll = g.value(per_local[b]).item();
            sum_g += lg;
            sum_l += ll;
            sum_t += total_loss(lg, ll, cfg.loss.lambda_p);
        }
        for (std::size_t b = 0; b < batch; ++b) update_banks(order[start + b], batch_keys[b]);
    }
    const double count = static_cast<double>(n);
    stats.loss_global = sum_g / count;
    stats.loss_local = sum_l / count;
    stats.loss_total = sum_t / count;
    if (!std::isfinite(stats.loss_total)) {
        throw NumericalError("train: non-finite loss in epoch " + std::to_string(epoch));
    }
    return stats;
}

void write_banks(MemoryBanks& banks, MixtureKeys mode, std::size_t anchor, std::span<const std::size_t> positives,
                 const BatchKeys& k, const TrainHooks& hooks) {
    banks.update_anchor_global(anchor, k.global);
    banks.update_anchor_local(anchor, k.stripes);
    const std::span<const double> none;
    banks.update_mixture_positives(positives, mode == MixtureKeys::Local ? none : std::span<const double>(k.global),
                                   mode == MixtureKeys::Global ? none : std::span<const double>(k.local));
    if (hooks.after_update) hooks.after_update(banks, BankUpdate{anchor, {positives.begin(), positives.end()}});
}

}  // namespace

EpochStats run_init_epoch(std::span<const ImageSample> train, TrainState& state, const TrainConfig& cfg,
                          const TrainHooks& hooks) {
    const std::size_t n = train.size(), epoch = state.epoch;
    auto loss = [&](Graph& g, std::size_t i, Var vg, Var vl, const BatchKeys&) {
        const auto neg = random_negatives(n, i, cfg.similarity.n_minus, cfg.seed, epoch);
        return std::pair{init_contrastive_loss(g, vg, state.banks, i, neg, cfg.loss),
                         init_contrastive_loss(g, vl, state.banks, i, neg, cfg.loss)};
    };
    auto update = [&](std::size_t i, const BatchKeys& k) {
        const std::size_t self[] = {i};
        write_banks(state.banks, cfg.mixture_keys, i, self, k, hooks);
    };
    return run_phase(train, state, cfg, Phase::Init, hooks, loss, update);
}

EpochStats run_train_epoch(std::span<const ImageSample> train, TrainState& state, const TrainConfig& cfg,
                           const TrainHooks& hooks) {
    std::vector<std::uint16_t> cameras;
    cameras.reserve(train.size());
    for (const auto& s : train) cameras.push_back(s.camera);
    std::vector<SampleSelection> selections(train.size());
    auto loss = [&](Graph& g, std::size_t i, Var vg, Var vl, const BatchKeys& k) {
        selections[i] = partition_and_select(i, k.global, k.stripes, state.banks, cameras, cfg.similarity);
        return std::pair{selective_contrastive_loss(g, vg, state.banks, selections[i], cfg.loss),
                         selective_contrastive_loss(g, vl, state.banks, selections[i], cfg.loss)};
    };
    auto update = [&](std::size_t i, const BatchKeys& k) {
        write_banks(state.banks, cfg.mixture_keys, i, selections[i].positives, k, hooks);
    };
    return run_phase(train, state, cfg, Phase::Train, hooks, loss, update);
}

EpochStats run_epoch(std::span<const ImageSample> train, TrainState& state, const TrainConfig& cfg,
                     const TrainHooks& hooks) {
    if (state.epoch >= cfg.epochs) {
        throw std::logic_error("run_epoch: all " + std::to_string(cfg.epochs) + " epochs already ran");
    }
    auto stats = state.epoch < cfg.init_epochs ? run_init_epoch(train, state, cfg, hooks)
                                               : run_train_epoch(train, state, cfg, hooks);
    ++state.epoch;
    return stats;
}

}  // namespace scl
