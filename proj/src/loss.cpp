#include "scl/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scl/errors.hpp"

namespace scl {

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("loss: tau must be positive");
    if (!(lambda_t >= 0.0 && lambda_t <= 1.0)) throw ConfigError("loss: lambda_t must lie in [0, 1]");
    if (!(alpha > 0.0)) throw ConfigError("loss: alpha must be positive");
    if (!(lambda_p >= 0.0 && lambda_p <= 1.0)) throw ConfigError("loss: lambda_p must lie in [0, 1]");
}

std::vector<double> contribution_factors(std::span<const std::size_t> positives, std::size_t anchor,
                                         const LossConfig& cfg) {
    if (std::find(positives.begin(), positives.end(), anchor) == positives.end()) {
        throw std::invalid_argument("contribution_factors: anchor " + std::to_string(anchor) +
                                    " is not among the positives");
    }
    const double other = cfg.alpha * (1.0 - cfg.lambda_t) / static_cast<double>(positives.size());
    std::vector<double> mu(positives.size());
    for (std::size_t k = 0; k < positives.size(); ++k) mu[k] = positives[k] == anchor ? cfg.lambda_t : other;
    return mu;
}

namespace {

// -log( sum_k w_k exp(v.M[k]/tau) / sum_k exp(v.M[k]/tau) ) over `keys`.
Var weighted_contrast(Graph& g, Var v, const MemoryBanks& banks, const std::vector<std::size_t>& keys,
                      std::vector<double> weights, double tau) {
    const std::size_t d = banks.dim(), n = keys.size();
    Tensor table({d, n});
    for (std::size_t c = 0; c < n; ++c) {
        const auto row = banks.mixture(keys[c]);
        for (std::size_t r = 0; r < d; ++r) {
            if (!std::isfinite(row[r])) {
                throw NumericalError("contrastive loss: mixture key " + std::to_string(keys[c]) + " is not finite");
            }
            table[r * n + c] = row[r];
        }
    }
    const Var row = g.reshape(v, {1, d});
    const Var logits = g.scale(g.matmul(row, g.constant(std::move(table))), 1.0 / tau);
    if (g.evaluated(logits)) {
        const Tensor& l = g.value(logits);
        for (std::size_t c = 0; c < n; ++c) {
            if (!std::isfinite(l[c])) {
                throw NumericalError("contrastive loss: logit for key " + std::to_string(keys[c]) + " is not finite");
            }
        }
    }
    const Var num = g.weighted_log_sum_exp(logits, std::move(weights));
    const Var den = g.weighted_log_sum_exp(logits, std::vector<double>(n, 1.0));
    const Var loss = g.reshape(g.sub(den, num), {1});
    if (g.evaluated(loss) && !std::isfinite(g.value(loss).item())) {
        throw NumericalError("contrastive loss: non-finite value for anchor key " + std::to_string(keys.front()));
    }
    return loss;
}

LossValue run_value(std::span<const double> v, const std::function<Var(Graph&, Var)>& build) {
    Graph g;
    const Var in = g.input("v", Tensor({v.size()}, std::vector<double>(v.begin(), v.end())), true);
    const Var loss = build(g, in);
    g.backward(loss);
    const auto grad = g.grad(in).data();
    return {g.value(loss).item(), std::vector<double>(grad.begin(), grad.end())};
}

}  // namespace

Var selective_contrastive_loss(Graph& g, Var v, const MemoryBanks& banks, const SampleSelection& sel,
                               const LossConfig& cfg) {
    auto weights = contribution_factors(sel.positives, sel.anchor, cfg);
    std::vector<std::size_t> keys(sel.positives);
    keys.insert(keys.end(), sel.negatives.begin(), sel.negatives.end());
    weights.resize(keys.size(), 0.0);
    return weighted_contrast(g, v, banks, keys, std::move(weights), cfg.tau);
}

Var init_contrastive_loss(Graph& g, Var v, const MemoryBanks& banks, std::size_t anchor,
                          std::span<const std::size_t> negatives, const LossConfig& cfg) {
    if (std::find(negatives.begin(), negatives.end(), anchor) != negatives.end()) {
        throw std::invalid_argument("init_contrastive_loss: anchor " + std::to_string(anchor) +
                                    " appears among its negatives");
    }
    std::vector<std::size_t> keys{anchor};
    keys.insert(keys.end(), negatives.begin(), negatives.end());
    std::vector<double> weights(keys.size(), 0.0);
    weights[0] = 1.0;
    return weighted_contrast(g, v, banks, keys, std::move(weights), cfg.tau);
}

Var total_loss(Graph& g, Var loss_global, Var loss_local, double lambda_p) {
    return g.add(g.scale(loss_global, 1.0 - lambda_p), g.scale(loss_local, lambda_p));
}

double total_loss(double loss_global, double loss_local, double lambda_p) {
    return (1.0 - lambda_p) * loss_global + lambda_p * loss_local;
}

LossValue selective_contrastive_loss(std::span<const double> v, const MemoryBanks& banks, const SampleSelection& sel,
                                     const LossConfig& cfg) {
    return run_value(v, [&](Graph& g, Var in) { return selective_contrastive_loss(g, in, banks, sel, cfg); });
}

LossValue init_contrastive_loss(std::span<const double> v, const MemoryBanks& banks, std::size_t anchor,
                                std::span<const std::size_t> negatives, const LossConfig& cfg) {
    return run_value(v, [&](Graph& g, Var in) { return init_contrastive_loss(g, in, banks, anchor, negatives, cfg); });
}

}  // namespace scl
