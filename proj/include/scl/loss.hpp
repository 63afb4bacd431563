#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "scl/autodiff.hpp"
#include "scl/memory.hpp"
#include "scl/sampling.hpp"

namespace scl {

struct LossConfig {
    double tau = 0.2;       // temperature
    double lambda_t = 0.5;  // anchor weight
    double alpha = 1.75;    // expanding coefficient for the other positives
    double lambda_p = 0.5;  // weight of the local loss in the total

    void validate() const;
};

// Weights aligned with `positives`: lambda_t for the anchor and
// alpha * (1 - lambda_t) / |positives| for every other entry. They do not sum
// to one in general.
std::vector<double> contribution_factors(std::span<const std::size_t> positives, std::size_t anchor,
                                         const LossConfig& cfg);

// Graph builders. `v` is a single key of shape [d] or [1, d]; bank rows enter
// as constants, so gradients reach v only.
Var selective_contrastive_loss(Graph& g, Var v, const MemoryBanks& banks, const SampleSelection& sel,
                               const LossConfig& cfg);
Var init_contrastive_loss(Graph& g, Var v, const MemoryBanks& banks, std::size_t anchor,
                          std::span<const std::size_t> negatives, const LossConfig& cfg);
Var total_loss(Graph& g, Var loss_global, Var loss_local, double lambda_p);
double total_loss(double loss_global, double loss_local, double lambda_p);

struct LossValue {
    double value = 0.0;
    std::vector<double> grad;  // d loss / d v
};

LossValue selective_contrastive_loss(std::span<const double> v, const MemoryBanks& banks, const SampleSelection& sel,
                                     const LossConfig& cfg);
LossValue init_contrastive_loss(std::span<const double> v, const MemoryBanks& banks, std::size_t anchor,
                                std::span<const std::size_t> negatives, const LossConfig& cfg);

}  // namespace scl
