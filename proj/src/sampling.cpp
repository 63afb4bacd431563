#include "scl/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "scl/errors.hpp"
#include "scl/tensor.hpp"

namespace scl {

void SimilarityConfig::validate(std::size_t sample_count) const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("similarity: beta must lie in [0, 1]");
    if (!(lambda_c >= 0.0)) throw ConfigError("similarity: lambda_c must be non-negative");
    if (n_plus + n_minus >= sample_count) {
        throw ConfigError("similarity: n_plus + n_minus = " + std::to_string(n_plus + n_minus) +
                          " must be below the training set size " + std::to_string(sample_count));
    }
}

double global_distance(std::span<const double> v_global, const MemoryBanks& banks, std::size_t j) {
    if (!banks.global_initialized(j)) {
        throw std::logic_error("global_distance: bank row " + std::to_string(j) + " was never initialized");
    }
    return euclidean_distance(v_global, banks.global(j));
}

double local_distance(std::span<const double> v_stripes, const MemoryBanks& banks, std::size_t j) {
    if (!banks.local_initialized(j)) {
        throw std::logic_error("local_distance: bank row " + std::to_string(j) + " was never initialized");
    }
    const std::size_t d = banks.dim(), nl = banks.stripes();
    double s = 0.0;
    for (std::size_t k = 0; k < nl; ++k) s += euclidean_distance(v_stripes.subspan(k * d, d), banks.local(j, k));
    return s / static_cast<double>(nl);
}

double camera_term(std::uint16_t cam_i, std::uint16_t cam_j, double lambda_c) {
    return cam_i == cam_j ? lambda_c : 0.0;
}

double total_distance(double global, double local, double cce, double beta) {
    return beta * global + (1.0 - beta) * local + cce;
}

std::vector<double> anchor_distances(std::size_t anchor, std::span<const double> v_global,
                                     std::span<const double> v_stripes, const MemoryBanks& banks,
                                     std::span<const std::uint16_t> cameras, const SimilarityConfig& cfg) {
    const std::size_t n = banks.size();
    if (cameras.size() != n) throw ShapeError("anchor_distances: camera list does not match bank size");
    if (anchor >= n) throw std::out_of_range("anchor_distances: anchor outside bank");
    std::vector<double> out(n, std::numeric_limits<double>::infinity());
    // Skip the half of the blend that carries zero weight.
    const bool use_global = cfg.beta > 0.0;
    const bool use_local = cfg.beta < 1.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == anchor) continue;
        const double sg = use_global ? global_distance(v_global, banks, j) : 0.0;
        const double sl = use_local ? local_distance(v_stripes, banks, j) : 0.0;
        out[j] = total_distance(sg, sl, camera_term(cameras[anchor], cameras[j], cfg.lambda_c), cfg.beta);
    }
    return out;
}

SampleSelection select_by_distance(std::size_t anchor, std::span<const double> distances, std::size_t n_plus,
                                   std::size_t n_minus) {
    const std::size_t n = distances.size();
    if (anchor >= n) throw std::out_of_range("select_by_distance: anchor outside distance list");
    if (n_plus + n_minus > n - 1) {
        throw ConfigError("select_by_distance: " + std::to_string(n_plus + n_minus) + " samples requested from " +
                          std::to_string(n - 1) + " candidates");
    }
    std::vector<std::size_t> order;
    order.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
        if (j == anchor) continue;
        if (std::isnan(distances[j])) throw NumericalError("select_by_distance: NaN distance to sample " + std::to_string(j));
        order.push_back(j);
    }
    const std::size_t keep = n_plus + n_minus;
    auto less = [&](std::size_t a, std::size_t b) {
        return distances[a] < distances[b] || (distances[a] == distances[b] && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), less);

    SampleSelection sel;
    sel.anchor = anchor;
    sel.positives.reserve(n_plus + 1);
    sel.positives.push_back(anchor);
    sel.positives.insert(sel.positives.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_plus));
    sel.negatives.assign(order.begin() + static_cast<std::ptrdiff_t>(n_plus),
                         order.begin() + static_cast<std::ptrdiff_t>(keep));
    return sel;
}

SampleSelection partition_and_select(std::size_t anchor, std::span<const double> v_global,
                                     std::span<const double> v_stripes, const MemoryBanks& banks,
                                     std::span<const std::uint16_t> cameras, const SimilarityConfig& cfg) {
    const auto dist = anchor_distances(anchor, v_global, v_stripes, banks, cameras, cfg);
    return select_by_distance(anchor, dist, cfg.n_plus, cfg.n_minus);
}

}  // namespace scl
