#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "scl/memory.hpp"

namespace scl {

struct SimilarityConfig {
    double beta = 0.5;       // weight of the global distance
    double lambda_c = 0.005; // same-camera penalty
    std::size_t n_plus = 7;
    std::size_t n_minus = 500;

    // Throws ConfigError unless the ranges hold and n_plus + n_minus < sample_count.
    void validate(std::size_t sample_count) const;
};

struct SampleSelection {
    std::size_t anchor = 0;
    std::vector<std::size_t> positives;  // anchor first, then the n_plus nearest
    std::vector<std::size_t> negatives;  // distance ranks n_plus + 1 .. n_plus + n_minus

    friend bool operator==(const SampleSelection&, const SampleSelection&) = default;
};

// ||v_g - M^g[j]||
double global_distance(std::span<const double> v_global, const MemoryBanks& banks, std::size_t j);
// Mean over stripes of ||v_{i,k} - M^l[j,k]||.
double local_distance(std::span<const double> v_stripes, const MemoryBanks& banks, std::size_t j);
double camera_term(std::uint16_t cam_i, std::uint16_t cam_j, double lambda_c);
double total_distance(double global, double local, double cce, double beta);

// Total distance from the anchor's keys to every bank row; the anchor's own
// entry is +infinity.
std::vector<double> anchor_distances(std::size_t anchor, std::span<const double> v_global,
                                     std::span<const double> v_stripes, const MemoryBanks& banks,
                                     std::span<const std::uint16_t> cameras, const SimilarityConfig& cfg);

// Ranks every j != anchor by ascending distance (ties by ascending index) and
// splits the ranking into similar / borderline / dissimilar segments.
SampleSelection select_by_distance(std::size_t anchor, std::span<const double> distances, std::size_t n_plus,
                                   std::size_t n_minus);

SampleSelection partition_and_select(std::size_t anchor, std::span<const double> v_global,
                                     std::span<const double> v_stripes, const MemoryBanks& banks,
                                     std::span<const std::uint16_t> cameras, const SimilarityConfig& cfg);

}  // namespace scl
