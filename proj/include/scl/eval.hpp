#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "scl/model.hpp"
#include "scl/synthdata.hpp"
#include "scl/tensor.hpp"

namespace scl {

struct EvalOptions {
    // Drop gallery entries sharing both identity and camera with the query.
    bool exclude_same_camera = true;
    // Append the concatenated local key to the global key.
    bool append_local = false;
    std::vector<std::size_t> ks{1, 5, 10};
};

// Retrieval features in eval mode, one row per image.
Tensor embed(std::span<const ImageSample> images, ModelParams& params, bool append_local = false);

// Entry (q, g) = ||queries[q] - gallery[g]||.
Tensor distance_matrix(const Tensor& queries, const Tensor& gallery);

struct Labels {
    std::vector<std::uint32_t> ids;
    std::vector<std::uint16_t> cams;
};

Labels labels_of(std::span<const ImageSample> images);

struct RankingReport {
    std::map<std::size_t, double> cmc;  // k -> rate
    double map = 0.0;
    std::size_t num_queries = 0;   // queries scored
    std::size_t num_excluded = 0;  // queries skipped for lack of a valid match
};

// Gallery order per query is ascending distance, ties by gallery index.
RankingReport rank_gallery(const Tensor& dists, const Labels& query, const Labels& gallery,
                           std::span<const std::size_t> ks, bool exclude_same_camera = true);
std::map<std::size_t, double> cmc_rank_k(const Tensor& dists, const Labels& query, const Labels& gallery,
                                         std::span<const std::size_t> ks, bool exclude_same_camera = true);
double mean_average_precision(const Tensor& dists, const Labels& query, const Labels& gallery,
                              bool exclude_same_camera = true);

// Full pipeline: embed query and gallery, rank, score.
RankingReport evaluate_model(const Dataset& data, ModelParams& params, const EvalOptions& opts = {});

// {"mAP", "num_excluded", "num_queries", "rank1", "rank5", "rank10"} with fixed formatting.
std::string report_json(const RankingReport& r);

}  // namespace scl
