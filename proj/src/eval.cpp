#include "scl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "scl/errors.hpp"

namespace scl {

namespace {

constexpr std::size_t kEmbedChunk = 64;

}  // namespace

Tensor embed(std::span<const ImageSample> images, ModelParams& params, bool append_local) {
    if (images.empty()) throw ShapeError("embed: no images");
    const std::size_t d = params.dims.key_dim, width = append_local ? 2 * d : d;
    Tensor out({images.size(), width});
    // Eval-mode BN makes every row independent of its chunk.
    for (std::size_t start = 0; start < images.size(); start += kEmbedChunk) {
        const std::size_t count = std::min(kEmbedChunk, images.size() - start);
        std::vector<const ImageSample*> ptrs;
        for (std::size_t i = 0; i < count; ++i) ptrs.push_back(&images[start + i]);
        const auto keys = compute_keys(ptrs, params, false);
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                out.at(start + i, c) = keys.global.at(i, c);
                if (append_local) out.at(start + i, d + c) = keys.local_concat.at(i, c);
            }
        }
    }
    return out;
}

Tensor distance_matrix(const Tensor& queries, const Tensor& gallery) {
    if (queries.cols() != gallery.cols()) {
        throw ShapeError("distance_matrix: query features " + shape_str(queries.shape()) + " vs gallery " +
                         shape_str(gallery.shape()));
    }
    Tensor out({queries.rows(), gallery.rows()});
    for (std::size_t q = 0; q < queries.rows(); ++q)
        for (std::size_t g = 0; g < gallery.rows(); ++g) out.at(q, g) = euclidean_distance(queries.row(q), gallery.row(g));
    return out;
}

Labels labels_of(std::span<const ImageSample> images) {
    Labels l;
    for (const auto& s : images) {
        l.ids.push_back(s.identity);
        l.cams.push_back(s.camera);
    }
    return l;
}

RankingReport rank_gallery(const Tensor& dists, const Labels& query, const Labels& gallery,
                           std::span<const std::size_t> ks, bool exclude_same_camera) {
    const std::size_t nq = query.ids.size(), ng = gallery.ids.size();
    if (dists.rows() != nq || dists.cols() != ng || query.cams.size() != nq || gallery.cams.size() != ng) {
        throw ShapeError("rank_gallery: distances " + shape_str(dists.shape()) + " for " + std::to_string(nq) +
                         " queries and " + std::to_string(ng) + " gallery entries");
    }
    RankingReport r;
    for (auto k : ks) {
        if (k == 0) throw std::invalid_argument("rank_gallery: rank k must be positive");
        r.cmc[k] = 0.0;
    }
    double ap_sum = 0.0;
    std::vector<std::size_t> order;
    for (std::size_t q = 0; q < nq; ++q) {
        const auto row = dists.row(q);
        order.clear();
        for (std::size_t g = 0; g < ng; ++g) {
            if (std::isnan(row[g])) throw NumericalError("rank_gallery: NaN distance at (" + std::to_string(q) + ", " +
                                                         std::to_string(g) + ")");
            const bool same = gallery.ids[g] == query.ids[q] && gallery.cams[g] == query.cams[q];
            if (!(exclude_same_camera && same)) order.push_back(g);
        }
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return row[a] < row[b] || (row[a] == row[b] && a < b); });
        std::size_t first = order.size(), hits = 0;
        double precision_sum = 0.0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            if (gallery.ids[order[pos]] != query.ids[q]) continue;
            if (hits == 0) first = pos;
            ++hits;
            precision_sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
        }
        if (hits == 0) {
            ++r.num_excluded;
            continue;
        }
        ++r.num_queries;
        for (auto& [k, rate] : r.cmc)
            if (first < k) rate += 1.0;
        ap_sum += precision_sum / static_cast<double>(hits);
    }
    if (r.num_queries > 0) {
        const double n = static_cast<double>(r.num_queries);
        for (auto& [k, rate] : r.cmc) rate /= n;
        r.map = ap_sum / n;
    }
    return r;
}

std::map<std::size_t, double> cmc_rank_k(const Tensor& dists, const Labels& query, const Labels& gallery,
                                         std::span<const std::size_t> ks, bool exclude_same_camera) {
    return rank_gallery(dists, query, gallery, ks, exclude_same_camera).cmc;
}

double mean_average_precision(const Tensor& dists, const Labels& query, const Labels& gallery,
                              bool exclude_same_camera) {
    return rank_gallery(dists, query, gallery, {}, exclude_same_camera).map;
}

RankingReport evaluate_model(const Dataset& data, ModelParams& params, const EvalOptions& opts) {
    const Tensor q = embed(data.query, params, opts.append_local);
    const Tensor g = embed(data.gallery, params, opts.append_local);
    return rank_gallery(distance_matrix(q, g), labels_of(data.query), labels_of(data.gallery), opts.ks,
                        opts.exclude_same_camera);
}

std::string report_json(const RankingReport& r) {
    auto rate = [&](std::size_t k) {
        const auto it = r.cmc.find(k);
        return it == r.cmc.end() ? nlohmann::json(nullptr) : nlohmann::json(it->second);
    };
    nlohmann::ordered_json j;
    j["rank1"] = rate(1);
    j["rank5"] = rate(5);
    j["rank10"] = rate(10);
    j["mAP"] = r.map;
    j["num_queries"] = r.num_queries;
    j["num_excluded"] = r.num_excluded;
    return j.dump(2) + "\n";
}

}  // namespace scl
