#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scl/autodiff.hpp"
#include "scl/synthdata.hpp"
#include "scl/tensor.hpp"

namespace scl {

struct ModelDims {
    std::size_t image_height = 32;
    std::size_t image_width = 16;
    std::size_t image_channels = 3;
    std::size_t map_height = 8;
    std::size_t map_width = 4;
    std::size_t channels = 64;  // encoder output channels C
    std::size_t hidden = 64;    // first encoder stage width
    std::size_t stripes = 8;    // N_l
    std::size_t key_dim = 64;   // d

    void validate() const;
    std::size_t patch_rows() const { return image_height / map_height; }
    std::size_t patch_cols() const { return image_width / map_width; }
    std::size_t patch_size() const { return patch_rows() * patch_cols() * image_channels; }
    std::size_t cells() const { return map_height * map_width; }
};

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
};

struct BatchNormState {
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
};

// FC -> BN -> L2-normalize.
struct Projection {
    Linear fc;
    BatchNormState bn;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kRunningStatDecay = 0.9;

struct ModelParams {
    ModelDims dims;
    // Stripe features reuse proj_global instead of their own projection.
    bool share_stripe_projection = false;
    Linear enc1;
    // Added to the first stage per map row, [map_height, hidden].
    Tensor row_bias;
    Linear enc2;
    Projection proj_global;
    Projection proj_stripe;
    Projection proj_concat;

    struct Named {
        std::string name;
        Tensor* tensor;
    };
    // Trainable tensors in a fixed order.
    std::vector<Named> parameters();
    // Running statistics.
    std::vector<Named> buffers();
    const Projection& stripe_projection() const { return share_stripe_projection ? proj_global : proj_stripe; }
};

ModelParams init_model(const ModelDims& dims, std::uint64_t seed, bool share_stripe_projection = false);

// Image batch -> [B * map_height * map_width, patch_size] matrix of non-overlapping patches.
Tensor patchify(std::span<const ImageSample* const> images, const ModelDims& dims);

struct PooledFeatures {
    Tensor global;   // [B, C]
    Tensor stripes;  // [B * N_l, C], image-major
};

struct ProjectedKeys {
    Tensor global;        // [B, d]
    Tensor stripes;       // [B * N_l, d]
    Tensor local_concat;  // [B, d]
};

// Parameter handles inside one graph.
struct BoundProjection {
    Var weight, bias, gamma, beta;
    const BatchNormState* state = nullptr;
};

struct BoundModel {
    Var enc1_weight, enc1_bias, row_bias, enc2_weight, enc2_bias;
    ModelDims dims;
    BoundProjection global, stripe, concat;
};

// track_grad binds trainable tensors as graph parameters, otherwise as constants.
BoundModel bind_model(Graph& g, ModelParams& params, bool track_grad);

struct PooledVars {
    Var global;
    Var stripes;
    std::size_t batch = 0;
};

struct KeyVars {
    Var global;
    Var stripes;
    Var local_concat;
    // Pre-BN activations and the BN nodes, for running statistic updates.
    Var bn_global, bn_stripe, bn_concat;
};

// `patches` holds `batch` images in patchify layout.
Var extract_features(Graph& g, const BoundModel& m, Var patches, std::size_t batch);
PooledVars pool_features(Graph& g, Var fmap, std::size_t batch, const ModelDims& dims);
KeyVars project_keys(Graph& g, const BoundModel& m, const PooledVars& pooled, const ModelDims& dims, bool train);

// Folds the batch statistics of a train-mode forward into the running averages.
void update_running_stats(ModelParams& params, const Graph& g, const KeyVars& keys);

// Value-level conveniences over a private graph (no gradient tracking).
Tensor extract_features(std::span<const ImageSample* const> images, ModelParams& params);
PooledFeatures pool_features(const Tensor& fmap, std::size_t batch, const ModelDims& dims);
ProjectedKeys project_keys(const PooledFeatures& pooled, ModelParams& params, bool train);
ProjectedKeys compute_keys(std::span<const ImageSample* const> images, ModelParams& params, bool train);

}  // namespace scl
