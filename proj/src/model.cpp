#include "scl/model.hpp"

#include <cmath>
#include <random>

#include "scl/errors.hpp"
#include "scl/rng.hpp"

namespace scl {

void ModelDims::validate() const {
    if (image_height == 0 || image_width == 0 || image_channels == 0 || map_height == 0 || map_width == 0 ||
        channels == 0 || hidden == 0 || stripes == 0 || key_dim == 0) {
        throw ConfigError("model: all dimensions must be positive");
    }
    if (image_height % map_height != 0 || image_width % map_width != 0) {
        throw ConfigError("model: image size must be a multiple of the feature map size");
    }
    if (map_height % stripes != 0) {
        throw ConfigError("model: feature map height " + std::to_string(map_height) + " is not divisible by " +
                          std::to_string(stripes) + " stripes");
    }
}

namespace {

Linear make_linear(std::size_t in, std::size_t out, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Linear l{Tensor({in, out}), Tensor({out})};
    for (auto& v : l.weight.data()) v = dist(rng);
    l.weight.requires_grad = true;
    l.bias.requires_grad = true;
    return l;
}

Projection make_projection(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Projection p;
    p.fc = make_linear(in, out, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
    p.bn.gamma = Tensor({out}, 1.0);
    p.bn.beta = Tensor({out}, 0.0);
    p.bn.gamma.requires_grad = true;
    p.bn.beta.requires_grad = true;
    p.bn.running_mean = Tensor({out}, 0.0);
    p.bn.running_var = Tensor({out}, 1.0);
    return p;
}

void append(std::vector<ModelParams::Named>& out, const std::string& prefix, Projection& p) {
    out.push_back({prefix + ".fc.weight", &p.fc.weight});
    out.push_back({prefix + ".fc.bias", &p.fc.bias});
    out.push_back({prefix + ".bn.gamma", &p.bn.gamma});
    out.push_back({prefix + ".bn.beta", &p.bn.beta});
}

}  // namespace

ModelParams init_model(const ModelDims& dims, std::uint64_t seed, bool share_stripe_projection) {
    dims.validate();
    std::mt19937_64 rng(derive_seed(seed, {0x6d6f64656cULL}));
    ModelParams p;
    p.dims = dims;
    p.share_stripe_projection = share_stripe_projection;
    p.enc1 = make_linear(dims.patch_size(), dims.hidden, std::sqrt(6.0 / static_cast<double>(dims.patch_size())), rng);
    p.enc2 = make_linear(dims.hidden, dims.channels, std::sqrt(6.0 / static_cast<double>(dims.hidden)), rng);
    p.proj_global = make_projection(dims.channels, dims.key_dim, rng);
    p.proj_stripe = make_projection(dims.channels, dims.key_dim, rng);
    p.proj_concat = make_projection(dims.channels * dims.stripes, dims.key_dim, rng);
    // Drawn like the enc1 weights; a zero start leaves the rows nearly alike
    // for many epochs at the default learning rate.
    const double row_bound = std::sqrt(6.0 / static_cast<double>(dims.patch_size()));
    std::uniform_real_distribution<double> row_dist(-row_bound, row_bound);
    p.row_bias = Tensor({dims.map_height, dims.hidden});
    for (auto& v : p.row_bias.data()) v = row_dist(rng);
    p.row_bias.requires_grad = true;
    return p;
}

std::vector<ModelParams::Named> ModelParams::parameters() {
    std::vector<Named> out{{"enc1.weight", &enc1.weight},
                           {"enc1.bias", &enc1.bias},
                           {"enc1.row_bias", &row_bias},
                           {"enc2.weight", &enc2.weight},
                           {"enc2.bias", &enc2.bias}};
    append(out, "proj_global", proj_global);
    if (!share_stripe_projection) append(out, "proj_stripe", proj_stripe);
    append(out, "proj_concat", proj_concat);
    return out;
}

std::vector<ModelParams::Named> ModelParams::buffers() {
    std::vector<Named> out{{"proj_global.bn.running_mean", &proj_global.bn.running_mean},
                           {"proj_global.bn.running_var", &proj_global.bn.running_var}};
    if (!share_stripe_projection) {
        out.push_back({"proj_stripe.bn.running_mean", &proj_stripe.bn.running_mean});
        out.push_back({"proj_stripe.bn.running_var", &proj_stripe.bn.running_var});
    }
    out.push_back({"proj_concat.bn.running_mean", &proj_concat.bn.running_mean});
    out.push_back({"proj_concat.bn.running_var", &proj_concat.bn.running_var});
    return out;
}

Tensor patchify(std::span<const ImageSample* const> images, const ModelDims& dims) {
    if (images.empty()) throw ShapeError("patchify: empty batch");
    const std::size_t ph = dims.patch_rows(), pw = dims.patch_cols(), c = dims.image_channels;
    const std::size_t w = dims.image_width;
    Tensor out({images.size() * dims.cells(), dims.patch_size()});
    std::size_t row = 0;
    for (const ImageSample* img : images) {
        if (img->height != dims.image_height || img->width != dims.image_width || img->channels != c ||
            img->pixels.size() != dims.image_height * w * c) {
            throw ShapeError("patchify: image " + std::to_string(img->height) + "x" + std::to_string(img->width) + "x" +
                             std::to_string(img->channels) + " does not match model input " +
                             std::to_string(dims.image_height) + "x" + std::to_string(w) + "x" + std::to_string(c));
        }
        for (std::size_t my = 0; my < dims.map_height; ++my) {
            for (std::size_t mx = 0; mx < dims.map_width; ++mx, ++row) {
                std::size_t k = 0;
                for (std::size_t dy = 0; dy < ph; ++dy)
                    for (std::size_t dx = 0; dx < pw; ++dx)
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            const std::size_t y = my * ph + dy, x = mx * pw + dx;
                            out.at(row, k++) = img->pixels[(y * w + x) * c + ch];
                        }
            }
        }
    }
    return out;
}

BoundModel bind_model(Graph& g, ModelParams& params, bool track_grad) {
    auto bind = [&](Tensor& t) { return track_grad ? g.parameter(t) : g.constant(t); };
    auto bind_proj = [&](Projection& p) {
        return BoundProjection{bind(p.fc.weight), bind(p.fc.bias), bind(p.bn.gamma), bind(p.bn.beta), &p.bn};
    };
    BoundModel m;
    m.enc1_weight = bind(params.enc1.weight);
    m.enc1_bias = bind(params.enc1.bias);
    m.row_bias = bind(params.row_bias);
    m.dims = params.dims;
    m.enc2_weight = bind(params.enc2.weight);
    m.enc2_bias = bind(params.enc2.bias);
    m.global = bind_proj(params.proj_global);
    m.stripe = params.share_stripe_projection ? m.global : bind_proj(params.proj_stripe);
    m.concat = bind_proj(params.proj_concat);
    return m;
}

Var extract_features(Graph& g, const BoundModel& m, Var patches, std::size_t batch) {
    const ModelDims& d = m.dims;
    Tensor rows({batch * d.cells(), d.map_height});
    for (std::size_t r = 0; r < rows.rows(); ++r) rows.at(r, (r % d.cells()) / d.map_width) = 1.0;
    auto pre = g.add_bias(g.matmul(patches, m.enc1_weight), m.enc1_bias);
    auto h = g.relu(g.add(pre, g.matmul(g.constant(std::move(rows)), m.row_bias)));
    return g.relu(g.add_bias(g.matmul(h, m.enc2_weight), m.enc2_bias));
}

PooledVars pool_features(Graph& g, Var fmap, std::size_t batch, const ModelDims& dims) {
    const std::size_t cells = dims.cells();
    const std::size_t rows_per_stripe = dims.map_height / dims.stripes;
    std::vector<std::vector<std::size_t>> global_groups(batch), stripe_groups(batch * dims.stripes);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t y = 0; y < dims.map_height; ++y) {
            for (std::size_t x = 0; x < dims.map_width; ++x) {
                const std::size_t row = b * cells + y * dims.map_width + x;
                global_groups[b].push_back(row);
                stripe_groups[b * dims.stripes + y / rows_per_stripe].push_back(row);
            }
        }
    }
    return {g.row_group_mean(fmap, std::move(global_groups)), g.row_group_mean(fmap, std::move(stripe_groups)), batch};
}

namespace {

struct ProjectedVar {
    Var key;
    Var bn;
};

ProjectedVar project(Graph& g, const BoundProjection& p, Var x, bool train) {
    auto z = g.add_bias(g.matmul(x, p.weight), p.bias);
    auto n = train ? g.batch_norm(z, p.gamma, p.beta, kBatchNormEps)
                   : g.batch_norm_inference(z, p.gamma, p.beta, p.state->running_mean, p.state->running_var,
                                            kBatchNormEps);
    return {g.l2_normalize_rows(n), n};
}

void fold_stats(BatchNormState& bn, const Graph::BatchStats& stats, std::size_t rows) {
    const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
    for (std::size_t j = 0; j < stats.mean.size(); ++j) {
        bn.running_mean[j] = kRunningStatDecay * bn.running_mean[j] + (1.0 - kRunningStatDecay) * stats.mean[j];
        bn.running_var[j] = kRunningStatDecay * bn.running_var[j] + (1.0 - kRunningStatDecay) * stats.var[j] * unbias;
    }
}

}  // namespace

KeyVars project_keys(Graph& g, const BoundModel& m, const PooledVars& pooled, const ModelDims& dims, bool train) {
    KeyVars k;
    const auto global = project(g, m.global, pooled.global, train);
    const auto stripes = project(g, m.stripe, pooled.stripes, train);
    auto concat = g.reshape(pooled.stripes, {pooled.batch, dims.stripes * dims.channels});
    const auto local = project(g, m.concat, concat, train);
    k.global = global.key;
    k.stripes = stripes.key;
    k.local_concat = local.key;
    k.bn_global = global.bn;
    k.bn_stripe = stripes.bn;
    k.bn_concat = local.bn;
    return k;
}

void update_running_stats(ModelParams& params, const Graph& g, const KeyVars& keys) {
    const std::size_t batch = g.value(keys.global).rows();
    fold_stats(params.proj_global.bn, g.batch_norm_stats(keys.bn_global), batch);
    BatchNormState& stripe_bn = params.share_stripe_projection ? params.proj_global.bn : params.proj_stripe.bn;
    fold_stats(stripe_bn, g.batch_norm_stats(keys.bn_stripe), g.value(keys.stripes).rows());
    fold_stats(params.proj_concat.bn, g.batch_norm_stats(keys.bn_concat), batch);
}

Tensor extract_features(std::span<const ImageSample* const> images, ModelParams& params) {
    Graph g;
    const auto m = bind_model(g, params, false);
    return g.value(extract_features(g, m, g.input("patches", patchify(images, params.dims)), images.size()));
}

PooledFeatures pool_features(const Tensor& fmap, std::size_t batch, const ModelDims& dims) {
    if (fmap.rows() != batch * dims.cells() || fmap.cols() != dims.channels) {
        throw ShapeError("pool_features: map " + shape_str(fmap.shape()) + " does not hold " + std::to_string(batch) +
                         " images of " + std::to_string(dims.cells()) + " cells");
    }
    Graph g;
    const auto p = pool_features(g, g.input("fmap", fmap), batch, dims);
    return {g.value(p.global), g.value(p.stripes)};
}

ProjectedKeys project_keys(const PooledFeatures& pooled, ModelParams& params, bool train) {
    const std::size_t batch = pooled.global.rows();
    if (pooled.global.cols() != params.dims.channels || pooled.stripes.rows() != batch * params.dims.stripes ||
        pooled.stripes.cols() != params.dims.channels) {
        throw ShapeError("project_keys: pooled features " + shape_str(pooled.global.shape()) + " / " +
                         shape_str(pooled.stripes.shape()) + " do not match the model");
    }
    Graph g;
    const auto m = bind_model(g, params, false);
    const PooledVars pv{g.input("global", pooled.global), g.input("stripes", pooled.stripes), batch};
    const auto k = project_keys(g, m, pv, params.dims, train);
    return {g.value(k.global), g.value(k.stripes), g.value(k.local_concat)};
}

ProjectedKeys compute_keys(std::span<const ImageSample* const> images, ModelParams& params, bool train) {
    Graph g;
    const auto m = bind_model(g, params, false);
    auto fmap = extract_features(g, m, g.input("patches", patchify(images, params.dims)), images.size());
    const auto k = project_keys(g, m, pool_features(g, fmap, images.size(), params.dims), params.dims, train);
    return {g.value(k.global), g.value(k.stripes), g.value(k.local_concat)};
}

}  // namespace scl
