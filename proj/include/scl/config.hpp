#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scl/eval.hpp"
#include "scl/model.hpp"
#include "scl/synthdata.hpp"
#include "scl/trainer.hpp"

namespace scl {

// Everything a run needs, read from a flat JSON object. See README for keys.
struct RunConfig {
    DatasetSpec dataset;
    ModelDims model;
    bool share_stripe_projection = false;
    TrainConfig train;
    // n_minus = N - n_plus - 1 once the training set size N is known.
    bool n_minus_all = false;
    EvalOptions eval;
    std::string dataset_path;
    std::string checkpoint_path;
    std::string metrics_path;

    // Checks every range that does not depend on the training set size.
    void validate() const;
    // Fixes n_minus for "all", takes the image size from the data, and runs
    // the full training validation.
    void resolve(std::size_t sample_count, std::uint32_t height, std::uint32_t width, std::uint32_t channels);
};

std::vector<std::string> config_keys();

// Throws ConfigError on unknown keys, wrong types or out-of-range values.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
// Every key with its current value, in config_keys() order.
std::string dump_config(const RunConfig& cfg);

// Sets one key from its textual form ("0.5", "7", "all", "joint", "true").
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace scl
