#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scl/checkpoint.hpp"
#include "scl/eval.hpp"

namespace scl {

// Fresh run over `train`: resolves the config against the data and
// initializes the state.
Checkpoint start_run(RunConfig cfg, std::span<const ImageSample> train);

// Trains until `until_epoch` completed epochs (capped at cfg epochs).
void continue_run(Checkpoint& run, std::span<const ImageSample> train, std::size_t until_epoch,
                  const std::function<void(const EpochStats&)>& on_epoch = {}, const TrainHooks& hooks = {});

// "epoch,phase,loss_global,loss_local,loss_total" then one row per epoch.
std::string metrics_csv(const std::vector<EpochStats>& history);

// Parameters ablate may sweep.
const std::vector<std::string>& ablation_parameters();

struct AblationSetting {
    std::string label;
    std::vector<std::pair<std::string, std::string>> overrides;  // config key, value
};

// "table4" (joint, global-only, local-only) or "table5" selective sampling
// settings. Throws ConfigError for other names.
std::vector<AblationSetting> ablation_preset(const std::string& name);
std::vector<AblationSetting> ablation_grid(const std::string& param, const std::vector<std::string>& values);

// Trains one setting from scratch and evaluates it on query/gallery.
RankingReport run_setting(const Dataset& data, RunConfig cfg, const AblationSetting& setting);

}  // namespace scl
