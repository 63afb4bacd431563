#include "scl/run.hpp"

#include <algorithm>
#include <cstdio>

#include "scl/errors.hpp"

namespace scl {

Checkpoint start_run(RunConfig cfg, std::span<const ImageSample> train) {
    if (train.empty()) throw ConfigError("run: the dataset has no training samples");
    const ImageSample& first = train.front();
    for (const auto& s : train) {
        if (s.height != first.height || s.width != first.width || s.channels != first.channels) {
            throw FormatError("run: training images differ in size");
        }
    }
    cfg.resolve(train.size(), first.height, first.width, first.channels);
    Checkpoint run;
    run.state = init_training(train.size(), cfg.model, cfg.train, cfg.share_stripe_projection);
    run.config = std::move(cfg);
    return run;
}

void continue_run(Checkpoint& run, std::span<const ImageSample> train, std::size_t until_epoch,
                  const std::function<void(const EpochStats&)>& on_epoch, const TrainHooks& hooks) {
    if (train.size() != run.state.banks.size()) {
        throw ConfigError("run: checkpoint holds " + std::to_string(run.state.banks.size()) +
                          " bank rows but the dataset has " + std::to_string(train.size()) + " training samples");
    }
    const std::size_t stop = std::min(until_epoch, run.config.train.epochs);
    while (run.state.epoch < stop) {
        run.history.push_back(run_epoch(train, run.state, run.config.train, hooks));
        if (on_epoch) on_epoch(run.history.back());
    }
}

std::string metrics_csv(const std::vector<EpochStats>& history) {
    std::string out = "epoch,phase,loss_global,loss_local,loss_total\n";
    char line[160];
    for (const auto& h : history) {
        std::snprintf(line, sizeof line, "%zu,%s,%.17g,%.17g,%.17g\n", h.epoch, to_string(h.phase), h.loss_global,
                      h.loss_local, h.loss_total);
        out += line;
    }
    return out;
}

const std::vector<std::string>& ablation_parameters() {
    static const std::vector<std::string> p{"lambda_c", "lambda_t", "n_plus", "n_minus", "tau", "beta", "lambda_p"};
    return p;
}

std::vector<AblationSetting> ablation_preset(const std::string& name) {
    if (name == "table4") {
        return {
            {"joint", {}},
            {"global-only", {{"beta", "1"}, {"lambda_p", "0"}, {"mixture_keys", "global"}}},
            {"local-only", {{"beta", "0"}, {"lambda_p", "1"}, {"mixture_keys", "local"}}},
        };
    }
    if (name == "table5") {
        return {
            {"n_plus=1,n_minus=all", {{"n_plus", "1"}, {"n_minus", "all"}}},
            {"n_plus=7,n_minus=all", {{"n_plus", "7"}, {"n_minus", "all"}}},
            {"n_plus=7,n_minus=500", {{"n_plus", "7"}, {"n_minus", "500"}}},
        };
    }
    throw ConfigError("ablate: unknown preset '" + name + "' (expected table4 or table5)");
}

std::vector<AblationSetting> ablation_grid(const std::string& param, const std::vector<std::string>& values) {
    const auto& allowed = ablation_parameters();
    if (std::find(allowed.begin(), allowed.end(), param) == allowed.end()) {
        throw ConfigError("ablate: cannot sweep '" + param + "'");
    }
    if (values.empty()) throw ConfigError("ablate: no values given");
    std::vector<AblationSetting> out;
    for (const auto& v : values) {
        RunConfig probe;
        set_config_value(probe, param, v);  // reject bad values before any training
        probe.validate();
        out.push_back({param + "=" + v, {{param, v}}});
    }
    return out;
}

RankingReport run_setting(const Dataset& data, RunConfig cfg, const AblationSetting& setting) {
    for (const auto& [key, value] : setting.overrides) set_config_value(cfg, key, value);
    cfg.validate();
    Checkpoint run = start_run(std::move(cfg), data.train);
    continue_run(run, data.train, run.config.train.epochs);
    return evaluate_model(data, run.state.params, run.config.eval);
}

}  // namespace scl
