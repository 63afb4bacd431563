// scl: gen-data | train | eval | ablate

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "scl/checkpoint.hpp"
#include "scl/config.hpp"
#include "scl/errors.hpp"
#include "scl/run.hpp"

namespace {

using namespace scl;

// Wall-clock lines go to stderr only, so output files stay byte-stable.
void log(const std::string& msg) {
    static const auto t0 = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "[%8.1fs] %s\n", s, msg.c_str());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out << text;
    if (!out.flush()) throw FormatError("write to " + path + " failed");
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

// A flag wins over the config file's path entry.
std::string pick(const std::string& flag, const std::string& from_config, const char* what) {
    const std::string& p = flag.empty() ? from_config : flag;
    if (p.empty()) throw CLI::ValidationError(std::string("missing ") + what + " path");
    return p;
}

std::string fmt(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.6f", v);
    return b;
}

struct Options {
    std::string config, data, out, ckpt, metrics, resume, param, values, preset, seeds;
    std::size_t until = 0;
    bool append_local = false;
};

int gen_data(const Options& o) {
    const RunConfig cfg = config_or_default(o.config);
    const std::string out = pick(o.out, cfg.dataset_path, "output dataset");
    const Dataset d = generate_dataset(cfg.dataset);
    save_dataset(out, d);
    log("wrote " + out + ": " + std::to_string(d.train.size()) + " train, " + std::to_string(d.query.size()) +
        " query, " + std::to_string(d.gallery.size()) + " gallery");
    return 0;
}

int train(const Options& o) {
    Checkpoint run;
    const RunConfig file_cfg = config_or_default(o.config);
    const std::string data_path = pick(o.data, file_cfg.dataset_path, "dataset");
    const std::string out = pick(o.out, file_cfg.checkpoint_path, "checkpoint");
    const std::string metrics = o.metrics.empty() ? file_cfg.metrics_path : o.metrics;
    const Dataset data = load_dataset(data_path);
    if (!o.resume.empty()) {
        run = load_checkpoint(o.resume);
        log("resuming " + o.resume + " at epoch " + std::to_string(run.state.epoch));
    } else {
        run = start_run(file_cfg, data.train);
    }
    const std::size_t until = o.until == 0 ? run.config.train.epochs : o.until;
    continue_run(run, data.train, until, [](const EpochStats& s) {
        log("epoch " + std::to_string(s.epoch) + " " + to_string(s.phase) + " loss " + fmt(s.loss_total));
    });
    save_checkpoint(out, run);
    if (!metrics.empty()) write_text(metrics, metrics_csv(run.history));
    log("wrote " + out);
    return 0;
}

int eval(const Options& o) {
    Checkpoint run = load_checkpoint(o.ckpt);
    const Dataset data = load_dataset(o.data);
    EvalOptions opts = run.config.eval;
    if (o.append_local) opts.append_local = true;
    const std::string json = report_json(evaluate_model(data, run.state.params, opts));
    if (o.out.empty()) {
        std::cout << json;
    } else {
        write_text(o.out, json);
    }
    return 0;
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

int ablate(const Options& o) {
    RunConfig cfg = config_or_default(o.config);
    const std::string data_path = pick(o.data, cfg.dataset_path, "dataset");
    std::vector<AblationSetting> settings;
    if (!o.preset.empty()) {
        if (!o.param.empty()) throw CLI::ValidationError("--preset and --param are exclusive");
        settings = ablation_preset(o.preset);
    } else {
        if (o.param.empty()) throw CLI::ValidationError("ablate needs --param/--values or --preset");
        settings = ablation_grid(o.param, split(o.values));
    }
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split(o.seeds)) {
        try {
            std::size_t used = 0;
            seeds.push_back(std::stoull(s, &used));
            if (used != s.size()) throw std::invalid_argument(s);
        } catch (const std::logic_error&) {
            throw CLI::ValidationError("--seeds: '" + s + "' is not a seed");
        }
    }
    if (seeds.empty()) seeds.push_back(cfg.train.seed);

    const Dataset data = load_dataset(data_path);
    std::string csv = "setting,seeds,rank1,mAP\n";
    for (const auto& setting : settings) {
        double r1 = 0.0, map = 0.0;
        for (std::uint64_t seed : seeds) {
            cfg.train.seed = seed;
            const RankingReport r = run_setting(data, cfg, setting);
            log(setting.label + " seed " + std::to_string(seed) + ": rank1 " + fmt(r.cmc.at(1)) + " mAP " + fmt(r.map));
            r1 += r.cmc.at(1);
            map += r.map;
        }
        const double n = static_cast<double>(seeds.size());
        char line[256];
        std::snprintf(line, sizeof line, "\"%s\",%zu,%.6f,%.6f\n", setting.label.c_str(), seeds.size(), r1 / n,
                      map / n);
        csv += line;
    }
    if (o.out.empty()) {
        std::cout << csv;
    } else {
        write_text(o.out, csv);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Selective contrastive learning on synthetic re-identification data"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset file");
    gen->add_option("--config", o.config, "JSON config file");
    gen->add_option("--out", o.out, "Dataset file to write");

    auto* tr = app.add_subcommand("train", "Train and write a checkpoint");
    tr->add_option("--config", o.config, "JSON config file");
    tr->add_option("--data", o.data, "Dataset file");
    tr->add_option("--out", o.out, "Checkpoint to write");
    tr->add_option("--metrics", o.metrics, "Per-epoch metrics CSV to write");
    tr->add_option("--resume", o.resume, "Continue from this checkpoint (its config is used)");
    tr->add_option("--until", o.until, "Stop after this many completed epochs");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on query/gallery");
    ev->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
    ev->add_option("--data", o.data, "Dataset file")->required();
    ev->add_option("--out", o.out, "JSON report to write (default stdout)");
    ev->add_flag("--append-local", o.append_local, "Append the local key to the global key");

    auto* ab = app.add_subcommand("ablate", "Sweep one parameter or run a preset");
    ab->add_option("--config", o.config, "JSON config file");
    ab->add_option("--data", o.data, "Dataset file");
    ab->add_option("--param", o.param, "lambda_c, lambda_t, n_plus, n_minus, tau, beta or lambda_p");
    ab->add_option("--values", o.values, "Comma-separated values");
    ab->add_option("--preset", o.preset, "table4 or table5");
    ab->add_option("--seeds", o.seeds, "Comma-separated seeds (default: config seed)");
    ab->add_option("--out", o.out, "CSV to write (default stdout)");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return gen_data(o);
        if (tr->parsed()) return train(o);
        if (ev->parsed()) return eval(o);
        return ablate(o);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
