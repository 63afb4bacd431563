// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. argv[1] is the path of the scl CLI binary; an
// optional argv[2] such as "1,3,4" restricts the run to those criteria.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include "instances.hpp"
#include "oracles.hpp"
#include "scl/loss.hpp"
#include "scl/run.hpp"
#include "scl/sampling.hpp"
#include "test_support.hpp"

using namespace scl;
using namespace scl::testing;

namespace {

// Runtime limits are in CPU seconds of this process.
struct Clock {
    using time_point = std::clock_t;
    static time_point now() { return std::clock(); }
};

double seconds_since(Clock::time_point t0) {
    return static_cast<double>(Clock::now() - t0) / static_cast<double>(CLOCKS_PER_SEC);
}

int failures = 0;

void verdict(int n, bool ok, const std::string& detail) {
    std::printf("criterion %d: %s  %s\n", n, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
    char b[96];
    std::snprintf(b, sizeof b, f, a);
    return b;
}

// ---------------------------------------------------------------------------
// 1. Gradients against central differences.

constexpr double kStep = 1e-5;
constexpr double kGradTol = 1e-4;

struct LossInstance {
    std::vector<double> v;
    MemoryBanks banks;
    SampleSelection sel;
};

// Default sizes: anchor plus 7 positives, 500 negatives, 64-d keys.
LossInstance loss_instance(std::mt19937_64& rng, std::size_t n = 600) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back(random_unit(64, rng));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    LossInstance in{random_unit(64, rng), mixture_banks(rows), {}};
    in.sel.anchor = idx[0];
    in.sel.positives.assign(idx.begin(), idx.begin() + 8);
    in.sel.negatives.assign(idx.begin() + 8, idx.begin() + 508);
    // Also warm up the global rows so the init loss sees trained keys.
    for (std::size_t i = 0; i < n; ++i) in.banks.update_anchor_global(i, rows[(i + 1) % n]);
    return in;
}

// Total loss of a batch of 8 from pooled features through the projections,
// BN and normalization into both selective loss terms. Checked on `coords`
// coordinates drawn uniformly from the pooled inputs and every projection
// parameter.
double composite_error(std::mt19937_64& rng, ModelParams params, const LossConfig& cfg, std::size_t coords) {
    const std::size_t batch = 8;
    const ModelDims& d = params.dims;
    Tensor pooled_global = random_tensor({batch, d.channels}, rng, 0.0, 1.0);
    Tensor pooled_stripes = random_tensor({batch * d.stripes, d.channels}, rng, 0.0, 1.0);
    std::vector<LossInstance> per_sample;
    for (std::size_t b = 0; b < batch; ++b) per_sample.push_back(loss_instance(rng));

    auto build = [&](Graph& g, ModelParams& p, const Tensor& pg, const Tensor& ps, bool track, Var* inputs) {
        const auto m = bind_model(g, p, track);
        const PooledVars pooled{g.input("global", pg, track), g.input("stripes", ps, track), batch};
        if (inputs != nullptr) {
            inputs[0] = pooled.global;
            inputs[1] = pooled.stripes;
        }
        const auto keys = project_keys(g, m, pooled, p.dims, true);
        Var total{};
        for (std::size_t b = 0; b < batch; ++b) {
            const auto& in = per_sample[b];
            const Var lg = selective_contrastive_loss(g, g.slice_rows(keys.global, b, 1), in.banks, in.sel, cfg);
            const Var ll =
                selective_contrastive_loss(g, g.slice_rows(keys.local_concat, b, 1), in.banks, in.sel, cfg);
            const Var t = total_loss(g, lg, ll, cfg.lambda_p);
            total = b == 0 ? t : g.add(total, t);
        }
        return total;
    };

    // Index 0 and 1 are the pooled inputs, then the projection parameters.
    std::vector<std::string> names{"pooled.global", "pooled.stripes"};
    std::vector<std::size_t> sizes{pooled_global.size(), pooled_stripes.size()};
    std::vector<std::size_t> param_index{0, 0};
    const auto named = params.parameters();
    for (std::size_t i = 0; i < named.size(); ++i) {
        named[i].tensor->ensure_grad();
        named[i].tensor->zero_grad();
        if (named[i].name.rfind("proj_", 0) == 0) {
            names.push_back(named[i].name);
            sizes.push_back(named[i].tensor->size());
            param_index.push_back(i);
        }
    }
    Graph g;
    Var inputs[2];
    g.backward(build(g, params, pooled_global, pooled_stripes, true, inputs));
    const std::size_t total_size = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});

    std::vector<double> analytic, numeric;
    for (std::size_t c = 0; c < coords; ++c) {
        std::size_t flat = std::uniform_int_distribution<std::size_t>(0, total_size - 1)(rng), t = 0;
        while (flat >= sizes[t]) flat -= sizes[t++];
        analytic.push_back(t < 2 ? g.grad(inputs[t])[flat] : named[param_index[t]].tensor->grad()[flat]);
        auto value_at = [&](double delta) {
            ModelParams probe = params;
            Tensor pg = pooled_global, ps = pooled_stripes;
            if (t == 0) {
                pg[flat] += delta;
            } else if (t == 1) {
                ps[flat] += delta;
            } else {
                probe.parameters()[param_index[t]].tensor->data()[flat] += delta;
            }
            Graph h;
            return h.value(build(h, probe, pg, ps, false, nullptr)).item();
        };
        numeric.push_back((value_at(kStep) - value_at(-kStep)) / (2.0 * kStep));
    }
    return relative_error(analytic, numeric);
}

void criterion_gradients() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    const LossConfig cfg;
    double worst12 = 0.0, worst21 = 0.0, worst16 = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        auto in = loss_instance(rng);
        const Tensor x = Tensor::vector(in.v);
        const auto sel = selective_contrastive_loss(in.v, in.banks, in.sel, cfg);
        const Tensor fd_sel = finite_difference_gradient(
            [&](const Tensor& v) { return selective_contrastive_loss(v.data(), in.banks, in.sel, cfg).value; }, x,
            kStep);
        worst12 = std::max(worst12, relative_error(sel.grad, fd_sel.data()));

        const auto init = init_contrastive_loss(in.v, in.banks, in.sel.anchor, in.sel.negatives, cfg);
        const Tensor fd_init = finite_difference_gradient(
            [&](const Tensor& v) {
                return init_contrastive_loss(v.data(), in.banks, in.sel.anchor, in.sel.negatives, cfg).value;
            },
            x, kStep);
        worst21 = std::max(worst21, relative_error(init.grad, fd_init.data()));

        ModelParams params = init_model(ModelDims{}, 500 + static_cast<std::uint64_t>(trial));
        worst16 = std::max(worst16, composite_error(rng, params, cfg, 64));
    }
    const double secs = seconds_since(t0);
    const bool ok = worst12 < kGradTol && worst21 < kGradTol && worst16 < kGradTol && secs < 60.0;
    verdict(1, ok,
            "50 instances, max relative error: selective " + fmt("%.2e", worst12) + ", init " + fmt("%.2e", worst21) +
                ", total loss from pooled features " + fmt("%.2e", worst16) + " (64 sampled coordinates each); " +
                fmt("%.1f CPU s", secs) + " (limit 60)");
}

// ---------------------------------------------------------------------------
// 2 and 7. Instrumented default run.

struct BankCheck {
    std::vector<double> global, local, mixture;
    std::vector<std::uint8_t> gflags, lflags, mflags;
    std::size_t dim = 0, stripes = 0;
    std::size_t updates = 0, bad_norm = 0, bad_untouched = 0, bad_step = 0, bad_epoch = 0;

    static bool same(std::span<const double> a, std::span<const double> b) {
        return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    }
    static bool unit(std::span<const double> r) {
        double n = 0.0;
        for (double x : r) n += x * x;
        return std::abs(std::sqrt(n) - 1.0) <= 1e-6;
    }

    void take(const MemoryBanks& b) {
        global.assign(b.global_data().begin(), b.global_data().end());
        local.assign(b.local_data().begin(), b.local_data().end());
        mixture.assign(b.mixture_data().begin(), b.mixture_data().end());
        gflags.assign(b.global_flags().begin(), b.global_flags().end());
        lflags.assign(b.local_flags().begin(), b.local_flags().end());
        mflags.assign(b.mixture_flags().begin(), b.mixture_flags().end());
        dim = b.dim();
        stripes = b.stripes();
    }
    bool equal(const MemoryBanks& b) const {
        return same(global, b.global_data()) && same(local, b.local_data()) && same(mixture, b.mixture_data()) &&
               std::equal(gflags.begin(), gflags.end(), b.global_flags().begin()) &&
               std::equal(lflags.begin(), lflags.end(), b.local_flags().begin()) &&
               std::equal(mflags.begin(), mflags.end(), b.mixture_flags().begin());
    }

    void after_update(const MemoryBanks& b, const BankUpdate& u) {
        ++updates;
        const std::size_t n = b.size(), d = dim, ld = stripes * dim;
        std::vector<char> mix_touched(n, 0);
        for (auto k : u.mixture_rows) mix_touched[k] = 1;
        for (std::size_t i = 0; i < n; ++i) {
            const bool anchor = i == u.anchor;
            const auto g = b.global(i), l = b.local(i), m = b.mixture(i);
            if (anchor) {
                if (!unit(g)) ++bad_norm;
                for (std::size_t j = 0; j < stripes; ++j)
                    if (!unit(b.local(i, j))) ++bad_norm;
            } else if (!same({global.data() + i * d, d}, g) || !same({local.data() + i * ld, ld}, l) ||
                       gflags[i] != b.global_flags()[i] || lflags[i] != b.local_flags()[i]) {
                ++bad_untouched;
            }
            if (mix_touched[i]) {
                if (!unit(m)) ++bad_norm;
            } else if (!same({mixture.data() + i * d, d}, m) || mflags[i] != b.mixture_flags()[i]) {
                ++bad_untouched;
            }
        }
        take(b);
    }
};

struct DefaultRun {
    RankingReport at25, final_report;
    double secs_to_25 = 0.0, secs = 0.0;
};

DefaultRun criterion_banks(const Dataset& data, const RunConfig& cfg) {
    const auto t0 = Clock::now();
    Checkpoint run = start_run(cfg, data.train);
    BankCheck check;
    check.take(run.state.banks);
    TrainHooks hooks;
    hooks.after_step = [&](const MemoryBanks& b) {
        if (!check.equal(b)) ++check.bad_step;
    };
    hooks.after_update = [&](const MemoryBanks& b, const BankUpdate& u) { check.after_update(b, u); };

    DefaultRun out;
    std::size_t epochs_checked = 0;
    while (run.state.epoch < cfg.train.epochs) {
        continue_run(run, data.train, run.state.epoch + 1, {}, hooks);
        if (!check.equal(run.state.banks)) ++check.bad_epoch;
        ++epochs_checked;
        if (run.state.epoch == 25) {
            out.secs_to_25 = seconds_since(t0);
            out.at25 = evaluate_model(data, run.state.params, run.config.eval);
        }
    }
    out.final_report = evaluate_model(data, run.state.params, run.config.eval);
    out.secs = seconds_since(t0);
    const bool ok = check.bad_norm == 0 && check.bad_untouched == 0 && check.bad_step == 0 && check.bad_epoch == 0 &&
                    check.updates == cfg.train.epochs * data.train.size();
    verdict(2, ok,
            std::to_string(epochs_checked) + " epochs, " + std::to_string(check.updates) +
                " updates checked: touched rows off unit norm " + std::to_string(check.bad_norm) +
                ", untouched rows changed " + std::to_string(check.bad_untouched) +
                ", banks changed by an optimizer step " + std::to_string(check.bad_step) + "; " +
                fmt("%.1f CPU s", out.secs));
    return out;
}

// Query images against the clean renderings of the held-out identities under
// the query's camera tint; the ceiling the learned model is measured against.
double nearest_prototype_rank1(const DatasetSpec& spec, const Dataset& data) {
    const auto protos = make_prototypes(spec);
    const auto tints = make_camera_tints(spec);
    const std::size_t first_test = spec.num_identities - spec.test_identities;
    std::size_t hits = 0;
    for (const auto& q : data.query) {
        double best = 1e300;
        std::size_t best_id = 0;
        for (std::size_t id = first_test; id < spec.num_identities; ++id) {
            std::vector<double> pattern(protos[id].size());
            for (std::size_t k = 0; k < pattern.size(); ++k)
                pattern[k] = 0.5 + spec.prototype_amplitude * protos[id][k] + tints[q.camera][k];
            const auto img = render_pattern(spec, pattern);
            double d = 0.0;
            for (std::size_t k = 0; k < img.size(); ++k) d += (img[k] - q.pixels[k]) * (img[k] - q.pixels[k]);
            if (d < best) {
                best = d;
                best_id = id;
            }
        }
        hits += best_id == q.identity;
    }
    return static_cast<double>(hits) / static_cast<double>(data.query.size());
}

void criterion_sanity(const DefaultRun& run, double ceiling) {
    const double r1 = run.at25.cmc.at(1), map = run.at25.map;
    const bool ok = r1 >= 0.90 && map >= 0.70 && run.secs_to_25 < 300.0;
    verdict(7, ok,
            "after 25 epochs rank-1 " + fmt("%.3f", r1) + " (>= 0.90), mAP " + fmt("%.3f", map) +
                " (>= 0.70); nearest-prototype rank-1 ceiling " + fmt("%.3f", ceiling) + "; " +
                fmt("%.1f CPU s", run.secs_to_25) + " including bank instrumentation (limit 300)");
}

// ---------------------------------------------------------------------------
// 3. Sampling oracle.

void criterion_sampling() {
    std::mt19937_64 rng(303);
    int mismatches = 0, ties = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(3, 50)(rng);
        const bool coarse = trial % 3 == 0;
        auto in = random_sampling_instance(n, 4, 3, rng, coarse);
        SimilarityConfig cfg;
        cfg.beta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        if (trial % 5 == 0) cfg.beta = trial % 2 ? 1.0 : 0.0;
        cfg.lambda_c = trial % 4 == 0 ? 0.0 : 0.05;
        cfg.n_plus = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
        cfg.n_minus = std::uniform_int_distribution<std::size_t>(0, n - 1 - cfg.n_plus - 1)(rng);
        const std::size_t anchor = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);

        const auto got = partition_and_select(anchor, in.vg, in.vs, in.banks, in.cams, cfg);
        const auto dist =
            oracle::distances(anchor, in.vg, in.vs_rows, in.g_rows, in.l_rows, in.cams, cfg.beta, cfg.lambda_c);
        const auto want = oracle::select(anchor, dist, cfg.n_plus, cfg.n_minus);
        if (got.positives != want.positives || got.negatives != want.negatives) ++mismatches;
        std::vector<double> sorted(dist);
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) ++ties;
    }
    verdict(3, mismatches == 0,
            "200 instances with N <= 50 (" + std::to_string(ties) + " with tied distances), mismatches " +
                std::to_string(mismatches));
}

// ---------------------------------------------------------------------------
// 4. Metric oracle.

void criterion_metrics() {
    const std::vector<std::size_t> ks{1, 5, 10};
    std::mt19937_64 rng(404);
    int mismatches = 0;
    for (int t = 0; t < 100; ++t) {
        const auto p = random_ranking_problem(rng, t % 2 == 0);
        const bool exclude = t % 5 != 0;
        const auto got = rank_gallery(p.dists, p.query, p.gallery, ks, exclude);
        const auto want =
            oracle::reid_metrics(nested(p.dists), p.query.ids, p.query.cams, p.gallery.ids, p.gallery.cams, ks, exclude);
        bool same = got.num_queries == want.valid && got.map == want.map;
        for (auto k : ks) same = same && got.cmc.at(k) == want.cmc.at(k);
        if (!same) ++mismatches;
    }
    const auto second = single_query(10, {1});
    const double ap_half = mean_average_precision(second.dists, second.query, second.gallery);
    const auto two = single_query(10, {0, 2});
    const double ap_five_sixths = mean_average_precision(two.dists, two.query, two.gallery);
    const bool ok = mismatches == 0 && std::abs(ap_half - 0.5) <= 1e-9 && std::abs(ap_five_sixths - 5.0 / 6.0) <= 1e-9;
    verdict(4, ok,
            "100 instances (Q <= 20, M <= 50), mismatches " + std::to_string(mismatches) + "; hand examples AP " +
                fmt("%.10f", ap_half) + " and " + fmt("%.10f", ap_five_sixths));
}

// ---------------------------------------------------------------------------
// 5 and 6. Ablation directions over three seeds.

void criteria_ablations(const Dataset& data, const RunConfig& base, const DefaultRun& default_run) {
    const std::vector<std::uint64_t> seeds{1, 2, 3};
    std::map<std::string, double> mean_map;
    double secs = 0.0;
    auto run_all = [&](const AblationSetting& s) {
        if (mean_map.count(s.label)) return;
        double sum = 0.0;
        std::string line;
        for (auto seed : seeds) {
            RankingReport r;
            // The default setting with seed 1 is the run of criterion 2.
            if (s.overrides.empty() && seed == base.train.seed) {
                r = default_run.final_report;
                secs += default_run.secs;
            } else {
                RunConfig cfg = base;
                cfg.train.seed = seed;
                const auto ts = Clock::now();
                r = run_setting(data, cfg, s);
                secs += seconds_since(ts);
            }
            sum += r.map;
            line += fmt(" %.3f", r.map);
        }
        mean_map[s.label] = sum / static_cast<double>(seeds.size());
        std::printf("  %-22s mAP per seed%s, mean %.3f\n", s.label.c_str(), line.c_str(), mean_map[s.label]);
        std::fflush(stdout);
    };
    const auto t4 = ablation_preset("table4"), t5 = ablation_preset("table5");
    // (7,500) is the default configuration, i.e. the joint setting.
    run_all(t4[0]);
    mean_map[t5[2].label] = mean_map[t4[0].label];
    run_all(t5[1]);
    run_all(t5[0]);
    run_all(t4[1]);
    run_all(t4[2]);

    const double m500 = mean_map[t5[2].label], mall = mean_map[t5[1].label], m1 = mean_map[t5[0].label];
    const bool order = m500 >= mall && mall >= m1;
    const double gap = m500 - m1;
    verdict(5, order && gap >= 0.05 && secs < 900.0,
            "seed-mean mAP (7,500) " + fmt("%.3f", m500) + " >= (7,all) " + fmt("%.3f", mall) + " >= (1,all) " +
                fmt("%.3f", m1) + ": " + (order ? "holds" : "violated") + "; gap " + fmt("%.3f", gap) +
                " (need >= 0.050); " + fmt("%.0f CPU s", secs) + " for all 15 runs (limit 900)");
    const double joint = mean_map[t4[0].label], g = mean_map[t4[1].label], l = mean_map[t4[2].label];
    verdict(6, joint > g && joint > l,
            "seed-mean mAP joint " + fmt("%.3f", joint) + " vs global-only " + fmt("%.3f", g) + " and local-only " +
                fmt("%.3f", l));
}

// ---------------------------------------------------------------------------
// 8. Determinism through the CLI.

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void criterion_determinism(const std::string& cli) {
    const auto dir = std::filesystem::temp_directory_path() / "scl_acceptance";
    std::filesystem::create_directories(dir);
    auto path = [&](const char* name) { return (dir / name).string(); };
    auto sh = [&](const std::string& args) {
        const std::string cmd = "\"" + cli + "\" " + args + " 2>>\"" + path("log.txt") + "\"";
        return std::system(cmd.c_str()) == 0;
    };
    bool ran = sh("gen-data --out " + path("data.scrd"));
    for (const char* tag : {"a", "b"}) {
        const std::string t = tag;
        ran = ran && sh("train --data " + path("data.scrd") + " --out " + path(("run_" + t + ".scck").c_str()) +
                        " --metrics " + path(("run_" + t + ".csv").c_str()));
        ran = ran && sh("eval --data " + path("data.scrd") + " --ckpt " + path(("run_" + t + ".scck").c_str()) +
                        " --out " + path(("run_" + t + ".json").c_str()));
    }
    ran = ran && sh("train --data " + path("data.scrd") + " --out " + path("half.scck") + " --until 20");
    ran = ran && sh("train --data " + path("data.scrd") + " --resume " + path("half.scck") + " --out " +
                    path("resumed.scck") + " --metrics " + path("resumed.csv"));
    ran = ran && sh("eval --data " + path("data.scrd") + " --ckpt " + path("resumed.scck") + " --out " +
                    path("resumed.json"));

    const std::string csv = slurp(path("run_a.csv")), json = slurp(path("run_a.json"));
    const bool csv_same = !csv.empty() && csv == slurp(path("run_b.csv"));
    const bool json_same = !json.empty() && json == slurp(path("run_b.json"));
    const bool resume_same = csv == slurp(path("resumed.csv")) && json == slurp(path("resumed.json")) &&
                             slurp(path("run_a.scck")) == slurp(path("resumed.scck"));
    verdict(8, ran && csv_same && json_same && resume_same,
            std::string("two CLI runs: metrics CSV ") + (csv_same ? "identical" : "differ") + ", eval JSON " +
                (json_same ? "identical" : "differ") + "; resume at epoch 20: CSV, JSON and checkpoint " +
                (resume_same ? "identical" : "differ") + (ran ? "" : "; a CLI call failed, see " + path("log.txt")));
    if (ran && csv_same && json_same && resume_same) std::filesystem::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <path to scl> [criteria, e.g. 1,3,4]\n");
        return 1;
    }
    std::set<int> only;
    if (argc > 2) {
        for (const char* p = argv[2]; *p; ++p)
            if (*p >= '1' && *p <= '8') only.insert(*p - '0');
    }
    auto want = [&](int n) { return only.empty() || only.count(n) > 0; };

    const auto t0 = Clock::now();
    const RunConfig cfg;
    const Dataset data = generate_dataset(cfg.dataset);

    if (want(1)) criterion_gradients();
    DefaultRun default_run;
    if (want(2) || want(5) || want(6) || want(7)) default_run = criterion_banks(data, cfg);
    if (want(3)) criterion_sampling();
    if (want(4)) criterion_metrics();
    if (want(5) || want(6)) criteria_ablations(data, cfg, default_run);
    if (want(7)) criterion_sanity(default_run, nearest_prototype_rank1(cfg.dataset, data));
    if (want(8)) criterion_determinism(argv[1]);

    std::printf("%d failed; total %.0f CPU s\n", failures, seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
