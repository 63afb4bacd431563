#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "scl/checkpoint.hpp"
#include "scl/errors.hpp"
#include "scl/run.hpp"

using namespace scl;

namespace {

RunConfig tiny_config() {
    return parse_config(R"({"num_identities": 5, "test_identities": 1, "images_per_camera": 2, "tint_scale": 0.03,
                            "epochs": 4, "init_epochs": 1, "batch_size": 5, "n_plus": 3, "n_minus": "all",
                            "seed": 77, "map_height": 4, "map_width": 2, "channels": 8, "hidden": 8,
                            "stripes": 4, "key_dim": 6})");
}

std::filesystem::path temp_file(const char* name) { return std::filesystem::temp_directory_path() / name; }

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

bool same_state(TrainState& a, TrainState& b) {
    const auto pa = a.params.parameters(), pb = b.params.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].name != pb[i].name || !(*pa[i].tensor == *pb[i].tensor)) return false;
    const auto ba = a.params.buffers(), bb = b.params.buffers();
    for (std::size_t i = 0; i < ba.size(); ++i)
        if (!(*ba[i].tensor == *bb[i].tensor)) return false;
    return a.banks == b.banks && a.optimizer == b.optimizer && a.epoch == b.epoch;
}

}  // namespace

TEST_CASE("checkpoint round trip and resume") {
    const RunConfig cfg = tiny_config();
    const Dataset data = generate_dataset(cfg.dataset);
    const auto path = temp_file("scl_test_ckpt.scck");

    Checkpoint full = start_run(cfg, data.train);
    continue_run(full, data.train, cfg.train.epochs);

    Checkpoint part = start_run(cfg, data.train);
    continue_run(part, data.train, 2);
    save_checkpoint(path, part);
    CHECK(read_bytes(path).substr(0, 4) == "SCCK");

    Checkpoint loaded = load_checkpoint(path);
    CHECK(same_state(loaded.state, part.state));
    CHECK(dump_config(loaded.config) == dump_config(part.config));
    CHECK(metrics_csv(loaded.history) == metrics_csv(part.history));

    SUBCASE("resumed run equals the uninterrupted one bit for bit") {
        continue_run(loaded, data.train, cfg.train.epochs);
        CHECK(same_state(loaded.state, full.state));
        CHECK(metrics_csv(loaded.history) == metrics_csv(full.history));
    }
    SUBCASE("saving a loaded checkpoint reproduces the file") {
        const auto again = temp_file("scl_test_ckpt2.scck");
        save_checkpoint(again, loaded);
        CHECK(read_bytes(again) == read_bytes(path));
        std::filesystem::remove(again);
    }
    SUBCASE("damaged files") {
        const std::string good = read_bytes(path);
        const auto bad = temp_file("scl_test_bad.scck");
        auto expect = [&](const std::string& bytes, const char* fragment) {
            write_bytes(bad, bytes);
            CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains(fragment), FormatError);
        };
        expect(good.substr(0, good.size() - 3), "truncated");
        expect("SCRD" + good.substr(4), "bad magic");
        std::string v = good;
        v[4] = 9;
        expect(v, "unsupported version");
        expect(good + "x", "trailing bytes");
        std::string renamed = good;
        const auto at = renamed.find("bank.global");
        renamed[at] = 'c';  // "cank.global"
        expect(renamed, "missing block 'bank.global'");
        std::filesystem::remove(bad);
        CHECK_THROWS_AS(load_checkpoint(temp_file("scl_no_such_file.scck")), FormatError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("resuming against a different dataset is refused") {
    const RunConfig cfg = tiny_config();
    const Dataset data = generate_dataset(cfg.dataset);
    Checkpoint run = start_run(cfg, data.train);
    std::vector<ImageSample> fewer(data.train.begin(), data.train.end() - 1);
    CHECK_THROWS_AS(continue_run(run, fewer, 2), ConfigError);
}
