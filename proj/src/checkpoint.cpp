#include "scl/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "binary_io.hpp"
#include "json.hpp"
#include "scl/errors.hpp"

namespace scl {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'C', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

using Json = nlohmann::ordered_json;
using Blocks = std::map<std::string, Tensor>;

// Keys that are only meaningful on the machine that wrote the file.
bool is_path_key(const std::string& k) { return k == "dataset" || k == "checkpoint" || k == "metrics"; }

// Seeds do not fit a double, so they travel as two 32-bit halves.
bool is_seed_key(const std::string& k) { return k == "seed" || k == "data_seed"; }

Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

template <class T>
Tensor vector_of(std::span<const T> v, Shape shape) {
    return Tensor(std::move(shape), std::vector<double>(v.begin(), v.end()));
}

void put_config(Blocks& out, const RunConfig& cfg) {
    const Json j = Json::parse(dump_config(cfg));
    for (const auto& [key, v] : j.items()) {
        if (is_path_key(key)) continue;
        const std::string name = "config." + key;
        if (is_seed_key(key)) {
            const auto s = v.get<std::uint64_t>();
            out[name + ".hi"] = scalar(static_cast<double>(s >> 32));
            out[name + ".lo"] = scalar(static_cast<double>(s & 0xFFFFFFFFULL));
        } else if (key == "n_minus") {
            out[name] = scalar(v.is_string() ? -1.0 : v.get<double>());
        } else if (key == "mixture_keys") {
            out[name] = scalar(static_cast<double>(cfg.train.mixture_keys));
        } else if (v.is_boolean()) {
            out[name] = scalar(v.get<bool>() ? 1.0 : 0.0);
        } else {
            out[name] = scalar(v.get<double>());
        }
    }
    const auto& m = cfg.model;
    out["model.image_shape"] = Tensor(Shape{3}, std::vector<double>{static_cast<double>(m.image_height),
                                                                    static_cast<double>(m.image_width),
                                                                    static_cast<double>(m.image_channels)});
}

const Tensor& take(const Blocks& in, const std::string& name) {
    const auto it = in.find(name);
    if (it == in.end()) throw FormatError("checkpoint: missing block '" + name + "'");
    return it->second;
}

double take_scalar(const Blocks& in, const std::string& name) {
    const Tensor& t = take(in, name);
    if (t.size() != 1) throw FormatError("checkpoint: block '" + name + "' is not a scalar");
    return t[0];
}

std::uint64_t take_count(const Blocks& in, const std::string& name) {
    const double v = take_scalar(in, name);
    if (!(v >= 0.0 && v <= 9007199254740992.0) || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
        throw FormatError("checkpoint: block '" + name + "' is not a count");
    }
    return static_cast<std::uint64_t>(v);
}

RunConfig get_config(const Blocks& in) {
    const Json defaults = Json::parse(dump_config(RunConfig{}));
    Json j = Json::object();
    for (const auto& [key, v] : defaults.items()) {
        if (is_path_key(key)) continue;
        const std::string name = "config." + key;
        if (is_seed_key(key)) {
            j[key] = (take_count(in, name + ".hi") << 32) | take_count(in, name + ".lo");
        } else if (key == "n_minus") {
            const double n = take_scalar(in, name);
            j[key] = n < 0 ? Json("all") : Json(take_count(in, name));
        } else if (key == "mixture_keys") {
            const auto k = take_count(in, name);
            if (k > static_cast<std::uint64_t>(MixtureKeys::Local)) throw FormatError("checkpoint: bad mixture_keys");
            j[key] = to_string(static_cast<MixtureKeys>(k));
        } else if (v.is_boolean()) {
            j[key] = take_scalar(in, name) != 0.0;
        } else if (v.is_number_float()) {
            j[key] = take_scalar(in, name);
        } else {
            j[key] = take_count(in, name);
        }
    }
    return parse_config(j.dump());
}

// Values only; dst keeps its gradient flags.
void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape() != src.shape()) throw FormatError("checkpoint: block '" + name + "' has the wrong shape");
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

template <class T>
std::vector<T> flat(const Blocks& in, const std::string& name, std::size_t n) {
    const Tensor& t = take(in, name);
    if (t.size() != n) throw FormatError("checkpoint: block '" + name + "' has the wrong size");
    return std::vector<T>(t.data().begin(), t.data().end());
}

void write_block(io::Writer& w, const std::string& name, const Tensor& t) {
    const std::uint64_t len = 4 + name.size() + 4 + 8 * t.shape().size() + 8 * t.size();
    w.put<std::uint64_t>(len);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    for (double v : t.data()) w.put_f64(v);
}

std::pair<std::string, Tensor> read_block(io::Reader& r) {
    const std::size_t start = r.offset();
    const auto len = r.get<std::uint64_t>("block length");
    r.need(len, "block");
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.get_string(name_len, "block name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("checkpoint: implausible rank at offset " + std::to_string(r.offset() - 4));
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
        d = r.get<std::uint64_t>("dims");
        if (d != 0 && count > (std::size_t{1} << 40) / d) {
            throw FormatError("checkpoint: implausible shape at offset " + std::to_string(r.offset() - 8));
        }
        count *= d;
    }
    if (4 + name_len + 4 + 8 * rank + 8 * count != len) {
        throw FormatError("checkpoint: block '" + name + "' length does not match its shape at offset " +
                          std::to_string(start));
    }
    std::vector<double> data(count);
    for (auto& v : data) v = r.get_f64("tensor data");
    return {std::move(name), Tensor(std::move(shape), std::move(data))};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Blocks blocks;
    put_config(blocks, ckpt.config);

    ModelParams params = ckpt.state.params;  // parameters() hands out mutable pointers
    const auto named = params.parameters();
    if (named.size() != ckpt.state.optimizer.velocity.size()) {
        throw std::logic_error("save_checkpoint: optimizer state does not match the parameters");
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
        blocks["param." + named[i].name] = *named[i].tensor;
        blocks["velocity." + named[i].name] = ckpt.state.optimizer.velocity[i];
    }
    for (const auto& b : params.buffers()) blocks["buffer." + b.name] = *b.tensor;

    const MemoryBanks& banks = ckpt.state.banks;
    const std::size_t n = banks.size(), d = banks.dim(), s = banks.stripes();
    blocks["bank.global"] = vector_of(banks.global_data(), {n, d});
    blocks["bank.local"] = vector_of(banks.local_data(), {n, s, d});
    blocks["bank.mixture"] = vector_of(banks.mixture_data(), {n, d});
    blocks["bank.global_flags"] = vector_of(banks.global_flags(), {n});
    blocks["bank.local_flags"] = vector_of(banks.local_flags(), {n});
    blocks["bank.mixture_flags"] = vector_of(banks.mixture_flags(), {n});

    blocks["state.epoch"] = scalar(static_cast<double>(ckpt.state.epoch));
    Tensor hist(Shape{ckpt.history.size(), 6});
    for (std::size_t e = 0; e < ckpt.history.size(); ++e) {
        const EpochStats& h = ckpt.history[e];
        const double row[] = {static_cast<double>(h.epoch), h.phase == Phase::Train ? 1.0 : 0.0, h.loss_global,
                              h.loss_local, h.loss_total, static_cast<double>(h.steps)};
        std::copy(std::begin(row), std::end(row), hist.row(e).begin());
    }
    blocks["state.history"] = hist;

    io::Writer w(path, "checkpoint");
    w.bytes(kMagic.data(), kMagic.size());
    w.put<std::uint32_t>(kVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(blocks.size()));
    for (const auto& [name, t] : blocks) write_block(w, name, t);
    w.flush();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    io::Reader r(path, "checkpoint");
    r.expect_magic(kMagic.data(), kMagic.size());
    const auto version = r.get<std::uint32_t>("version");
    if (version != kVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " at offset 4");
    }
    const auto count = r.get<std::uint32_t>("block count");
    Blocks blocks;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        auto [name, t] = read_block(r);
        if (!blocks.emplace(name, std::move(t)).second) {
            throw FormatError("checkpoint: duplicate block '" + name + "' at offset " + std::to_string(at));
        }
    }
    if (r.offset() != r.size()) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));

    Checkpoint ckpt;
    ckpt.config = get_config(blocks);
    const Tensor& image = take(blocks, "model.image_shape");
    if (image.size() != 3) throw FormatError("checkpoint: block 'model.image_shape' has the wrong size");
    const Tensor& bank_global = take(blocks, "bank.global");
    if (bank_global.shape().size() != 2) throw FormatError("checkpoint: block 'bank.global' has the wrong shape");
    const std::size_t n = bank_global.shape()[0];
    ckpt.config.resolve(n, static_cast<std::uint32_t>(image[0]), static_cast<std::uint32_t>(image[1]),
                        static_cast<std::uint32_t>(image[2]));

    TrainState& st = ckpt.state;
    st = init_training(n, ckpt.config.model, ckpt.config.train, ckpt.config.share_stripe_projection);
    for (const auto& p : st.params.parameters()) copy_into(*p.tensor, take(blocks, "param." + p.name), p.name);
    const auto named = st.params.parameters();
    for (std::size_t i = 0; i < named.size(); ++i) {
        copy_into(st.optimizer.velocity[i], take(blocks, "velocity." + named[i].name), named[i].name);
    }
    for (const auto& b : st.params.buffers()) copy_into(*b.tensor, take(blocks, "buffer." + b.name), b.name);

    const std::size_t d = st.banks.dim(), s = st.banks.stripes();
    st.banks.restore(flat<double>(blocks, "bank.global", n * d), flat<double>(blocks, "bank.local", n * s * d),
                     flat<double>(blocks, "bank.mixture", n * d), flat<std::uint8_t>(blocks, "bank.global_flags", n),
                     flat<std::uint8_t>(blocks, "bank.local_flags", n),
                     flat<std::uint8_t>(blocks, "bank.mixture_flags", n));

    st.epoch = take_count(blocks, "state.epoch");
    const Tensor& hist = take(blocks, "state.history");
    if (hist.shape().size() != 2 || hist.shape()[1] != 6 || hist.shape()[0] != st.epoch) {
        throw FormatError("checkpoint: epoch history does not match the stored epoch");
    }
    for (std::size_t e = 0; e < st.epoch; ++e) {
        const auto row = hist.row(e);
        ckpt.history.push_back(EpochStats{static_cast<std::size_t>(row[0]), row[1] != 0.0 ? Phase::Train : Phase::Init,
                                          row[2], row[3], row[4], static_cast<std::size_t>(row[5])});
    }
    return ckpt;
}

}  // namespace scl
