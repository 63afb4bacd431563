#include "scl/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "scl/errors.hpp"

namespace scl {

namespace {

using Json = nlohmann::ordered_json;

struct Field {
    const char* key;
    std::function<Json(const RunConfig&)> get;
    std::function<void(RunConfig&, const Json&)> set;
};

[[noreturn]] void bad(const std::string& key, const std::string& what) {
    throw ConfigError("config: " + key + " " + what);
}

double number(const std::string& key, const Json& v) {
    if (!v.is_number()) bad(key, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) bad(key, "must be finite");
    return d;
}

std::uint64_t count(const std::string& key, const Json& v, std::uint64_t max = std::numeric_limits<std::uint32_t>::max()) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        bad(key, "must be a non-negative integer");
    }
    const auto n = v.get<std::uint64_t>();
    if (n > max) bad(key, "is too large");
    return n;
}

bool flag(const std::string& key, const Json& v) {
    if (!v.is_boolean()) bad(key, "must be true or false");
    return v.get<bool>();
}

std::string text(const std::string& key, const Json& v) {
    if (!v.is_string()) bad(key, "must be a string");
    return v.get<std::string>();
}

#define SCL_NUMBER(name, member) \
    Field{name, [](const RunConfig& c) { return Json(c.member); }, [](RunConfig& c, const Json& v) { c.member = number(name, v); }}
#define SCL_COUNT(name, member, type)                                    \
    Field{name, [](const RunConfig& c) { return Json(c.member); },       \
          [](RunConfig& c, const Json& v) { c.member = static_cast<type>(count(name, v)); }}
#define SCL_FLAG(name, member) \
    Field{name, [](const RunConfig& c) { return Json(c.member); }, [](RunConfig& c, const Json& v) { c.member = flag(name, v); }}
#define SCL_TEXT(name, member) \
    Field{name, [](const RunConfig& c) { return Json(c.member); }, [](RunConfig& c, const Json& v) { c.member = text(name, v); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f{
        SCL_COUNT("num_identities", dataset.num_identities, std::uint32_t),
        SCL_COUNT("cameras", dataset.cameras, std::uint32_t),
        SCL_COUNT("images_per_camera", dataset.images_per_camera, std::uint32_t),
        SCL_COUNT("test_identities", dataset.test_identities, std::uint32_t),
        SCL_COUNT("image_height", dataset.image_height, std::uint32_t),
        SCL_COUNT("image_width", dataset.image_width, std::uint32_t),
        SCL_COUNT("image_channels", dataset.image_channels, std::uint32_t),
        SCL_COUNT("bands", dataset.bands, std::uint32_t),
        SCL_NUMBER("prototype_amplitude", dataset.prototype_amplitude),
        SCL_NUMBER("min_prototype_angle_deg", dataset.min_prototype_angle_deg),
        SCL_NUMBER("tint_scale", dataset.tint_scale),
        SCL_NUMBER("noise_scale", dataset.noise_scale),
        Field{"data_seed", [](const RunConfig& c) { return Json(c.dataset.seed); },
              [](RunConfig& c, const Json& v) {
                  c.dataset.seed = count("data_seed", v, std::numeric_limits<std::uint64_t>::max());
              }},
        SCL_COUNT("map_height", model.map_height, std::size_t),
        SCL_COUNT("map_width", model.map_width, std::size_t),
        SCL_COUNT("channels", model.channels, std::size_t),
        SCL_COUNT("hidden", model.hidden, std::size_t),
        SCL_COUNT("stripes", model.stripes, std::size_t),
        SCL_COUNT("key_dim", model.key_dim, std::size_t),
        SCL_FLAG("share_stripe_projection", share_stripe_projection),
        SCL_COUNT("epochs", train.epochs, std::size_t),
        SCL_COUNT("init_epochs", train.init_epochs, std::size_t),
        SCL_COUNT("batch_size", train.batch_size, std::size_t),
        SCL_NUMBER("learning_rate", train.learning_rate),
        SCL_NUMBER("momentum", train.momentum),
        Field{"seed", [](const RunConfig& c) { return Json(c.train.seed); },
              [](RunConfig& c, const Json& v) { c.train.seed = count("seed", v, std::numeric_limits<std::uint64_t>::max()); }},
        SCL_NUMBER("flip_probability", train.flip_probability),
        Field{"mixture_keys", [](const RunConfig& c) { return Json(to_string(c.train.mixture_keys)); },
              [](RunConfig& c, const Json& v) { c.train.mixture_keys = parse_mixture_keys(text("mixture_keys", v)); }},
        SCL_NUMBER("beta", train.similarity.beta),
        SCL_NUMBER("lambda_c", train.similarity.lambda_c),
        SCL_COUNT("n_plus", train.similarity.n_plus, std::size_t),
        Field{"n_minus",
              [](const RunConfig& c) { return c.n_minus_all ? Json("all") : Json(c.train.similarity.n_minus); },
              [](RunConfig& c, const Json& v) {
                  if (v.is_string()) {
                      if (v.get<std::string>() != "all") bad("n_minus", "must be a count or \"all\"");
                      c.n_minus_all = true;
                  } else {
                      c.train.similarity.n_minus = count("n_minus", v);
                      c.n_minus_all = false;
                  }
              }},
        SCL_NUMBER("tau", train.loss.tau),
        SCL_NUMBER("lambda_t", train.loss.lambda_t),
        SCL_NUMBER("alpha", train.loss.alpha),
        SCL_NUMBER("lambda_p", train.loss.lambda_p),
        SCL_FLAG("exclude_same_camera", eval.exclude_same_camera),
        SCL_FLAG("eval_append_local", eval.append_local),
        SCL_TEXT("dataset", dataset_path),
        SCL_TEXT("checkpoint", checkpoint_path),
        SCL_TEXT("metrics", metrics_path),
    };
    return f;
}

#undef SCL_NUMBER
#undef SCL_COUNT
#undef SCL_FLAG
#undef SCL_TEXT

const Field& field(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key) return f;
    throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
    dataset.validate();
    ModelDims m = model;
    m.image_height = dataset.image_height;
    m.image_width = dataset.image_width;
    m.image_channels = dataset.image_channels;
    m.validate();
    // The sample-count check waits for resolve().
    train.validate(std::numeric_limits<std::size_t>::max());
}

void RunConfig::resolve(std::size_t sample_count, std::uint32_t height, std::uint32_t width, std::uint32_t channels) {
    model.image_height = height;
    model.image_width = width;
    model.image_channels = channels;
    model.validate();
    if (n_minus_all) {
        if (train.similarity.n_plus + 1 > sample_count) {
            throw ConfigError("config: n_plus " + std::to_string(train.similarity.n_plus) + " leaves no negatives among " +
                              std::to_string(sample_count) + " samples");
        }
        train.similarity.n_minus = sample_count - train.similarity.n_plus - 1;
    }
    train.validate(sample_count);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

RunConfig parse_config(const std::string& json_text) {
    Json j;
    try {
        j = Json::parse(json_text);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    RunConfig cfg;
    for (const auto& [key, value] : j.items()) field(key).set(cfg, value);
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string dump_config(const RunConfig& cfg) {
    Json j = Json::object();
    for (const auto& f : fields()) j[f.key] = f.get(cfg);
    return j.dump(2) + "\n";
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    const Field& f = field(key);
    Json v;
    try {
        v = Json::parse(value);
    } catch (const Json::parse_error&) {
        v = value;  // bare words such as all or joint
    }
    f.set(cfg, v);
}

}  // namespace scl
