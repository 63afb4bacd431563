#include "scl/synthdata.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "binary_io.hpp"
#include "scl/errors.hpp"
#include "scl/rng.hpp"

namespace scl {

void DatasetSpec::validate() const {
    if (num_identities == 0 || cameras == 0 || images_per_camera == 0) {
        throw ConfigError("dataset: identities, cameras and images_per_camera must be positive");
    }
    if (test_identities >= num_identities) {
        throw ConfigError("dataset: test_identities must leave at least one training identity");
    }
    if (test_identities > 0 && images_per_camera < 2) {
        throw ConfigError("dataset: held-out identities need at least 2 images per camera (query + gallery)");
    }
    if (test_identities > 0 && cameras < 2) {
        throw ConfigError("dataset: cross-camera evaluation needs at least 2 cameras");
    }
    if (image_height == 0 || image_width == 0 || image_channels == 0 || bands == 0) {
        throw ConfigError("dataset: image dimensions must be positive");
    }
    if (image_height % bands != 0) throw ConfigError("dataset: image_height must be divisible by bands");
    if (image_height > 65535 || image_width > 65535 || image_channels > 65535 || cameras > 65535) {
        throw ConfigError("dataset: dimensions exceed the 16-bit file format fields");
    }
    if (!(min_prototype_angle_deg >= 0.0 && min_prototype_angle_deg < 90.0)) {
        throw ConfigError("dataset: min_prototype_angle_deg must lie in [0, 90)");
    }
    if (!(noise_scale >= 0.0) || !(tint_scale >= 0.0) || !(prototype_amplitude > 0.0)) {
        throw ConfigError("dataset: amplitude must be positive, noise and tint non-negative");
    }
}

namespace {

std::vector<double> gaussian_unit(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(d);
    double n = 0.0;
    do {
        n = 0.0;
        for (auto& x : v) {
            x = dist(rng);
            n += x * x;
        }
    } while (n < 1e-12);
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

}  // namespace

std::vector<std::vector<double>> make_prototypes(const DatasetSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(derive_seed(spec.seed, {0x70726f74ULL}));
    const double max_cos = std::cos(spec.min_prototype_angle_deg * std::numbers::pi / 180.0);
    const std::size_t d = spec.pattern_dim();
    std::vector<std::vector<double>> protos;
    std::size_t attempts = 0;
    const std::size_t max_attempts = 100000 * static_cast<std::size_t>(spec.num_identities);
    while (protos.size() < spec.num_identities) {
        if (++attempts > max_attempts) {
            throw ConfigError("dataset: cannot place " + std::to_string(spec.num_identities) +
                              " prototypes with minimum separation " + std::to_string(spec.min_prototype_angle_deg) +
                              " degrees in dimension " + std::to_string(d));
        }
        auto cand = gaussian_unit(d, rng);
        const bool ok = std::all_of(protos.begin(), protos.end(), [&](const auto& p) {
            double c = 0.0;
            for (std::size_t k = 0; k < d; ++k) c += p[k] * cand[k];
            return c <= max_cos;
        });
        if (ok) protos.push_back(std::move(cand));
    }
    return protos;
}

std::vector<std::vector<double>> make_camera_tints(const DatasetSpec& spec) {
    std::mt19937_64 rng(derive_seed(spec.seed, {0x74696e74ULL}));
    std::normal_distribution<double> dist(0.0, spec.tint_scale);
    std::vector<std::vector<double>> tints(spec.cameras, std::vector<double>(spec.pattern_dim()));
    for (auto& t : tints)
        for (auto& v : t) v = spec.tint_scale > 0.0 ? dist(rng) : 0.0;
    return tints;
}

std::vector<double> render_pattern(const DatasetSpec& spec, const std::vector<double>& pattern) {
    const std::size_t h = spec.image_height, w = spec.image_width, c = spec.image_channels;
    const std::size_t rows_per_band = h / spec.bands;
    std::vector<double> img(h * w * c);
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t band = y / rows_per_band;
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) img[(y * w + x) * c + ch] = pattern[band * c + ch];
    }
    return img;
}

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    const auto protos = make_prototypes(spec);
    const auto tints = make_camera_tints(spec);
    const std::size_t first_test = spec.num_identities - spec.test_identities;

    Dataset out;
    for (std::uint32_t id = 0; id < spec.num_identities; ++id) {
        std::mt19937_64 rng(derive_seed(spec.seed, {0x696d67ULL, id}));
        std::normal_distribution<double> noise(0.0, 1.0);
        for (std::uint32_t cam = 0; cam < spec.cameras; ++cam) {
            std::vector<double> pattern(spec.pattern_dim());
            for (std::size_t k = 0; k < pattern.size(); ++k) {
                pattern[k] = 0.5 + spec.prototype_amplitude * protos[id][k] + tints[cam][k];
            }
            const auto clean = render_pattern(spec, pattern);
            for (std::uint32_t n = 0; n < spec.images_per_camera; ++n) {
                ImageSample s;
                s.identity = id;
                s.camera = static_cast<std::uint16_t>(cam);
                s.height = static_cast<std::uint16_t>(spec.image_height);
                s.width = static_cast<std::uint16_t>(spec.image_width);
                s.channels = static_cast<std::uint16_t>(spec.image_channels);
                s.pixels.resize(clean.size());
                for (std::size_t k = 0; k < clean.size(); ++k) {
                    const double eps = spec.noise_scale > 0.0 ? spec.noise_scale * noise(rng) : 0.0;
                    s.pixels[k] = static_cast<float>(std::clamp(clean[k] + eps, 0.0, 1.0));
                }
                if (id < first_test) {
                    out.train.push_back(std::move(s));
                } else if (n == 0) {
                    out.query.push_back(std::move(s));
                } else {
                    out.gallery.push_back(std::move(s));
                }
            }
        }
    }
    return out;
}

void flip_horizontal(ImageSample& s) {
    const std::size_t w = s.width, c = s.channels;
    for (std::size_t y = 0; y < s.height; ++y) {
        float* row = s.pixels.data() + y * w * c;
        for (std::size_t x = 0; x < w / 2; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) std::swap(row[x * c + ch], row[(w - 1 - x) * c + ch]);
    }
}

ImageSample augment_flip(const ImageSample& sample, double p, std::mt19937_64& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("augment_flip: probability outside [0, 1]");
    ImageSample out = sample;
    // One draw per call regardless of p keeps the stream aligned across settings.
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u < p) flip_horizontal(out);
    return out;
}

// ---------------------------------------------------------------------------
// Binary format: "SCRD", u32 version, u32 train/query/gallery counts, then per
// sample u32 identity, u16 camera, u16 H, u16 W, u16 C, f32 pixels. All
// little-endian.
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<char, 4> kMagic{'S', 'C', 'R', 'D'};
constexpr std::uint32_t kVersion = 1;

using io::Reader;
using io::Writer;

void write_sample(Writer& w, const ImageSample& s) {
    w.put<std::uint32_t>(s.identity);
    w.put<std::uint16_t>(s.camera);
    w.put<std::uint16_t>(s.height);
    w.put<std::uint16_t>(s.width);
    w.put<std::uint16_t>(s.channels);
    for (float p : s.pixels) w.put_f32(p);
}

ImageSample read_sample(Reader& r) {
    ImageSample s;
    s.identity = r.get<std::uint32_t>("identity");
    s.camera = r.get<std::uint16_t>("camera");
    s.height = r.get<std::uint16_t>("height");
    s.width = r.get<std::uint16_t>("width");
    s.channels = r.get<std::uint16_t>("channels");
    const std::size_t n = static_cast<std::size_t>(s.height) * s.width * s.channels;
    if (n == 0) throw FormatError("dataset: zero-sized image at offset " + std::to_string(r.offset()));
    r.need(n * 4, "pixels");
    s.pixels.resize(n);
    for (auto& p : s.pixels) p = r.get_f32("pixels");
    return s;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
    Writer w(path, "dataset");
    w.bytes(kMagic.data(), kMagic.size());
    w.put<std::uint32_t>(kVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(data.train.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(data.query.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(data.gallery.size()));
    for (const auto* split : {&data.train, &data.query, &data.gallery})
        for (const auto& s : *split) {
            if (s.pixels.size() != static_cast<std::size_t>(s.height) * s.width * s.channels) {
                throw FormatError("dataset: sample pixel count does not match its dimensions");
            }
            write_sample(w, s);
        }
    w.flush();
}

Dataset load_dataset(const std::filesystem::path& path) {
    Reader r(path, "dataset");
    r.expect_magic(kMagic.data(), kMagic.size());
    const auto version = r.get<std::uint32_t>("version");
    if (version != kVersion) {
        throw FormatError("dataset: unsupported version " + std::to_string(version) + " at offset 4");
    }
    const auto n_train = r.get<std::uint32_t>("train count");
    const auto n_query = r.get<std::uint32_t>("query count");
    const auto n_gallery = r.get<std::uint32_t>("gallery count");
    Dataset d;
    for (auto [split, n] : {std::pair{&d.train, n_train}, std::pair{&d.query, n_query}, std::pair{&d.gallery, n_gallery}}) {
        split->reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) split->push_back(read_sample(r));
    }
    if (r.offset() != r.size()) {
        throw FormatError("dataset: trailing bytes at offset " + std::to_string(r.offset()));
    }
    return d;
}

}  // namespace scl
