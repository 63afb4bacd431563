#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

namespace scl {

// One synthetic pedestrian image, pixels H x W x C row-major in [0, 1].
struct ImageSample {
    std::vector<float> pixels;
    std::uint32_t identity = 0;  // hidden ground truth: generator and evaluator only
    std::uint16_t camera = 0;
    std::uint16_t height = 0;
    std::uint16_t width = 0;
    std::uint16_t channels = 0;

    friend bool operator==(const ImageSample&, const ImageSample&) = default;
};

struct DatasetSpec {
    std::uint32_t num_identities = 50;
    std::uint32_t cameras = 6;
    std::uint32_t images_per_camera = 4;
    // The last test_identities identities are held out for query/gallery.
    std::uint32_t test_identities = 25;
    std::uint32_t image_height = 32;
    std::uint32_t image_width = 16;
    std::uint32_t image_channels = 3;
    // Horizontal bands of constant prototype colour.
    std::uint32_t bands = 8;
    double prototype_amplitude = 0.3;
    double min_prototype_angle_deg = 60.0;
    double tint_scale = 0.04;
    double noise_scale = 0.05;
    std::uint64_t seed = 7;

    void validate() const;
    std::size_t pattern_dim() const { return static_cast<std::size_t>(bands) * image_channels; }
};

struct Dataset {
    std::vector<ImageSample> train;
    std::vector<ImageSample> query;
    std::vector<ImageSample> gallery;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Unit-norm identity prototypes (bands x channels) with enforced minimum angular separation.
std::vector<std::vector<double>> make_prototypes(const DatasetSpec& spec);
// Per-camera additive offsets (bands x channels).
std::vector<std::vector<double>> make_camera_tints(const DatasetSpec& spec);

// Prototype pattern expanded to a clean image (no tint, no noise, no clipping).
std::vector<double> render_pattern(const DatasetSpec& spec, const std::vector<double>& pattern);

Dataset generate_dataset(const DatasetSpec& spec);

// Mirrors the image along its width with probability p.
ImageSample augment_flip(const ImageSample& sample, double p, std::mt19937_64& rng);
void flip_horizontal(ImageSample& sample);

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace scl
