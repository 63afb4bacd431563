#include "scl/memory.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "scl/autodiff.hpp"
#include "scl/errors.hpp"
#include "scl/tensor.hpp"

namespace scl {

MemoryBanks::MemoryBanks(std::size_t count, std::size_t dim, std::size_t stripes)
    : count_(count), dim_(dim), stripes_(stripes) {
    if (count == 0 || dim == 0 || stripes == 0) throw ConfigError("memory: bank sizes must be positive");
    global_.assign(count * dim, 0.0);
    local_.assign(count * stripes * dim, 0.0);
    mixture_.assign(count * dim, 0.0);
    global_init_.assign(count, 0);
    local_init_.assign(count, 0);
    mixture_init_.assign(count, 0);
}

MemoryBanks init_banks(std::size_t count, std::size_t dim, std::size_t stripes) {
    return MemoryBanks(count, dim, stripes);
}

void MemoryBanks::check_index(std::size_t i, const char* op) const {
    if (i >= count_) {
        throw std::out_of_range(std::string(op) + ": index " + std::to_string(i) + " outside bank of " +
                                std::to_string(count_));
    }
}

std::span<const double> MemoryBanks::global(std::size_t i) const {
    check_index(i, "global");
    return {global_.data() + i * dim_, dim_};
}

std::span<const double> MemoryBanks::local(std::size_t i) const {
    check_index(i, "local");
    return {local_.data() + i * stripes_ * dim_, stripes_ * dim_};
}

std::span<const double> MemoryBanks::local(std::size_t i, std::size_t stripe) const {
    check_index(i, "local");
    return {local_.data() + (i * stripes_ + stripe) * dim_, dim_};
}

std::span<const double> MemoryBanks::mixture(std::size_t i) const {
    check_index(i, "mixture");
    return {mixture_.data() + i * dim_, dim_};
}

void fuse_key(std::span<double> row, std::span<const double> key) {
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = 0.5 * (row[k] + key[k]);
    const double n = l2_norm(row);
    if (n < kNormFloor) return;
    for (auto& v : row) v /= n;
}

void MemoryBanks::update_anchor_global(std::size_t i, std::span<const double> v) {
    check_index(i, "update_anchor_global");
    if (v.size() != dim_) throw ShapeError("update_anchor_global: key of size " + std::to_string(v.size()));
    fuse_key({global_.data() + i * dim_, dim_}, v);
    global_init_[i] = 1;
}

void MemoryBanks::update_anchor_local(std::size_t i, std::span<const double> v) {
    check_index(i, "update_anchor_local");
    if (v.size() != stripes_ * dim_) throw ShapeError("update_anchor_local: keys of size " + std::to_string(v.size()));
    for (std::size_t j = 0; j < stripes_; ++j) {
        fuse_key({local_.data() + (i * stripes_ + j) * dim_, dim_}, v.subspan(j * dim_, dim_));
    }
    local_init_[i] = 1;
}

void MemoryBanks::update_mixture_positives(std::span<const std::size_t> positives, std::span<const double> v_global,
                                           std::span<const double> v_local) {
    if (positives.empty()) throw std::invalid_argument("update_mixture_positives: empty positive set");
    for (auto k : positives) check_index(k, "update_mixture_positives");
    if ((!v_global.empty() && v_global.size() != dim_) || (!v_local.empty() && v_local.size() != dim_)) {
        throw ShapeError("update_mixture_positives: key size does not match bank dimension");
    }
    for (auto k : positives) {
        std::span<double> row{mixture_.data() + k * dim_, dim_};
        if (!v_global.empty()) fuse_key(row, v_global);
        if (!v_local.empty()) fuse_key(row, v_local);
        mixture_init_[k] = 1;
    }
}

void MemoryBanks::restore(std::vector<double> global, std::vector<double> local, std::vector<double> mixture,
                          std::vector<std::uint8_t> global_flags, std::vector<std::uint8_t> local_flags,
                          std::vector<std::uint8_t> mixture_flags) {
    if (global.size() != global_.size() || local.size() != local_.size() || mixture.size() != mixture_.size() ||
        global_flags.size() != count_ || local_flags.size() != count_ || mixture_flags.size() != count_) {
        throw FormatError("memory: restored bank sizes do not match");
    }
    global_ = std::move(global);
    local_ = std::move(local);
    mixture_ = std::move(mixture);
    global_init_ = std::move(global_flags);
    local_init_ = std::move(local_flags);
    mixture_init_ = std::move(mixture_flags);
}

}  // namespace scl
