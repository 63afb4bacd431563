#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace scl {

// The three per-sample dictionaries: global keys M^g (N x d), per-stripe
// local keys M^l (N x N_l x d) and the fused mixture keys M^t (N x d).
// Stored keys are plain values; nothing here participates in gradients.
class MemoryBanks {
public:
    MemoryBanks() = default;
    MemoryBanks(std::size_t count, std::size_t dim, std::size_t stripes);

    std::size_t size() const { return count_; }
    std::size_t dim() const { return dim_; }
    std::size_t stripes() const { return stripes_; }

    std::span<const double> global(std::size_t i) const;
    std::span<const double> local(std::size_t i) const;  // N_l * d, stripe-major
    std::span<const double> local(std::size_t i, std::size_t stripe) const;
    std::span<const double> mixture(std::size_t i) const;

    bool global_initialized(std::size_t i) const { return global_init_.at(i) != 0; }
    bool local_initialized(std::size_t i) const { return local_init_.at(i) != 0; }
    bool mixture_initialized(std::size_t i) const { return mixture_init_.at(i) != 0; }

    // M^g[i] <- normalize((M^g[i] + v) / 2)
    void update_anchor_global(std::size_t i, std::span<const double> v_global);
    // Per stripe j: M^l[i, j] <- normalize((M^l[i, j] + v_j) / 2)
    void update_anchor_local(std::size_t i, std::span<const double> v_stripes);
    // For each k in positives: fuse v_global, then v_local, into M^t[k].
    // Either key may be empty to skip that half (single-feature ablations).
    void update_mixture_positives(std::span<const std::size_t> positives, std::span<const double> v_global,
                                  std::span<const double> v_local);

    // Raw storage, for serialization and bank-integrity checks.
    std::span<const double> global_data() const { return global_; }
    std::span<const double> local_data() const { return local_; }
    std::span<const double> mixture_data() const { return mixture_; }
    std::span<const std::uint8_t> global_flags() const { return global_init_; }
    std::span<const std::uint8_t> local_flags() const { return local_init_; }
    std::span<const std::uint8_t> mixture_flags() const { return mixture_init_; }
    void restore(std::vector<double> global, std::vector<double> local, std::vector<double> mixture,
                 std::vector<std::uint8_t> global_flags, std::vector<std::uint8_t> local_flags,
                 std::vector<std::uint8_t> mixture_flags);

    friend bool operator==(const MemoryBanks&, const MemoryBanks&) = default;

private:
    void check_index(std::size_t i, const char* op) const;

    std::size_t count_ = 0, dim_ = 0, stripes_ = 0;
    std::vector<double> global_, local_, mixture_;
    std::vector<std::uint8_t> global_init_, local_init_, mixture_init_;
};

MemoryBanks init_banks(std::size_t count, std::size_t dim, std::size_t stripes);

// In place: row <- normalize((row + key) / 2). A zero result is left as is.
void fuse_key(std::span<double> row, std::span<const double> key);

}  // namespace scl
