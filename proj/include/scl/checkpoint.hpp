#pragma once

#include <filesystem>
#include <vector>

#include "scl/config.hpp"
#include "scl/trainer.hpp"

namespace scl {

// A training run frozen between epochs.
struct Checkpoint {
    RunConfig config;  // resolved; paths are not stored
    TrainState state;
    std::vector<EpochStats> history;
};

// "SCCK", u32 version, u32 block count, then per block: u64 byte length of
// the rest of the block, u32 name length, name, u32 rank, u64 dims, float64
// data. Little-endian throughout.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws FormatError on damaged files and ConfigError on inconsistent contents.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace scl
