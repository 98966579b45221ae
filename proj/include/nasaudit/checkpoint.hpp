#pragma once

#include <filesystem>

#include "nasaudit/autodiff.hpp"

namespace nasaudit {

// Flat binary parameter file: 8-byte magic "NASAUD01", u32 version, u64 count,
// then per parameter {u32 name_len, name, u32 rank, u64 dims..., f64 values...}.
// All integers and doubles little-endian.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);

// Fills an existing store in-place; parameter set and shapes must match the
// file exactly. Group membership stays with the receiving store.
void load_checkpoint_into(ParamStore& store, const std::filesystem::path& path);

// Standalone load, every parameter lands in the weights group.
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace nasaudit
