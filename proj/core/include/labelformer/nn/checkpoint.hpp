#pragma once

#include <filesystem>
#include <string>

#include "labelformer/nn/parameter.hpp"

// Checkpoint layout:
//   "LFCKPT <version>\n"
//   "config <byte count>\n" <config text>
//   "params <count>\n"
//   per parameter: u32 name length, name bytes, u32 rank, u64 dims[rank],
//                  f64 values (all integers and reals little-endian)
namespace labelformer::nn {

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                     const std::string& config_text);

// Reads only the embedded config text.
std::string read_checkpoint_config(const std::filesystem::path& path);

// Overwrites the values of `store`, whose names and shapes must match the
// file exactly. Returns the embedded config text.
std::string load_checkpoint(const std::filesystem::path& path, ParameterStore& store);

}  // namespace labelformer::nn
