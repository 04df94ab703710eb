#pragma once

// Binary checkpoint container:
//   "SSTCKPT1"
//   u32 line count, then per line u32 length + "key=value" (ModelConfig)
//   u32 tensor count, then per tensor
//     u32 name length, name, u32 rank, rank * u64 extents, f64 values
// All integers and floats little-endian.

#include <string>
#include <string_view>

#include "sst/model.hpp"

namespace sst {

inline constexpr std::string_view kCheckpointMagic = "SSTCKPT1";

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

std::string serialize_checkpoint(const ModelConfig& cfg, const ModelParams& params);

// ParseError on a bad magic, truncation, an unknown or missing tensor or a
// shape that disagrees with the stored configuration.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sst
