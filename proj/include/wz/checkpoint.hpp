#pragma once

#include <cstdint>
#include <string>

#include "wz/model.hpp"

// Checkpoint file layout, all little-endian:
//   "AMCN" | version byte | u64 metadata length | metadata JSON | f32 blob
// The metadata echoes the model configuration and the normalization the
// weights assume; the blob holds every parameter tensor in entries() order.

namespace wz {

inline constexpr char kCheckpointMagic[4] = {'A', 'M', 'C', 'N'};
inline constexpr unsigned char kCheckpointVersion = 0x01;

struct CheckpointMeta {
  ModelConfig model;
  double s_max = 80.0;
  std::uint64_t seed = 0;  // training seed, provenance only
  std::string note;
};

struct LoadedCheckpoint {
  ModelParams<float> params;
  CheckpointMeta meta;
};

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const CheckpointMeta& meta);

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace wz
