#pragma once

#include <cstdint>
#include <string>

#include "cdnet/params.hpp"
#include "cdnet/train.hpp"

namespace cdnet {

// Binary checkpoint: magic "TYNC", u32 version, u32 tensor count, then per
// tensor { u32 name length, name bytes, u32 rank, u32 dims..., f32 values }.
// All integers and floats little-endian. Contains, in order: parameters,
// momentum buffers ("opt.m." prefix), named buffers (batch-norm running
// stats), and train-config scalars ("cfg." prefix; the 64-bit seed rides in
// four 16-bit chunks so float32 storage is lossless).
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, ParamRegistry& reg,
                     const TrainConfig& cfg, int64_t step);

struct LoadedTrainState {
  TrainConfig cfg;
  int64_t step = 0;
};

// Restores every tensor into the registry (which must already hold the
// matching architecture). Rejects wrong magic/version, truncation, missing
// or extra tensors, and shape mismatches, naming the offending tensor.
LoadedTrainState load_checkpoint(const std::string& path, ParamRegistry& reg);

}  // namespace cdnet
