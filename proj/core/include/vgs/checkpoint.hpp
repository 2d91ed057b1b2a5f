#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vgs/model.hpp"
#include "vgs/tensor.hpp"

namespace vgs {

/// Adam optimizer state, aligned with the model's parameter order.
struct TrainState {
  std::vector<Tensor> m;  // first moments
  std::vector<Tensor> v;  // second moments
  std::uint64_t step = 0;
  std::uint64_t epochs_done = 0;
};

/// Checkpoint file: magic "VGSC", u32 format version, u32 parameter count,
/// then per parameter (u32 name length, name bytes, u32 rank, u64 dims,
/// f64 little-endian payload), then a length-prefixed ModelConfig JSON blob.
/// A trailing optional section (magic "VGSA") stores Adam moments in table
/// order plus step and epoch counters. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const Model& model,
                     const TrainState* state = nullptr);

/// Loads the model; any training section is ignored.
Model load_checkpoint(const std::string& path);

/// Loads the model and its training state; missing state is an error.
Model load_checkpoint(const std::string& path, TrainState& state);

}  // namespace vgs
