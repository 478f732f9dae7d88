#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "momentflow/config.hpp"

namespace momentflow {

/// Weights and bias of one layer; empty for parameterless layers. Weight
/// layouts: linear row-major [out][in], conv [out_c][in_c][k][k].
struct LayerParams {
  std::vector<double> weight;
  std::vector<double> bias;
};

using NetworkParams = std::vector<LayerParams>;

/// Uniform init on [-1/sqrt(c), 1/sqrt(c)], c = inputs per output unit.
/// Layers with bias disabled get zero biases that stay fixed.
NetworkParams init_params(const NetworkConfig& cfg, uint64_t seed);

/// Zero-filled parameter (or gradient) storage shaped like init_params.
NetworkParams zero_params_like(const NetworkConfig& cfg);

/// Checkpoint container. Flat binary layout, little-endian:
///   magic "MFCK" | u32 version=1 | u32 layer count |
///   per layer: u64 weight size, u64 bias size |
///   all weights then biases as f64 in layer order.
void save_checkpoint(const std::string& path, const NetworkParams& params);
NetworkParams load_checkpoint(const std::string& path);

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg)
      : std::runtime_error(msg) {}
};

}  // namespace momentflow
