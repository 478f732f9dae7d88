#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "momentflow/moments.hpp"
#include "momentflow/softmax_moments.hpp"

namespace momentflow {

enum class PropMode { ap1, ap2, sample };

enum class LayerKind {
  linear,
  conv2d,
  activation,
  dropout,
  avgpool,
  maxpool,
  normalize,
  softmax_head,
};

enum class ActKind {
  relu,
  lrelu,
  heaviside,
  logistic_bernoulli,
  logistic_transform,
  probit,
  normal_cdf,
  abs_value,
};

/// Per-unit activation selection plus its approximation switches. Defaults
/// follow the propagation conventions used throughout: normal input
/// assumption for the ReLU family, ap2b for the sigmoid family.
struct ActivationSpec {
  ActKind kind = ActKind::relu;
  InputAssumption assume = InputAssumption::normal;
  VarApprox var_kind = VarApprox::exact;
  SigmoidMeanApprox sigmoid_mean = SigmoidMeanApprox::ap2b;
  SigmoidVarApprox sigmoid_var = SigmoidVarApprox::heuristic;
  double alpha = 0.01;  // leaky ReLU slope
};

struct LayerSpec {
  LayerKind kind = LayerKind::linear;

  // linear
  size_t in_features = 0, out_features = 0;
  bool has_bias = true;

  // conv2d (square kernels, valid padding)
  size_t in_channels = 0, out_channels = 0, kernel = 0, stride = 1;

  // activation
  ActivationSpec act;

  // dropout
  double drop_prob = 0.0;
  bool rescale = true;

  // pooling
  size_t window = 0;
  bool adaptive = false;

  // softmax head
  SoftmaxApprox softmax = SoftmaxApprox::simplified;
};

/// Declarative layer stack. input_shape excludes the batch dimension:
/// {channels, height, width} for image inputs or {features} for flat ones.
struct NetworkConfig {
  std::vector<size_t> input_shape;
  std::vector<LayerSpec> layers;
  PropMode default_mode = PropMode::ap2;
  uint64_t seed = 0;
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Parse the line-oriented network description: one layer per line as
/// `kind key=value ...`, `#` starts a comment, the first non-comment line
/// must be `input AxBxC`. Errors report the offending line number.
NetworkConfig parse_network_config(std::istream& in);
NetworkConfig parse_network_config_file(const std::string& path);

/// Output shape of one layer given its input shape; throws ConfigError on a
/// structural mismatch.
std::vector<size_t> layer_output_shape(const LayerSpec& layer,
                                       const std::vector<size_t>& in_shape);

/// Shapes after every layer; validates that adjacent layers compose.
std::vector<std::vector<size_t>> network_layer_shapes(const NetworkConfig& cfg);

const char* layer_kind_name(LayerKind kind);

}  // namespace momentflow
