#pragma once

#include <optional>
#include <vector>

#include "momentflow/config.hpp"
#include "momentflow/params.hpp"
#include "momentflow/rng.hpp"
#include "momentflow/tensor.hpp"

namespace momentflow {

struct ForwardOptions {
  PropMode mode = PropMode::ap2;
  /// Dropout layers act as identity when false (deterministic evaluation).
  bool dropout_active = true;
  /// Noise source for sample mode; required there, unused otherwise.
  NoiseStream* noise = nullptr;
};

/// Everything recorded during one forward pass: the (possibly sampled) input
/// actually fed to the first layer, every intermediate tensor, sampled
/// dropout masks, and the head posterior per batch row.
struct ForwardTrace {
  MomentTensor input;
  std::vector<MomentTensor> layer_outputs;
  std::vector<std::vector<double>> dropout_masks;  // sample mode only
  std::vector<ClassPosterior> posterior;           // one per batch row
};

/// Sequential layer application. The input tensor carries the batch
/// dimension in front of cfg.input_shape. In ap1 mode variances are pinned
/// to zero after every layer; in sample mode the input and every stochastic
/// unit are sampled from options.noise.
ForwardTrace network_forward(const NetworkConfig& cfg,
                             const NetworkParams& params,
                             const MomentTensor& input,
                             const ForwardOptions& options);

/// Individual layer forwards (composed by network_forward).
MomentTensor linear_forward(const LayerSpec& layer, const LayerParams& p,
                            const MomentTensor& in);
MomentTensor conv2d_forward(const LayerSpec& layer, const LayerParams& p,
                            const MomentTensor& in);
MomentTensor activation_forward(const ActivationSpec& act,
                                const MomentTensor& in, PropMode mode,
                                NoiseStream* noise);
MomentTensor avgpool_forward(const LayerSpec& layer, const MomentTensor& in);
MomentTensor maxpool_forward(const LayerSpec& layer, const MomentTensor& in,
                             PropMode mode);

/// Per-unit moment map of one activation in ap2 mode.
ScalarMoments activation_moments(const ActivationSpec& act, ScalarMoments in);

/// One latent-variable sample of an activation output given pre-activation x.
double activation_sample(const ActivationSpec& act, double x,
                         NoiseStream& noise);

/// Per-channel moment statistics; one entry per channel of a layer boundary.
using ChannelStats = std::vector<ScalarMoments>;

/// Propagate dataset input statistics through the stack with the spatial and
/// batch dimensions collapsed: convolutions become channel-mixing linear
/// maps with kernel sums for means and squared-kernel sums for variances.
/// Returns stats after every layer (the softmax head passes through
/// unchanged). input_stats holds one entry per input channel, or a single
/// pooled entry that is broadcast.
std::vector<ChannelStats> propagate_dataset_stats(
    const NetworkConfig& cfg, const NetworkParams& params,
    const ChannelStats& input_stats);

struct NormalizationError : std::runtime_error {
  explicit NormalizationError(const std::string& msg)
      : std::runtime_error(msg) {}
};

/// Recurrent analytic re-initialization: propagate dataset stats up to each
/// normalize marker, rescale the producing linear/conv layer's outgoing
/// weights by 1/sigma per channel and set its bias so the propagated channel
/// stats at the marker become exactly (0, 1), then continue downstream.
/// Throws NormalizationError if any channel has zero propagated variance or
/// a marker is not directly preceded by a linear/conv layer.
void apply_analytic_normalization(const NetworkConfig& cfg,
                                  NetworkParams& params,
                                  const ChannelStats& input_stats);

}  // namespace momentflow
