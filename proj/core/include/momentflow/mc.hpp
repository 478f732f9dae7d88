#pragma once

#include <span>
#include <vector>

#include "momentflow/data.hpp"
#include "momentflow/network.hpp"

namespace momentflow {

/// Numerically stable single-pass mean/variance accumulator with pairwise
/// merge, so sample subsets processed by different workers combine to the
/// same result regardless of the partition.
struct RunningMoments {
  size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }
  void merge(const RunningMoments& other) {
    if (other.count == 0) return;
    if (count == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(count);
    const double nb = static_cast<double>(other.count);
    const double delta = other.mean - mean;
    mean += delta * nb / (na + nb);
    m2 += other.m2 + delta * delta * na * nb / (na + nb);
    count += other.count;
  }
  /// Population (1/N) variance.
  double variance() const {
    return count == 0 ? 0.0 : m2 / static_cast<double>(count);
  }
};

/// Sample-based empirical moments per unit.
struct MCEstimate {
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> se;  // sqrt(var / n_samples)
  size_t n_samples = 0;
};

struct MCPropagation {
  std::vector<MCEstimate> per_layer;
  std::vector<ClassPosterior> posterior;  // one per batch row
};

/// Ground-truth propagation: run the sample-mode forward n_samples times
/// (sample i draws its noise from stream (seed, i)), accumulate per-unit
/// running moments at every layer, and average the per-sample softmax
/// outputs into the empirical class posterior, Laplace-smoothed with
/// eps = 1/(10*n_samples) before taking logs. Requires n_samples >= 2.
MCPropagation mc_propagate(const NetworkConfig& cfg,
                           const NetworkParams& params,
                           const MomentTensor& input, size_t n_samples,
                           uint64_t seed, size_t workers = 1,
                           bool dropout_active = true);

/// Independent oracle for the softmax posterior: empirical argmax
/// frequencies of X_k + Gumbel noise, Laplace-smoothed.
ClassPosterior mc_softmax_gumbel(std::span<const ScalarMoments> ins,
                                 size_t n_samples, uint64_t seed);

/// Per-layer per-channel statistics measured by sweeping dataset samples
/// through the network (sample mode, one noise stream per sample), pooling
/// over samples and spatial positions.
std::vector<ChannelStats> mc_dataset_stats(const NetworkConfig& cfg,
                                           const NetworkParams& params,
                                           const Dataset& ds, uint64_t seed);

}  // namespace momentflow
