#pragma once

#include <iosfwd>
#include <span>

#include "momentflow/mc.hpp"

namespace momentflow {

/// Mean |mu - mu*| over units, relative to the mean MC standard deviation.
/// Throws if every sigma* is zero.
double eps_mu(std::span<const double> approx_means, const MCEstimate& mc);

/// Geometric mean of sigma/sigma* over units. Units where sigma* = 0 are
/// excluded and counted via excluded_out (the metric is undefined there);
/// throws if a retained pair has a nonpositive entry.
double eps_sigma(std::span<const double> approx_stds,
                 std::span<const double> mc_stds,
                 size_t* excluded_out = nullptr);

/// Forward KL divergence sum_y p_y (log p_y - log q_y), in nats.
double posterior_kl(const ClassPosterior& p, const ClassPosterior& q);

struct LayerAccuracy {
  size_t layer_index = 0;
  LayerKind kind = LayerKind::linear;
  double eps_mu_ap1 = 0.0;
  double eps_mu_ap2 = 0.0;
  double eps_sigma_ap2 = 1.0;
  size_t sigma_excluded = 0;  // units with sigma* = 0
  bool defined = true;        // false when every MC sigma* is zero
};

/// Per-layer accuracy of AP1/AP2 against the MC oracle, averaged over the
/// batch rows of the given input.
struct AccuracyReport {
  std::vector<LayerAccuracy> layers;
  double kl_ap1 = 0.0;         // MC posterior vs standard softmax on AP1 means
  double kl_simplified = 0.0;  // MC posterior vs AP2 simplified softmax
  double kl_full = 0.0;        // MC posterior vs AP2 full softmax variant
  size_t n_samples = 0;
};

/// Runs AP1, AP2 and the MC oracle on one input batch and assembles the
/// metrics. The full-softmax KL uses full_variant (logistic or normal).
AccuracyReport layerwise_accuracy_report(
    const NetworkConfig& cfg, const NetworkParams& params,
    const MomentTensor& input, size_t n_samples, uint64_t seed,
    SoftmaxApprox full_variant = SoftmaxApprox::logistic);

/// CSV: one row per layer (layer_index, layer_kind, eps_mu_ap1, eps_mu_ap2,
/// eps_sigma_ap2), then a final row with kl_simplified and kl_full.
void write_report_csv(std::ostream& out, const AccuracyReport& report);

struct StabilityPoint {
  double sigma0 = 0.0;
  double accuracy = 0.0;
};

/// Accuracy under Gaussian input noise of scale sigma0. Every method sees
/// the same noisy realization per image: ap1 classifies it with the plain
/// forward, ap2 feeds it together with the known variance sigma0^2, sample
/// additionally samples any stochastic units.
std::vector<StabilityPoint> noise_stability_curve(
    const NetworkConfig& cfg, const NetworkParams& params, const Dataset& ds,
    std::span<const double> noise_sigmas, PropMode mode, uint64_t seed);

}  // namespace momentflow
