#include "momentflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "momentflow/train.hpp"

namespace momentflow {

double eps_mu(std::span<const double> approx_means, const MCEstimate& mc) {
  if (approx_means.size() != mc.mean.size())
    throw std::invalid_argument("eps_mu: shape mismatch");
  double abs_err = 0.0, sigma_sum = 0.0;
  for (size_t i = 0; i < approx_means.size(); ++i) {
    abs_err += std::abs(approx_means[i] - mc.mean[i]);
    sigma_sum += std::sqrt(mc.var[i]);
  }
  if (sigma_sum <= 0.0)
    throw std::invalid_argument("eps_mu: all MC standard deviations are zero");
  return abs_err / sigma_sum;
}

double eps_sigma(std::span<const double> approx_stds,
                 std::span<const double> mc_stds, size_t* excluded_out) {
  if (approx_stds.size() != mc_stds.size())
    throw std::invalid_argument("eps_sigma: shape mismatch");
  double log_sum = 0.0;
  size_t used = 0, excluded = 0;
  for (size_t i = 0; i < approx_stds.size(); ++i) {
    if (mc_stds[i] == 0.0) {
      ++excluded;
      continue;
    }
    if (approx_stds[i] <= 0.0 || mc_stds[i] < 0.0)
      throw std::invalid_argument("eps_sigma: nonpositive entry");
    log_sum += std::log(approx_stds[i] / mc_stds[i]);
    ++used;
  }
  if (excluded_out) *excluded_out = excluded;
  if (used == 0)
    throw std::invalid_argument("eps_sigma: no units with sigma* > 0");
  return std::exp(log_sum / static_cast<double>(used));
}

double posterior_kl(const ClassPosterior& p, const ClassPosterior& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("posterior_kl: class count mismatch");
  double kl = 0.0;
  for (size_t k = 0; k < p.size(); ++k) {
    const double pk = p.prob(k);
    if (pk > 0.0) kl += pk * (p.log_probs[k] - q.log_probs[k]);
  }
  return kl;
}

AccuracyReport layerwise_accuracy_report(const NetworkConfig& cfg,
                                         const NetworkParams& params,
                                         const MomentTensor& input,
                                         size_t n_samples, uint64_t seed,
                                         SoftmaxApprox full_variant) {
  ForwardOptions ap1_opts, ap2_opts;
  ap1_opts.mode = PropMode::ap1;
  ap2_opts.mode = PropMode::ap2;
  const ForwardTrace ap1 = network_forward(cfg, params, input, ap1_opts);
  const ForwardTrace ap2 = network_forward(cfg, params, input, ap2_opts);
  const MCPropagation mc =
      mc_propagate(cfg, params, input, n_samples, seed);

  AccuracyReport report;
  report.n_samples = n_samples;
  for (size_t l = 0; l < cfg.layers.size(); ++l) {
    if (cfg.layers[l].kind == LayerKind::softmax_head) continue;
    LayerAccuracy row;
    row.layer_index = l;
    row.kind = cfg.layers[l].kind;
    const MCEstimate& est = mc.per_layer[l];
    const bool any_sigma =
        std::any_of(est.var.begin(), est.var.end(),
                    [](double v) { return v > 0.0; });
    if (!any_sigma) {
      row.defined = false;
      report.layers.push_back(row);
      continue;
    }
    row.eps_mu_ap1 = eps_mu(ap1.layer_outputs[l].mean, est);
    row.eps_mu_ap2 = eps_mu(ap2.layer_outputs[l].mean, est);
    std::vector<double> approx_stds(est.var.size()), mc_stds(est.var.size());
    for (size_t i = 0; i < est.var.size(); ++i) {
      approx_stds[i] = std::sqrt(ap2.layer_outputs[l].var[i]);
      mc_stds[i] = std::sqrt(est.var[i]);
    }
    // clamp approximated stds away from 0 where MC kept the unit, so the
    // geometric mean stays finite; such units count as gross underestimates
    for (size_t i = 0; i < approx_stds.size(); ++i)
      if (mc_stds[i] > 0.0 && approx_stds[i] <= 0.0)
        approx_stds[i] = 1e-12;
    row.eps_sigma_ap2 = eps_sigma(approx_stds, mc_stds, &row.sigma_excluded);
    report.layers.push_back(row);
  }

  // posterior KL, averaged over batch rows, MC as the reference
  const size_t batch = mc.posterior.size();
  if (batch > 0) {
    const MomentTensor& head_in =
        cfg.layers.size() >= 2 ? ap2.layer_outputs[cfg.layers.size() - 2]
                               : ap2.input;
    const size_t classes = mc.posterior[0].size();
    std::vector<ScalarMoments> row(classes);
    double kl1 = 0.0, kl_s = 0.0, kl_f = 0.0;
    for (size_t b = 0; b < batch; ++b) {
      kl1 += posterior_kl(mc.posterior[b], ap1.posterior[b]);
      for (size_t k = 0; k < classes; ++k)
        row[k] = {head_in.mean[b * classes + k], head_in.var[b * classes + k]};
      kl_s += posterior_kl(mc.posterior[b],
                           softmax_posterior(row, SoftmaxApprox::simplified));
      kl_f += posterior_kl(mc.posterior[b],
                           softmax_posterior(row, full_variant));
    }
    report.kl_ap1 = kl1 / static_cast<double>(batch);
    report.kl_simplified = kl_s / static_cast<double>(batch);
    report.kl_full = kl_f / static_cast<double>(batch);
  }
  return report;
}

void write_report_csv(std::ostream& out, const AccuracyReport& report) {
  out << "layer_index,layer_kind,eps_mu_ap1,eps_mu_ap2,eps_sigma_ap2\n";
  char buf[200];
  for (const LayerAccuracy& row : report.layers) {
    if (!row.defined) {
      std::snprintf(buf, sizeof buf, "%zu,%s,,,\n", row.layer_index,
                    layer_kind_name(row.kind));
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%s,%.6g,%.6g,%.6g\n",
                    row.layer_index, layer_kind_name(row.kind), row.eps_mu_ap1,
                    row.eps_mu_ap2, row.eps_sigma_ap2);
    }
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "kl,,%.6g,%.6g,%.6g\n", report.kl_ap1,
                report.kl_simplified, report.kl_full);
  out << buf;
}

std::vector<StabilityPoint> noise_stability_curve(
    const NetworkConfig& cfg, const NetworkParams& params, const Dataset& ds,
    std::span<const double> noise_sigmas, PropMode mode, uint64_t seed) {
  std::vector<StabilityPoint> curve;
  curve.reserve(noise_sigmas.size());
  for (size_t si = 0; si < noise_sigmas.size(); ++si) {
    const double sigma0 = noise_sigmas[si];
    size_t correct = 0;
    NoiseStream perturb(seed, mix_seed(0xa015, si));
    NoiseStream forward_noise(seed, mix_seed(0xf02d, si));
    const size_t chunk = 256;
    std::vector<size_t> idx;
    for (size_t start = 0; start < ds.n; start += chunk) {
      const size_t count = std::min(chunk, ds.n - start);
      idx.resize(count);
      std::iota(idx.begin(), idx.end(), start);
      MomentTensor batch = batch_from_dataset(ds, idx, 0.0);
      for (size_t i = 0; i < batch.size(); ++i) {
        batch.mean[i] += sigma0 * perturb.normal();
        if (mode == PropMode::ap2) batch.var[i] = sigma0 * sigma0;
      }
      ForwardOptions opts;
      opts.mode = mode;
      opts.dropout_active = false;
      opts.noise = &forward_noise;
      const ForwardTrace trace = network_forward(cfg, params, batch, opts);
      for (size_t b = 0; b < count; ++b) {
        const auto& lp = trace.posterior[b].log_probs;
        const size_t pred = static_cast<size_t>(
            std::max_element(lp.begin(), lp.end()) - lp.begin());
        if (pred == static_cast<size_t>(ds.labels[start + b])) ++correct;
      }
    }
    curve.push_back({sigma0, static_cast<double>(correct) /
                                 static_cast<double>(ds.n)});
  }
  return curve;
}

}  // namespace momentflow
