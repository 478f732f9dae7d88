#include "momentflow/mc.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace momentflow {

namespace {

struct Accumulators {
  std::vector<std::vector<RunningMoments>> per_layer;
  std::vector<std::vector<double>> posterior_probs;  // [batch][class] sums
  size_t n = 0;

  void merge(const Accumulators& other) {
    if (other.n == 0) return;
    if (n == 0) {
      *this = other;
      return;
    }
    for (size_t l = 0; l < per_layer.size(); ++l)
      for (size_t i = 0; i < per_layer[l].size(); ++i)
        per_layer[l][i].merge(other.per_layer[l][i]);
    for (size_t b = 0; b < posterior_probs.size(); ++b)
      for (size_t k = 0; k < posterior_probs[b].size(); ++k)
        posterior_probs[b][k] += other.posterior_probs[b][k];
    n += other.n;
  }
};

Accumulators run_range(const NetworkConfig& cfg, const NetworkParams& params,
                       const MomentTensor& input, size_t begin, size_t end,
                       uint64_t seed, bool dropout_active) {
  Accumulators acc;
  for (size_t s = begin; s < end; ++s) {
    NoiseStream noise(seed, s);
    ForwardOptions opts;
    opts.mode = PropMode::sample;
    opts.dropout_active = dropout_active;
    opts.noise = &noise;
    const ForwardTrace trace = network_forward(cfg, params, input, opts);
    if (acc.n == 0) {
      acc.per_layer.resize(trace.layer_outputs.size());
      for (size_t l = 0; l < trace.layer_outputs.size(); ++l)
        acc.per_layer[l].resize(trace.layer_outputs[l].size());
      acc.posterior_probs.assign(
          trace.posterior.size(),
          std::vector<double>(
              trace.posterior.empty() ? 0 : trace.posterior[0].size(), 0.0));
    }
    for (size_t l = 0; l < trace.layer_outputs.size(); ++l)
      for (size_t i = 0; i < trace.layer_outputs[l].size(); ++i)
        acc.per_layer[l][i].push(trace.layer_outputs[l].mean[i]);
    for (size_t b = 0; b < trace.posterior.size(); ++b)
      for (size_t k = 0; k < trace.posterior[b].size(); ++k)
        acc.posterior_probs[b][k] += trace.posterior[b].prob(k);
    ++acc.n;
  }
  return acc;
}

}  // namespace

MCPropagation mc_propagate(const NetworkConfig& cfg,
                           const NetworkParams& params,
                           const MomentTensor& input, size_t n_samples,
                           uint64_t seed, size_t workers,
                           bool dropout_active) {
  if (n_samples < 2)
    throw std::invalid_argument("mc_propagate: need at least 2 samples");
  workers = std::max<size_t>(1, std::min(workers, n_samples));

  Accumulators total;
  if (workers == 1) {
    total = run_range(cfg, params, input, 0, n_samples, seed, dropout_active);
  } else {
    std::vector<Accumulators> parts(workers);
    std::vector<std::thread> threads;
    const size_t per = (n_samples + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w) {
      const size_t begin = w * per;
      const size_t end = std::min(n_samples, begin + per);
      threads.emplace_back([&, w, begin, end] {
        parts[w] = run_range(cfg, params, input, begin, end, seed,
                             dropout_active);
      });
    }
    for (auto& t : threads) t.join();
    // merge in index order: results are identical for any worker count
    for (auto& p : parts) total.merge(p);
  }

  MCPropagation out;
  out.per_layer.resize(total.per_layer.size());
  for (size_t l = 0; l < total.per_layer.size(); ++l) {
    MCEstimate& est = out.per_layer[l];
    est.n_samples = n_samples;
    est.mean.resize(total.per_layer[l].size());
    est.var.resize(total.per_layer[l].size());
    est.se.resize(total.per_layer[l].size());
    for (size_t i = 0; i < total.per_layer[l].size(); ++i) {
      est.mean[i] = total.per_layer[l][i].mean;
      est.var[i] = total.per_layer[l][i].variance();
      est.se[i] = std::sqrt(est.var[i] / static_cast<double>(n_samples));
    }
  }
  const double eps = 1.0 / (10.0 * static_cast<double>(n_samples));
  for (auto& probs : total.posterior_probs) {
    std::vector<double> smoothed(probs.size());
    for (size_t k = 0; k < probs.size(); ++k)
      smoothed[k] = probs[k] / static_cast<double>(n_samples) + eps;
    out.posterior.push_back(make_posterior_from_probs(smoothed));
  }
  return out;
}

ClassPosterior mc_softmax_gumbel(std::span<const ScalarMoments> ins,
                                 size_t n_samples, uint64_t seed) {
  if (ins.size() < 2)
    throw std::invalid_argument("mc_softmax_gumbel: need at least 2 classes");
  std::vector<double> counts(ins.size(), 0.0);
  NoiseStream noise(seed, 0x6a6e);
  for (size_t s = 0; s < n_samples; ++s) {
    size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < ins.size(); ++k) {
      const double x = ins[k].mean +
                       std::sqrt(std::max(0.0, ins[k].var)) * noise.normal() +
                       noise.gumbel();
      if (x > best_v) {
        best_v = x;
        best = k;
      }
    }
    counts[best] += 1.0;
  }
  const double eps = 1.0 / (10.0 * static_cast<double>(n_samples));
  std::vector<double> smoothed(counts.size());
  for (size_t k = 0; k < counts.size(); ++k)
    smoothed[k] = counts[k] / static_cast<double>(n_samples) + eps;
  return make_posterior_from_probs(smoothed);
}

std::vector<ChannelStats> mc_dataset_stats(const NetworkConfig& cfg,
                                           const NetworkParams& params,
                                           const Dataset& ds, uint64_t seed) {
  if (ds.n == 0) throw std::invalid_argument("mc_dataset_stats: empty dataset");
  const auto shapes = network_layer_shapes(cfg);
  std::vector<std::vector<RunningMoments>> acc(cfg.layers.size());
  for (size_t l = 0; l < cfg.layers.size(); ++l)
    acc[l].resize(shapes[l].size() == 3 ? shapes[l][0]
                                        : shape_volume(shapes[l]));
  for (size_t i = 0; i < ds.n; ++i) {
    std::vector<size_t> in_shape{1};
    in_shape.insert(in_shape.end(), ds.sample_shape.begin(),
                    ds.sample_shape.end());
    MomentTensor input(in_shape);
    const size_t sz = ds.sample_size();
    std::copy_n(ds.sample(i), sz, input.mean.data());

    NoiseStream noise(seed, i);
    ForwardOptions opts;
    opts.mode = PropMode::sample;
    opts.noise = &noise;
    const ForwardTrace trace = network_forward(cfg, params, input, opts);
    for (size_t l = 0; l < trace.layer_outputs.size(); ++l) {
      const MomentTensor& t = trace.layer_outputs[l];
      if (shapes[l].size() == 3) {
        const size_t plane = shapes[l][1] * shapes[l][2];
        for (size_t c = 0; c < shapes[l][0]; ++c)
          for (size_t j = 0; j < plane; ++j)
            acc[l][c].push(t.mean[c * plane + j]);
      } else {
        for (size_t j = 0; j < t.size(); ++j) acc[l][j].push(t.mean[j]);
      }
    }
  }
  std::vector<ChannelStats> out(cfg.layers.size());
  for (size_t l = 0; l < cfg.layers.size(); ++l) {
    out[l].resize(acc[l].size());
    for (size_t c = 0; c < acc[l].size(); ++c)
      out[l][c] = {acc[l][c].mean, acc[l][c].variance()};
  }
  return out;
}

}  // namespace momentflow
