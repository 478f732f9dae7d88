#include "momentflow/train.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numeric>
#include <ostream>

namespace momentflow {

namespace {

void axpy_params(NetworkParams& acc, const NetworkParams& g, double a) {
  for (size_t i = 0; i < acc.size(); ++i) {
    for (size_t j = 0; j < acc[i].weight.size(); ++j)
      acc[i].weight[j] += a * g[i].weight[j];
    for (size_t j = 0; j < acc[i].bias.size(); ++j)
      acc[i].bias[j] += a * g[i].bias[j];
  }
}

}  // namespace

OptimizerState make_optimizer(const NetworkConfig& cfg, OptimizerKind kind) {
  OptimizerState state;
  state.kind = kind;
  if (kind == OptimizerKind::adam) {
    state.m = zero_params_like(cfg);
    state.v = zero_params_like(cfg);
  }
  return state;
}

void optimizer_step(OptimizerState& state, NetworkParams& params,
                    const GradientBundle& grads, double lr,
                    const TrainHyperparams& hp) {
  ++state.step;
  if (state.kind == OptimizerKind::sgd) {
    axpy_params(params, grads.params, -lr);
    return;
  }
  const double b1 = hp.beta1, b2 = hp.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto update = [&](std::vector<double>& p, std::vector<double>& m,
                    std::vector<double>& v, const std::vector<double>& g) {
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + hp.adam_eps);
    }
  };
  for (size_t i = 0; i < params.size(); ++i) {
    update(params[i].weight, state.m[i].weight, state.v[i].weight,
           grads.params[i].weight);
    update(params[i].bias, state.m[i].bias, state.v[i].bias,
           grads.params[i].bias);
  }
}

MomentTensor batch_from_dataset(const Dataset& ds,
                                std::span<const size_t> indices,
                                double input_noise_var) {
  std::vector<size_t> shape{indices.size()};
  shape.insert(shape.end(), ds.sample_shape.begin(), ds.sample_shape.end());
  MomentTensor batch(shape);
  const size_t sz = ds.sample_size();
  for (size_t b = 0; b < indices.size(); ++b) {
    std::copy_n(ds.sample(indices[b]), sz, batch.mean.data() + b * sz);
    if (input_noise_var > 0.0)
      std::fill_n(batch.var.data() + b * sz, sz, input_noise_var);
  }
  return batch;
}

namespace {

struct EvalResult {
  double loss = 0.0;
  double acc = 0.0;
};

EvalResult evaluate(const NetworkConfig& cfg, const NetworkParams& params,
                    const Dataset& ds, PropMode mode, double input_noise_var,
                    uint64_t seed) {
  // validation of a sample-trained model follows standard practice: the
  // deterministic mean forward
  const PropMode eval_mode = mode == PropMode::sample ? PropMode::ap1 : mode;
  EvalResult res;
  const size_t chunk = 256;
  std::vector<size_t> idx;
  size_t correct = 0;
  double loss_sum = 0.0;
  NoiseStream noise(seed, 0xe7a1);
  for (size_t start = 0; start < ds.n; start += chunk) {
    const size_t count = std::min(chunk, ds.n - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    const MomentTensor batch = batch_from_dataset(ds, idx, input_noise_var);
    ForwardOptions opts;
    opts.mode = eval_mode;
    opts.dropout_active = false;
    opts.noise = &noise;
    const ForwardTrace trace = network_forward(cfg, params, batch, opts);
    for (size_t b = 0; b < count; ++b) {
      const auto& lp = trace.posterior[b].log_probs;
      const size_t pred = static_cast<size_t>(
          std::max_element(lp.begin(), lp.end()) - lp.begin());
      if (pred == static_cast<size_t>(ds.labels[start + b])) ++correct;
      loss_sum += nll_loss(trace.posterior[b],
                           static_cast<size_t>(ds.labels[start + b]));
    }
  }
  res.loss = loss_sum / static_cast<double>(ds.n);
  res.acc = static_cast<double>(correct) / static_cast<double>(ds.n);
  return res;
}

}  // namespace

double evaluate_accuracy(const NetworkConfig& cfg, const NetworkParams& params,
                         const Dataset& ds, PropMode mode,
                         double input_noise_var) {
  return evaluate(cfg, params, ds, mode, input_noise_var, 0).acc;
}

double evaluate_loss(const NetworkConfig& cfg, const NetworkParams& params,
                     const Dataset& ds, PropMode mode,
                     double input_noise_var) {
  return evaluate(cfg, params, ds, mode, input_noise_var, 0).loss;
}

std::vector<EpochLog> train(const NetworkConfig& cfg, NetworkParams& params,
                            const Dataset& train_set, const Dataset& val_set,
                            const TrainHyperparams& hp,
                            std::ostream* csv_out) {
  if (train_set.n == 0) throw std::invalid_argument("train: empty dataset");
  OptimizerState opt = make_optimizer(cfg, hp.optimizer);
  std::vector<size_t> order(train_set.n);
  std::iota(order.begin(), order.end(), size_t{0});
  NoiseStream shuffle_rng(hp.seed, 0x50f1);
  std::vector<EpochLog> logs;
  if (csv_out) (*csv_out) << "epoch,lr,train_loss,val_loss,val_acc\n";

  for (size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    const double lr =
        hp.lr0 * std::pow(hp.lr_decay, static_cast<double>(epoch));
    for (size_t i = train_set.n; i > 1; --i) {
      const size_t j = static_cast<size_t>(shuffle_rng.uniform() * i);
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    double train_loss = 0.0;
    size_t n_batches = 0;
    NoiseStream noise(hp.seed, mix_seed(0x7a11, epoch));
    for (size_t start = 0; start < train_set.n;
         start += hp.batch_size, ++n_batches) {
      const size_t count = std::min(hp.batch_size, train_set.n - start);
      std::span<const size_t> idx(order.data() + start, count);
      const MomentTensor batch =
          batch_from_dataset(train_set, idx, hp.input_noise_var);
      std::vector<int> labels(count);
      for (size_t b = 0; b < count; ++b)
        labels[b] = train_set.labels[idx[b]];

      ForwardOptions opts;
      opts.mode = hp.mode;
      opts.dropout_active = true;
      opts.noise = &noise;
      const ForwardTrace trace = network_forward(cfg, params, batch, opts);
      const double loss = batch_nll(trace, labels);
      if (!std::isfinite(loss))
        throw NumericalError("train: non-finite loss at epoch " +
                             std::to_string(epoch));
      train_loss += loss;
      const GradientBundle grads =
          backward(cfg, params, trace, labels, hp.mode, true);
      if (lr != 0.0) optimizer_step(opt, params, grads, lr, hp);
    }
    const EvalResult val =
        evaluate(cfg, params, val_set, hp.mode, 0.0, hp.seed);
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_loss = train_loss / static_cast<double>(n_batches);
    log.val_loss = val.loss;
    log.val_acc = val.acc;
    logs.push_back(log);
    if (csv_out) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g,%.6g\n", log.epoch,
                    log.lr, log.train_loss, log.val_loss, log.val_acc);
      (*csv_out) << buf;
    }
  }
  return logs;
}

}  // namespace momentflow
