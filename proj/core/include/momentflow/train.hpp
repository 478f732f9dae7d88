#pragma once

#include <iosfwd>
#include <optional>

#include "momentflow/backward.hpp"
#include "momentflow/data.hpp"

namespace momentflow {

enum class OptimizerKind { sgd, adam };

struct TrainHyperparams {
  PropMode mode = PropMode::ap2;
  size_t epochs = 10;
  size_t batch_size = 128;
  double lr0 = 1e-3;
  double lr_decay = 0.96;  // lr in epoch k is lr0 * decay^k
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double input_noise_var = 0.0;  // fed as input variance (sampled in sample mode)
  uint64_t seed = 0;
};

struct EpochLog {
  size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Adam/SGD state; accumulators mirror the parameter shapes.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  size_t step = 0;
  NetworkParams m, v;
};

OptimizerState make_optimizer(const NetworkConfig& cfg, OptimizerKind kind);
void optimizer_step(OptimizerState& state, NetworkParams& params,
                    const GradientBundle& grads, double lr,
                    const TrainHyperparams& hp);

/// Mini-batch training under the negative log-likelihood objective. Dropout
/// layers are active during update steps and bypassed for the validation
/// pass. In sample mode the validation pass uses standard (ap1) propagation.
/// Aborts with NumericalError if the loss turns non-finite. If csv_out is
/// given, per-epoch rows `epoch,lr,train_loss,val_loss,val_acc` are written.
std::vector<EpochLog> train(const NetworkConfig& cfg, NetworkParams& params,
                            const Dataset& train_set, const Dataset& val_set,
                            const TrainHyperparams& hp,
                            std::ostream* csv_out = nullptr);

/// Classification accuracy with dropout bypassed.
double evaluate_accuracy(const NetworkConfig& cfg, const NetworkParams& params,
                         const Dataset& ds, PropMode mode,
                         double input_noise_var = 0.0);

/// Mean NLL with dropout bypassed.
double evaluate_loss(const NetworkConfig& cfg, const NetworkParams& params,
                     const Dataset& ds, PropMode mode,
                     double input_noise_var = 0.0);

/// Batch of input moments from dataset rows [begin, end).
MomentTensor batch_from_dataset(const Dataset& ds,
                                std::span<const size_t> indices,
                                double input_noise_var);

}  // namespace momentflow
