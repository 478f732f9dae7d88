#pragma once

#include <span>

#include "momentflow/network.hpp"

namespace momentflow {

/// Derivatives of one per-unit moment map: d(out mean, out var) over
/// d(in mean, in var). All adjoints are hand-derived from the closed forms
/// and unit-tested against central finite differences. At var exactly 0 the
/// entries take the deterministic-limit branch: the mean row carries the
/// pointwise slope of the underlying function and d(var')/d(var) its
/// right-limit, while the mixed entries are set to 0.
struct MomentJacobian {
  double m_m = 0.0;  // d mean' / d mean
  double m_v = 0.0;  // d mean' / d var
  double v_m = 0.0;  // d var'  / d mean
  double v_v = 0.0;  // d var'  / d var
};

MomentJacobian activation_jacobian(const ActivationSpec& act, ScalarMoments in);

MomentJacobian dropout_jacobian(ScalarMoments in, double drop_prob,
                                bool rescale);

MomentJacobian product_jacobian_wrt_first(ScalarMoments a, ScalarMoments b);

/// Derivatives of max2_moments over both inputs.
struct Max2Jacobian {
  MomentJacobian a;  // over (mean_a, var_a)
  MomentJacobian b;  // over (mean_b, var_b)
};

Max2Jacobian max2_jacobian(ScalarMoments a, ScalarMoments b,
                           VarApprox var_kind);

/// Per-parameter gradients mirroring NetworkParams, plus the gradient of the
/// loss in the input moments.
struct GradientBundle {
  NetworkParams params;
  MomentTensor input;
};

/// Negative log-likelihood of one label under a normalized posterior.
double nll_loss(const ClassPosterior& posterior, size_t label);

/// Mean NLL over the batch rows of a recorded forward.
double batch_nll(const ForwardTrace& trace, std::span<const int> labels);

/// Reverse sweep through a recorded forward pass; the loss is the batch-mean
/// NLL at the softmax head. Modes ap1 and ap2 differentiate the moment maps;
/// sample mode differentiates the realized pathwise functions (sampled
/// dropout masks are replayed from the trace, sampled hard threshold units
/// contribute zero gradient).
GradientBundle backward(const NetworkConfig& cfg, const NetworkParams& params,
                        const ForwardTrace& trace, std::span<const int> labels,
                        PropMode mode, bool dropout_active = true);

}  // namespace momentflow
