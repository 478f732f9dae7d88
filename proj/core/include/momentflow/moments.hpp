#pragma once

#include <span>

#include "momentflow/kernels.hpp"

namespace momentflow {

/// A (mean, variance) pair for one unit. var must be >= 0.
struct ScalarMoments {
  double mean = 0.0;
  double var = 0.0;
};

/// Moments of a Bernoulli unit with success probability p.
inline ScalarMoments bernoulli_moments(double p) {
  return {p, p * (1.0 - p)};
}

/// Which density shape the input moments are matched to when integrating a
/// nonlinearity in closed form.
enum class InputAssumption { normal, logistic };

/// Mean approximation for a logistic Bernoulli unit (and for the logistic
/// transform, whose mean coincides with it).
///   ap1  - substitute the mean under the sigmoid, ignoring the variance
///   ap2a - normal assumption on the input-minus-noise difference
///   ap2b - logistic assumption on the same difference
///   pea  - piecewise exponential (Laplace cdf) baseline
enum class SigmoidMeanApprox { ap1, ap2a, ap2b, pea };

/// Variance approximation for the logistic transform.
enum class SigmoidVarApprox { heuristic, large_sigma };

ScalarMoments heaviside_moments(ScalarMoments in, InputAssumption assume);

/// Moments of max(0, X). Normal assumption admits an exact mean and the R(a)
/// variance (exact by default, fitted opt-in). Logistic assumption uses the
/// softplus mean and the dilogarithm variance.
ScalarMoments relu_moments(ScalarMoments in, InputAssumption assume,
                           VarApprox var_kind = VarApprox::exact);

/// Moments of max(X, alpha*X) for 0 <= alpha < 1 under a normal assumption.
ScalarMoments lrelu_moments(ScalarMoments in, double alpha,
                            VarApprox var_kind = VarApprox::exact);

/// Activation probability of a Bernoulli unit driven by a logistic sigmoid.
ScalarMoments logistic_bernoulli_mean(ScalarMoments in, SigmoidMeanApprox approx);

/// Moments of the deterministic transform Y = S(X). Mean follows the ap2b
/// sigmoid mean; the variance is approximate (see SigmoidVarApprox).
ScalarMoments logistic_transform_moments(
    ScalarMoments in, SigmoidVarApprox var_kind = SigmoidVarApprox::heuristic);

/// Activation probability of a probit Bernoulli unit. Exact under Gaussian
/// input.
ScalarMoments probit_mean(ScalarMoments in);

/// Moments of Y = normal_cdf(X). The mean is exact under Gaussian input; the
/// variance reuses the logistic-transform heuristic after a slope-matching
/// rescale of the input and is approximate, unvalidated against any
/// reference.
ScalarMoments normal_cdf_transform_moments(ScalarMoments in);

/// Moments of max(X1, X2) for independent Gaussian inputs.
ScalarMoments max2_moments(ScalarMoments a, ScalarMoments b,
                           VarApprox var_kind = VarApprox::exact);

/// Moments of the maximum over a window, composed as a left-balanced
/// pairwise max2 reduction under conditional independence.
ScalarMoments maxpool_moments(std::span<const ScalarMoments> window,
                              VarApprox var_kind = VarApprox::exact);

/// Exact moments of the product of two independent variables.
ScalarMoments product_moments(ScalarMoments a, ScalarMoments b);

/// Moments of |X| under a Gaussian assumption; the second moment is
/// preserved exactly.
ScalarMoments abs_moments(ScalarMoments in);

/// Multiplicative Bernoulli-mask moments. With rescale the output is divided
/// by the keep probability (mean) and its square (variance) so the mean stays
/// unbiased.
ScalarMoments bernoulli_dropout_moments(ScalarMoments in, double drop_prob,
                                        bool rescale);

namespace detail {
/// Moments of max(X1, X2) for jointly Gaussian inputs with covariance cov.
/// Internal: only the full-correlation (leaky ReLU) and independent cases are
/// exposed through the public surface.
ScalarMoments max2_correlated_moments(ScalarMoments a, ScalarMoments b,
                                      double cov);
}  // namespace detail

}  // namespace momentflow
