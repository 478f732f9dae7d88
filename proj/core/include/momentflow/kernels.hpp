#pragma once

#include <numbers>
#include <span>

namespace momentflow {

/// Variance of the standard logistic distribution (pi^2/3). Scale constant of
/// every logistic-assumption moment formula.
inline constexpr double kLogisticVariance =
    std::numbers::pi * std::numbers::pi / 3.0;

/// Slope constant of the logistic curve fitted to the ReLU variance ratio.
inline constexpr double kReluVarSlope = 0.3729;

/// pdf of the standard normal distribution.
double std_normal_pdf(double x);

/// cdf of the standard normal distribution, erfc-based. Accurate in both
/// tails; accepts +-inf.
double std_normal_cdf(double x);

/// log of std_normal_cdf. Switches to the asymptotic tail expansion where
/// erfc underflows (x < -37).
double log_std_normal_cdf(double x);

/// Fast cdf substitute: logistic sigmoid with variance matched to the
/// standard normal, S(x*pi/sqrt(3)). Max absolute deviation from the true
/// cdf is about 0.017.
double std_normal_cdf_fast(double x);

/// Logistic sigmoid 1/(1+exp(-x)), overflow-safe for any finite x.
double logistic_sigmoid(double x);

/// Derivative of the logistic sigmoid, S(x)(1-S(x)).
double logistic_sigmoid_deriv(double x);

/// log(1+exp(x)) without overflow for large |x|.
double softplus(double x);

/// Dilogarithm Li2(x) for x <= 0. Series on the Landen-transformed argument
/// for x in [-1,0], inversion identity below -1. Rejects positive arguments.
double dilog(double x);

/// Li2(-exp(r)) for any real r. Equals dilog(-exp(r)) but does not overflow
/// for large r; used by the logistic ReLU variance.
double dilog_neg_exp(double r);

/// log sum_i exp(x_i), computed with a max shift. Throws on an empty input.
double logsumexp(std::span<const double> xs);

enum class VarApprox { exact, fitted };

/// Dimensionless ReLU output-variance ratio R(a). The exact form
/// a*pdf(a) + (a^2+1)*cdf(a) - (a*cdf(a)+pdf(a))^2 is clamped at zero from
/// below: the terms may not cancel exactly and can leave a tiny negative
/// residue. The fitted form is S(a / 0.3729).
double relu_var_ratio(double a, VarApprox kind);

/// Derivative of the exact R(a): 2*(a*cdf(a)+pdf(a))*cdf(-a).
double relu_var_ratio_deriv(double a);

}  // namespace momentflow
