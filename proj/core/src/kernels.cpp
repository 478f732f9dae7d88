#include "momentflow/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace momentflow {

namespace {
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kPi2Over6 = std::numbers::pi * std::numbers::pi / 6.0;
// sqrt(pi^2/3): slope of the variance-matched logistic substitute.
constexpr double kLogisticScale = 1.8137993642342178506;

// Li2(u) by direct power series; requires |u| <= 1/2 for fast convergence.
double dilog_series(double u) {
  double term = u;
  double sum = u;
  for (int k = 2; k < 60; ++k) {
    term *= u;
    const double add = term / static_cast<double>(k * k);
    sum += add;
    if (std::abs(add) < 1e-17 * std::abs(sum)) break;
  }
  return sum;
}
}  // namespace

double std_normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double log_std_normal_cdf(double x) {
  if (x > -37.0) return std::log(0.5 * std::erfc(-x * kInvSqrt2));
  // erfc underflows; asymptotic cdf(x) ~ pdf(x)/|x| * (1 - 1/x^2 + 3/x^4)
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) + std::log(kInvSqrt2Pi) +
         std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

double std_normal_cdf_fast(double x) {
  return logistic_sigmoid(x * kLogisticScale);
}

double logistic_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logistic_sigmoid_deriv(double x) {
  const double s = logistic_sigmoid(x);
  return s * (1.0 - s);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double dilog(double x) {
  if (x > 0.0) throw std::invalid_argument("dilog: argument must be <= 0");
  if (x == 0.0) return 0.0;
  if (x < -1.0) {
    // inversion: Li2(x) = -pi^2/6 - ln^2(-x)/2 - Li2(1/x)
    const double l = std::log(-x);
    return -kPi2Over6 - 0.5 * l * l - dilog(1.0 / x);
  }
  if (x >= -0.39) return dilog_series(x);
  // Landen: Li2(x) = -ln^2(1-x)/2 - Li2(x/(x-1)), maps [-1,-0.39] to (0,1/2]
  const double l = std::log1p(-x);
  return -0.5 * l * l - dilog_series(x / (x - 1.0));
}

double dilog_neg_exp(double r) {
  if (r <= 0.0) return dilog(-std::exp(r));
  // Li2(-e^r) = -pi^2/6 - r^2/2 - Li2(-e^{-r})
  return -kPi2Over6 - 0.5 * r * r - dilog(-std::exp(-r));
}

double logsumexp(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("logsumexp: empty input");
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;  // all -inf, or a +inf dominates
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - m);
  return m + std::log(sum);
}

double relu_var_ratio(double a, VarApprox kind) {
  if (kind == VarApprox::fitted) return logistic_sigmoid(a / kReluVarSlope);
  const double pdf = std_normal_pdf(a);
  const double cdf = std_normal_cdf(a);
  const double g = a * cdf + pdf;
  return std::max(0.0, a * pdf + (a * a + 1.0) * cdf - g * g);
}

double relu_var_ratio_deriv(double a) {
  const double g = a * std_normal_cdf(a) + std_normal_pdf(a);
  return 2.0 * g * std_normal_cdf(-a);
}

}  // namespace momentflow
