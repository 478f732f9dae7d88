#include "momentflow/moments.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace momentflow {

namespace {

constexpr double kLn2 = 0.6931471805599453094;

double clamp01_var(double v) { return std::clamp(v, 0.0, 0.25); }

// E[L(X)] for the piecewise exponential sigmoid surrogate under N(mu, var).
// Terms are assembled in the log domain so 2^{+-mu} cannot overflow.
double pea_mean(double mu, double var) {
  if (var <= 0.0) {
    // limit of the formula itself: the Laplace cdf at mu
    return mu < 0.0 ? 0.5 * std::exp(mu * kLn2)
                    : 1.0 - 0.5 * std::exp(-mu * kLn2);
  }
  const double sigma = std::sqrt(var);
  const double c = 0.5 * kLn2 * kLn2 * var - kLn2;
  const double a_arg = (-mu - kLn2 * var) / sigma;
  const double b_arg = (mu - kLn2 * var) / sigma;
  const double t1 = std::exp(c + mu * kLn2 + log_std_normal_cdf(a_arg));
  const double t2 = std::exp(c - mu * kLn2 + log_std_normal_cdf(b_arg));
  return std::clamp(std_normal_cdf(mu / sigma) + t1 - t2, 0.0, 1.0);
}

double sigmoid_mean(ScalarMoments in, SigmoidMeanApprox approx) {
  switch (approx) {
    case SigmoidMeanApprox::ap1:
      return logistic_sigmoid(in.mean);
    case SigmoidMeanApprox::ap2a:
      return std_normal_cdf(in.mean / std::sqrt(in.var + kLogisticVariance));
    case SigmoidMeanApprox::ap2b:
      return logistic_sigmoid(in.mean /
                              std::sqrt(in.var / kLogisticVariance + 1.0));
    case SigmoidMeanApprox::pea:
      return pea_mean(in.mean, in.var);
  }
  return 0.0;
}

}  // namespace

ScalarMoments heaviside_moments(ScalarMoments in, InputAssumption assume) {
  double p;
  if (in.var <= 0.0) {
    p = in.mean > 0.0 ? 1.0 : (in.mean < 0.0 ? 0.0 : 0.5);
  } else {
    const double sigma = std::sqrt(in.var);
    p = assume == InputAssumption::normal
            ? std_normal_cdf(in.mean / sigma)
            : logistic_sigmoid(in.mean * std::sqrt(kLogisticVariance) / sigma);
  }
  return bernoulli_moments(p);
}

ScalarMoments relu_moments(ScalarMoments in, InputAssumption assume,
                           VarApprox var_kind) {
  if (in.var <= 0.0) return {std::max(0.0, in.mean), 0.0};
  if (assume == InputAssumption::normal) {
    const double sigma = std::sqrt(in.var);
    const double a = in.mean / sigma;
    const double mean =
        std::max(0.0, in.mean * std_normal_cdf(a) + sigma * std_normal_pdf(a));
    return {mean, in.var * relu_var_ratio(a, var_kind)};
  }
  // logistic input with matched variance: scale s = sigma/sigma_S
  const double s = std::sqrt(in.var / kLogisticVariance);
  const double r = in.mean / s;
  const double mean = s * softplus(r);
  const double var = -2.0 * s * s * dilog_neg_exp(r) - mean * mean;
  return {mean, std::max(0.0, var)};
}

ScalarMoments lrelu_moments(ScalarMoments in, double alpha,
                            VarApprox var_kind) {
  if (alpha < 0.0 || alpha >= 1.0)
    throw std::invalid_argument("lrelu_moments: alpha must be in [0, 1)");
  if (in.var <= 0.0)
    return {in.mean >= 0.0 ? in.mean : alpha * in.mean, 0.0};
  if (var_kind == VarApprox::exact) {
    // max(X, alpha X) is the fully-correlated two-input maximum
    const ScalarMoments scaled{alpha * in.mean, alpha * alpha * in.var};
    return detail::max2_correlated_moments(in, scaled, alpha * in.var);
  }
  const double sigma = std::sqrt(in.var);
  const double a = in.mean / sigma;
  const double mean = in.mean * (alpha + (1.0 - alpha) * std_normal_cdf(a)) +
                      sigma * (1.0 - alpha) * std_normal_pdf(a);
  const double var =
      in.var * (alpha * alpha + (1.0 - alpha * alpha) *
                                    logistic_sigmoid(a / kReluVarSlope));
  return {mean, var};
}

ScalarMoments logistic_bernoulli_mean(ScalarMoments in,
                                      SigmoidMeanApprox approx) {
  return bernoulli_moments(sigmoid_mean(in, approx));
}

ScalarMoments logistic_transform_moments(ScalarMoments in,
                                         SigmoidVarApprox var_kind) {
  const double p = sigmoid_mean(in, SigmoidMeanApprox::ap2b);
  if (in.var <= 0.0) return {p, 0.0};
  if (var_kind == SigmoidVarApprox::heuristic) {
    const double pq = p * (1.0 - p);
    return {p, clamp01_var(4.0 * in.var / (in.var + 4.0) * pq * pq)};
  }
  // large-sigma form: second moment through the cdf of S^2
  const double second = std_normal_cdf(
      (in.mean - 1.0) / std::sqrt(in.var + kLogisticVariance - 1.0));
  return {p, clamp01_var(second - p * p)};
}

ScalarMoments probit_mean(ScalarMoments in) {
  return bernoulli_moments(std_normal_cdf(in.mean / std::sqrt(in.var + 1.0)));
}

ScalarMoments normal_cdf_transform_moments(ScalarMoments in) {
  const double p = std_normal_cdf(in.mean / std::sqrt(in.var + 1.0));
  if (in.var <= 0.0) return {p, 0.0};
  // logistic heuristic after rescaling the input by sqrt(sigma_S^2)
  const double vr = in.var * kLogisticVariance;
  const double pq = p * (1.0 - p);
  return {p, clamp01_var(4.0 * vr / (vr + 4.0) * pq * pq)};
}

namespace detail {

ScalarMoments max2_correlated_moments(ScalarMoments a, ScalarMoments b,
                                      double cov) {
  const double s2 = a.var + b.var - 2.0 * cov;
  if (s2 <= 0.0) {
    // the difference is degenerate: one input dominates surely
    return a.mean >= b.mean ? a : b;
  }
  const double s = std::sqrt(s2);
  const double t = (a.mean - b.mean) / s;
  const double cdf = std_normal_cdf(t);
  const double pdf = std_normal_pdf(t);
  const double mean = std::max(b.mean + s * (t * cdf + pdf),
                               std::max(a.mean, b.mean));
  const double var = a.var * cdf + b.var * std_normal_cdf(-t) +
                     s2 * (relu_var_ratio(t, VarApprox::exact) - cdf);
  return {mean, std::max(0.0, var)};
}

}  // namespace detail

ScalarMoments max2_moments(ScalarMoments a, ScalarMoments b,
                           VarApprox var_kind) {
  if (var_kind == VarApprox::exact)
    return detail::max2_correlated_moments(a, b, 0.0);
  const double s2 = a.var + b.var;
  if (s2 <= 0.0) return {std::max(a.mean, b.mean), 0.0};
  const double s = std::sqrt(s2);
  const double t = (a.mean - b.mean) / s;
  const double mean =
      std::max(b.mean + s * (t * std_normal_cdf(t) + std_normal_pdf(t)),
               std::max(a.mean, b.mean));
  const double var = a.var * logistic_sigmoid(t / kReluVarSlope) +
                     b.var * logistic_sigmoid(-t / kReluVarSlope);
  return {mean, var};
}

ScalarMoments maxpool_moments(std::span<const ScalarMoments> window,
                              VarApprox var_kind) {
  if (window.empty())
    throw std::invalid_argument("maxpool_moments: empty window");
  std::vector<ScalarMoments> level(window.begin(), window.end());
  while (level.size() > 1) {
    std::vector<ScalarMoments> next;
    next.reserve((level.size() + 1) / 2);
    for (size_t i = 0; i + 1 < level.size(); i += 2)
      next.push_back(max2_moments(level[i], level[i + 1], var_kind));
    if (level.size() % 2 == 1) next.push_back(level.back());
    level = std::move(next);
  }
  return level.front();
}

ScalarMoments product_moments(ScalarMoments a, ScalarMoments b) {
  return {a.mean * b.mean, a.var * b.var + a.var * b.mean * b.mean +
                               a.mean * a.mean * b.var};
}

ScalarMoments abs_moments(ScalarMoments in) {
  if (in.var <= 0.0) return {std::abs(in.mean), 0.0};
  const double sigma = std::sqrt(in.var);
  const double a = in.mean / sigma;
  const double relu_mean =
      in.mean * std_normal_cdf(a) + sigma * std_normal_pdf(a);
  const double mean = 2.0 * relu_mean - in.mean;
  const double var = in.mean * in.mean + in.var - mean * mean;
  return {mean, std::max(0.0, var)};
}

ScalarMoments bernoulli_dropout_moments(ScalarMoments in, double drop_prob,
                                        bool rescale) {
  if (drop_prob < 0.0 || drop_prob >= 1.0)
    throw std::invalid_argument(
        "bernoulli_dropout_moments: drop_prob must be in [0, 1)");
  const double m = 1.0 - drop_prob;
  double mean = m * in.mean;
  double var = m * in.var + m * (1.0 - m) * in.mean * in.mean;
  if (rescale) {
    mean /= m;
    var /= m * m;
  }
  return {mean, var};
}

}  // namespace momentflow
