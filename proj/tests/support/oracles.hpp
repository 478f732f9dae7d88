#pragma once

// Test-only reference computations. Everything here is independent of the
// library's analytic propagation paths: plain quadrature, brute-force
// enumeration, direct sampling and finite differences.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "momentflow/moments.hpp"
#include "momentflow/rng.hpp"

namespace oracles {

// E[f(X)] under N(mu, sigma^2) by composite Simpson over mu +- 10 sigma.
inline double gauss_expect(const std::function<double(double)>& f, double mu,
                           double sigma, int points = 10001) {
  if (sigma <= 0.0) return f(mu);
  const double lo = mu - 10.0 * sigma, hi = mu + 10.0 * sigma;
  const int n = points % 2 == 0 ? points + 1 : points;  // odd for Simpson
  const double h = (hi - lo) / (n - 1);
  const double inv = 1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi));
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == n - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    const double z = (x - mu) / sigma;
    acc += w * f(x) * inv * std::exp(-0.5 * z * z);
  }
  return acc * h / 3.0;
}

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;
};

inline MeanVar gauss_moments_of(const std::function<double(double)>& f,
                                double mu, double sigma, int points = 10001) {
  const double m = gauss_expect(f, mu, sigma, points);
  const double m2 =
      gauss_expect([&](double x) { return f(x) * f(x); }, mu, sigma, points);
  return {m, m2 - m * m};
}

// E[f(X)] under a logistic distribution with mean mu and scale s.
inline double logistic_expect(const std::function<double(double)>& f,
                              double mu, double s, int points = 20001) {
  const double lo = mu - 40.0 * s, hi = mu + 40.0 * s;
  const int n = points % 2 == 0 ? points + 1 : points;
  const double h = (hi - lo) / (n - 1);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == n - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    const double z = (x - mu) / s;
    const double sig = momentflow::logistic_sigmoid(z);
    acc += w * f(x) * sig * (1.0 - sig) / s;
  }
  return acc * h / 3.0;
}

// Direct sampling of Y = f(X), X ~ N(mu, sigma^2); two-pass mean/variance.
struct SampleStats {
  double mean = 0.0;
  double var = 0.0;
  double se = 0.0;  // standard error of the mean
  size_t n = 0;
};

inline SampleStats sample_stats(const std::function<double(double)>& f,
                                double mu, double sigma, size_t n,
                                uint64_t seed) {
  momentflow::NoiseStream rng(seed);
  std::vector<double> ys(n);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ys[i] = f(mu + sigma * rng.normal());
    sum += ys[i];
  }
  SampleStats st;
  st.n = n;
  st.mean = sum / static_cast<double>(n);
  double m2 = 0.0;
  for (double y : ys) m2 += (y - st.mean) * (y - st.mean);
  st.var = m2 / static_cast<double>(n);
  st.se = std::sqrt(st.var / static_cast<double>(n));
  return st;
}

// Exact E[S(w.x + b)] over independent Bernoulli(p_i) inputs by enumeration.
inline double enumerate_sigmoid_expect(std::span<const double> weights,
                                       std::span<const double> probs,
                                       double bias) {
  const size_t n = weights.size();
  double acc = 0.0;
  for (size_t mask = 0; mask < (size_t{1} << n); ++mask) {
    double w = 1.0, act = bias;
    for (size_t i = 0; i < n; ++i) {
      if (mask & (size_t{1} << i)) {
        w *= probs[i];
        act += weights[i];
      } else {
        w *= 1.0 - probs[i];
      }
    }
    acc += w * momentflow::logistic_sigmoid(act);
  }
  return acc;
}

// KL between Bernoulli(p) and Bernoulli(q), nats.
inline double bernoulli_kl(double p, double q) {
  double kl = 0.0;
  if (p > 0.0) kl += p * std::log(p / q);
  if (p < 1.0) kl += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  return kl;
}

// KL(p || N(mu, sigma^2)) for a density p tabulated on a uniform grid.
inline double grid_kl_to_gaussian(std::span<const double> xs,
                                  std::span<const double> density, double mu,
                                  double sigma) {
  const double h = xs[1] - xs[0];
  double kl = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (density[i] <= 0.0) continue;
    const double z = (xs[i] - mu) / sigma;
    const double logq = -0.5 * z * z - std::log(sigma) -
                        0.5 * std::log(2.0 * std::numbers::pi);
    kl += h * density[i] * (std::log(density[i]) - logq);
  }
  return kl;
}

// Central finite difference of a scalar function.
inline double central_diff(const std::function<double(double)>& f, double x,
                           double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double got, double want) {
  const double scale = std::max(std::abs(want), 1e-12);
  return std::abs(got - want) / scale;
}

// One-pass perceptron convergence check for 2-class data; returns true if a
// separating hyperplane is found within max_epochs.
inline bool perceptron_separable(std::span<const double> xs, size_t dim,
                                 std::span<const int> labels,
                                 size_t max_epochs = 200) {
  const size_t n = labels.size();
  std::vector<double> w(dim + 1, 0.0);
  for (size_t epoch = 0; epoch < max_epochs; ++epoch) {
    size_t errors = 0;
    for (size_t i = 0; i < n; ++i) {
      double act = w[dim];
      for (size_t d = 0; d < dim; ++d) act += w[d] * xs[i * dim + d];
      const int y = labels[i] == 1 ? 1 : -1;
      if (y * act <= 0.0) {
        ++errors;
        for (size_t d = 0; d < dim; ++d) w[d] += y * xs[i * dim + d];
        w[dim] += y;
      }
    }
    if (errors == 0) return true;
  }
  return false;
}

}  // namespace oracles
