#include "momentflow/softmax_moments.hpp"

#include <cmath>
#include <stdexcept>

#include "momentflow/kernels.hpp"

namespace momentflow {

double ClassPosterior::prob(size_t k) const { return std::exp(log_probs[k]); }

ClassPosterior make_posterior(std::span<const double> log_scores) {
  const double lse = logsumexp(log_scores);
  ClassPosterior p;
  p.log_probs.reserve(log_scores.size());
  for (double s : log_scores) p.log_probs.push_back(s - lse);
  return p;
}

ClassPosterior make_posterior_from_probs(std::span<const double> probs) {
  std::vector<double> logs;
  logs.reserve(probs.size());
  for (double q : probs) logs.push_back(std::log(q));
  return make_posterior(logs);
}

std::vector<double> softmax_log_scores(std::span<const ScalarMoments> ins,
                                       SoftmaxApprox approx) {
  const size_t n = ins.size();
  if (n < 2)
    throw std::invalid_argument("softmax: need at least 2 classes");
  std::vector<double> scores(n);
  switch (approx) {
    case SoftmaxApprox::standard: {
      for (size_t k = 0; k < n; ++k) scores[k] = ins[k].mean;
      const double lse = logsumexp(scores);
      for (double& s : scores) s -= lse;
      return scores;
    }
    case SoftmaxApprox::simplified: {
      for (size_t k = 0; k < n; ++k)
        scores[k] =
            ins[k].mean / std::sqrt(ins[k].var / kLogisticVariance + 1.0);
      const double lse = logsumexp(scores);
      for (double& s : scores) s -= lse;
      return scores;
    }
    case SoftmaxApprox::logistic: {
      std::vector<double> gaps(n);
      for (size_t y = 0; y < n; ++y) {
        for (size_t k = 0; k < n; ++k) {
          // the k == y gap is identically zero, supplying the leading 1
          gaps[k] = k == y
                        ? 0.0
                        : (ins[k].mean - ins[y].mean) /
                              std::sqrt((ins[k].var + ins[y].var) /
                                            kLogisticVariance +
                                        1.0);
        }
        scores[y] = -logsumexp(gaps);
      }
      return scores;
    }
    case SoftmaxApprox::normal: {
      for (size_t y = 0; y < n; ++y) {
        double acc = 0.0;
        for (size_t k = 0; k < n; ++k) {
          if (k == y) continue;
          acc += log_std_normal_cdf(
              (ins[y].mean - ins[k].mean) /
              std::sqrt(ins[y].var + ins[k].var + kLogisticVariance));
        }
        scores[y] = acc;
      }
      return scores;
    }
  }
  return scores;
}

ClassPosterior softmax_posterior(std::span<const ScalarMoments> ins,
                                 SoftmaxApprox approx) {
  return make_posterior(softmax_log_scores(ins, approx));
}

}  // namespace momentflow
