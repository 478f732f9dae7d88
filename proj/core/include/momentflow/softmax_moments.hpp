#pragma once

#include <span>
#include <vector>

#include "momentflow/moments.hpp"

namespace momentflow {

/// A normalized discrete class posterior held as natural-log probabilities.
struct ClassPosterior {
  std::vector<double> log_probs;

  size_t size() const { return log_probs.size(); }
  double prob(size_t k) const;
};

/// Build a posterior from unnormalized log scores (subtracts the logsumexp).
ClassPosterior make_posterior(std::span<const double> log_scores);

/// Build a posterior from unnormalized probabilities.
ClassPosterior make_posterior_from_probs(std::span<const double> probs);

/// Softmax posterior approximations over per-class input moments.
///   standard   - plain softmax of the means, variances ignored
///   normal     - product of normal cdfs of pairwise gaps, renormalized
///   logistic   - multivariate-logistic gap model, renormalized
///   simplified - softmax of means shrunk by their own variance
enum class SoftmaxApprox { standard, normal, logistic, simplified };

/// Unnormalized log q(y) per class for the given approximation. For the
/// standard and simplified variants the scores are already normalized.
std::vector<double> softmax_log_scores(std::span<const ScalarMoments> ins,
                                       SoftmaxApprox approx);

/// Normalized posterior; requires at least 2 classes.
ClassPosterior softmax_posterior(std::span<const ScalarMoments> ins,
                                 SoftmaxApprox approx);

}  // namespace momentflow
