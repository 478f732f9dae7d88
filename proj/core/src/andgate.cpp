#include "momentflow/andgate.hpp"

#include <cmath>
#include <stdexcept>

#include "momentflow/kernels.hpp"
#include "momentflow/moments.hpp"

namespace momentflow {

AndGateParams derive_and_gate_params(double epsilon) {
  if (epsilon <= 0.0 || epsilon >= 0.5)
    throw std::invalid_argument(
        "derive_and_gate_params: epsilon must be in (0, 0.5)");
  const double L = std::log((1.0 - epsilon) / epsilon);
  return {2.0 * L, -3.0 * L};
}

AndGateRow and_gate_row(double p1, double p2, AndGateParams params) {
  AndGateRow row;
  row.p1 = p1;
  row.p2 = p2;
  row.exact_and = p1 * p2;

  // enumeration over the four binary input configurations
  double exact = 0.0;
  for (int x1 = 0; x1 <= 1; ++x1) {
    for (int x2 = 0; x2 <= 1; ++x2) {
      const double w = (x1 ? p1 : 1.0 - p1) * (x2 ? p2 : 1.0 - p2);
      exact += w * logistic_sigmoid(params.a * (x1 + x2) + params.b);
    }
  }
  row.exact_gate = exact;

  const double mu = params.a * (p1 + p2) + params.b;
  const double var =
      params.a * params.a * (p1 * (1.0 - p1) + p2 * (1.0 - p2));
  row.ap1 = logistic_sigmoid(mu);
  row.ap2b = logistic_bernoulli_mean({mu, var}, SigmoidMeanApprox::ap2b).mean;
  return row;
}

std::vector<AndGateRow> and_gate_table(double epsilon) {
  const AndGateParams params = derive_and_gate_params(epsilon);
  std::vector<AndGateRow> rows;
  rows.reserve(kAndGateInputs.size());
  for (const auto& in : kAndGateInputs)
    rows.push_back(and_gate_row(in[0], in[1], params));
  return rows;
}

}  // namespace momentflow
