#pragma once

#include <array>
#include <vector>

namespace momentflow {

/// Parameters of the two-input soft AND gate S(a*(x1+x2) + b) tuned so that
/// the gate outputs at least 1-eps on input (1,1) and at most eps on (1,0).
struct AndGateParams {
  double a = 0.0;
  double b = 0.0;
};

/// a = 2*log((1-eps)/eps), b = -3*log((1-eps)/eps). Requires 0 < eps < 0.5.
AndGateParams derive_and_gate_params(double epsilon);

/// One evaluation of the gate under independent Bernoulli inputs.
struct AndGateRow {
  double p1 = 0.0;          // Pr(X1 = 1)
  double p2 = 0.0;          // Pr(X2 = 1)
  double exact_and = 0.0;   // E[X1 and X2] = p1*p2
  double exact_gate = 0.0;  // E[Y] by enumeration over the 4 input configs
  double ap1 = 0.0;         // S at the mean activation
  double ap2b = 0.0;        // logistic moment-matched approximation
};

/// Evaluate one input pair.
AndGateRow and_gate_row(double p1, double p2, AndGateParams params);

/// The six canonical input rows (0,0), (0,1), (1,1), (.25,.25), (.5,.5),
/// (.75,.75).
std::vector<AndGateRow> and_gate_table(double epsilon);

inline constexpr std::array<std::array<double, 2>, 6> kAndGateInputs = {{
    {0.0, 0.0},
    {0.0, 1.0},
    {1.0, 1.0},
    {0.25, 0.25},
    {0.5, 0.5},
    {0.75, 0.75},
}};

}  // namespace momentflow
