#pragma once

#include <cstddef>
#include <vector>

namespace momentflow {

/// Shaped arrays of per-unit means and variances. The leading extent is the
/// batch dimension.
struct MomentTensor {
  std::vector<size_t> shape;
  std::vector<double> mean;
  std::vector<double> var;

  MomentTensor() = default;
  explicit MomentTensor(std::vector<size_t> s) : shape(std::move(s)) {
    size_t n = 1;
    for (size_t e : shape) n *= e;
    mean.assign(n, 0.0);
    var.assign(n, 0.0);
  }

  size_t size() const { return mean.size(); }

  void zero_vars() { var.assign(var.size(), 0.0); }
};

inline size_t shape_volume(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return n;
}

}  // namespace momentflow
