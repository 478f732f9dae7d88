#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace momentflow {

/// splitmix64 finalizer; decorrelates (seed, stream) pairs.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic noise source. Each (seed, stream) pair yields an
/// independent, reproducible sequence, so concurrent consumers can derive
/// their own streams without sharing state.
class NoiseStream {
 public:
  explicit NoiseStream(uint64_t seed, uint64_t stream = 0)
      : engine_(mix_seed(seed, stream)) {}

  /// Uniform on (0, 1), endpoints excluded.
  double uniform() {
    const uint64_t bits = engine_() >> 11;  // 53 random bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double logistic() {
    const double u = uniform();
    return std::log(u / (1.0 - u));
  }

  double gumbel() { return -std::log(-std::log(uniform())); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace momentflow
