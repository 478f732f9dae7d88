#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "momentflow/moments.hpp"

namespace momentflow {

/// Immutable sample collection. values holds n samples of sample_shape
/// ({channels, h, w} or {features}), scaled to [0, 1].
struct Dataset {
  std::vector<size_t> sample_shape;
  size_t n = 0;
  std::vector<double> values;
  std::vector<int> labels;
  size_t n_classes = 0;

  size_t sample_size() const {
    size_t s = 1;
    for (size_t e : sample_shape) s *= e;
    return s;
  }
  const double* sample(size_t i) const {
    return values.data() + i * sample_size();
  }
};

struct IdxError : std::runtime_error {
  enum class Kind { io, bad_magic, truncated, count_mismatch };
  Kind kind;
  IdxError(Kind k, const std::string& msg)
      : std::runtime_error(msg), kind(k) {}
};

/// Load an MNIST-style IDX image/label file pair. Big-endian headers, image
/// magic 2051 (u8 tensor count x rows x cols), label magic 2049; pixel bytes
/// are scaled by 1/255. The two count fields must agree.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

/// Write a dataset back out as an IDX pair (values are quantized to bytes).
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

/// Gaussian blobs with unit in-class variance around class centers at
/// pairwise distance >= separation, then min-max rescaled into [0, 1].
/// Deterministic per seed.
Dataset make_synthetic_blobs(size_t n_classes, size_t n_per_class, size_t dim,
                             double separation, uint64_t seed);

/// Split off the last fraction of a seeded shuffle as the validation set.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds,
                                            double val_fraction,
                                            uint64_t seed);

/// First count samples (count clamped to ds.n).
Dataset dataset_head(const Dataset& ds, size_t count);

/// Population (1/N) per-channel mean and variance over samples and spatial
/// positions. Flat sample shapes pool everything into a single entry.
std::vector<ScalarMoments> dataset_channel_stats(const Dataset& ds);

}  // namespace momentflow
