#include "momentflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "momentflow/rng.hpp"

namespace momentflow {

namespace {

constexpr uint32_t kImageMagic = 2051;
constexpr uint32_t kLabelMagic = 2049;

uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw IdxError(IdxError::Kind::truncated, "idx: truncated " + what);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img)
    throw IdxError(IdxError::Kind::io, "idx: cannot open " + images_path);
  if (read_be32(img, "image magic") != kImageMagic)
    throw IdxError(IdxError::Kind::bad_magic,
                   "idx: bad image magic in " + images_path);
  const uint32_t count = read_be32(img, "image count");
  const uint32_t rows = read_be32(img, "rows");
  const uint32_t cols = read_be32(img, "cols");

  std::vector<unsigned char> pixels(size_t(count) * rows * cols);
  img.read(reinterpret_cast<char*>(pixels.data()),
           static_cast<std::streamsize>(pixels.size()));
  if (!img)
    throw IdxError(IdxError::Kind::truncated,
                   "idx: image payload shorter than declared");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab)
    throw IdxError(IdxError::Kind::io, "idx: cannot open " + labels_path);
  if (read_be32(lab, "label magic") != kLabelMagic)
    throw IdxError(IdxError::Kind::bad_magic,
                   "idx: bad label magic in " + labels_path);
  const uint32_t label_count = read_be32(lab, "label count");
  if (label_count != count)
    throw IdxError(IdxError::Kind::count_mismatch,
                   "idx: image/label count mismatch");
  std::vector<unsigned char> raw_labels(count);
  lab.read(reinterpret_cast<char*>(raw_labels.data()), count);
  if (!lab)
    throw IdxError(IdxError::Kind::truncated,
                   "idx: label payload shorter than declared");

  Dataset ds;
  ds.sample_shape = {1, rows, cols};
  ds.n = count;
  ds.values.resize(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i)
    ds.values[i] = pixels[i] / 255.0;
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  ds.n_classes =
      ds.labels.empty()
          ? 0
          : static_cast<size_t>(
                *std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  if (ds.sample_shape.size() != 3)
    throw IdxError(IdxError::Kind::io, "idx: can only save CxHxW datasets");
  std::ofstream img(images_path, std::ios::binary);
  if (!img)
    throw IdxError(IdxError::Kind::io, "idx: cannot open " + images_path);
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<uint32_t>(ds.n));
  write_be32(img, static_cast<uint32_t>(ds.sample_shape[1]));
  write_be32(img, static_cast<uint32_t>(ds.sample_shape[2]));
  for (double v : ds.values) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    img.put(static_cast<char>(std::lround(clamped * 255.0)));
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab)
    throw IdxError(IdxError::Kind::io, "idx: cannot open " + labels_path);
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<uint32_t>(ds.n));
  for (int l : ds.labels) lab.put(static_cast<char>(l));
}

Dataset make_synthetic_blobs(size_t n_classes, size_t n_per_class, size_t dim,
                             double separation, uint64_t seed) {
  if (separation <= 0.0)
    throw std::invalid_argument("make_synthetic_blobs: separation must be > 0");
  if (n_per_class == 0)
    throw std::invalid_argument("make_synthetic_blobs: empty class split");

  // deterministic centers: class k at separation*(1 + k/dim) along axis k%dim
  std::vector<std::vector<double>> centers(n_classes,
                                           std::vector<double>(dim, 0.0));
  for (size_t k = 0; k < n_classes; ++k)
    centers[k][k % dim] =
        separation * (1.0 + static_cast<double>(k / dim));

  Dataset ds;
  ds.sample_shape = {dim};
  ds.n = n_classes * n_per_class;
  ds.n_classes = n_classes;
  ds.values.resize(ds.n * dim);
  ds.labels.resize(ds.n);

  NoiseStream rng(seed, 0xb10b);
  size_t row = 0;
  for (size_t k = 0; k < n_classes; ++k) {
    for (size_t i = 0; i < n_per_class; ++i, ++row) {
      ds.labels[row] = static_cast<int>(k);
      for (size_t d = 0; d < dim; ++d)
        ds.values[row * dim + d] = centers[k][d] + rng.normal();
    }
  }

  // rescale all features into [0,1]; affine, so separability is preserved
  const auto [lo_it, hi_it] =
      std::minmax_element(ds.values.begin(), ds.values.end());
  const double lo = *lo_it, hi = *hi_it;
  const double scale = hi > lo ? 1.0 / (hi - lo) : 1.0;
  for (double& v : ds.values) v = (v - lo) * scale;
  return ds;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds,
                                            double val_fraction,
                                            uint64_t seed) {
  std::vector<size_t> order(ds.n);
  std::iota(order.begin(), order.end(), size_t{0});
  // Fisher-Yates with the project noise stream, deterministic per seed
  NoiseStream rng(seed, 0x5b1f);
  for (size_t i = ds.n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform() * i);
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  const size_t n_val = static_cast<size_t>(ds.n * val_fraction);
  const size_t n_train = ds.n - n_val;

  auto gather = [&](size_t begin, size_t count) {
    Dataset out;
    out.sample_shape = ds.sample_shape;
    out.n = count;
    out.n_classes = ds.n_classes;
    const size_t sz = ds.sample_size();
    out.values.resize(count * sz);
    out.labels.resize(count);
    for (size_t i = 0; i < count; ++i) {
      const size_t src = order[begin + i];
      std::copy_n(ds.sample(src), sz, out.values.data() + i * sz);
      out.labels[i] = ds.labels[src];
    }
    return out;
  };
  return {gather(0, n_train), gather(n_train, n_val)};
}

Dataset dataset_head(const Dataset& ds, size_t count) {
  count = std::min(count, ds.n);
  Dataset out;
  out.sample_shape = ds.sample_shape;
  out.n = count;
  out.n_classes = ds.n_classes;
  out.values.assign(ds.values.begin(),
                    ds.values.begin() + count * ds.sample_size());
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + count);
  return out;
}

std::vector<ScalarMoments> dataset_channel_stats(const Dataset& ds) {
  if (ds.n == 0) throw std::invalid_argument("dataset_channel_stats: empty");
  const size_t channels = ds.sample_shape.size() == 3 ? ds.sample_shape[0] : 1;
  const size_t plane = ds.sample_size() / channels;
  // Welford per channel over samples and spatial positions
  std::vector<double> mean(channels, 0.0), m2(channels, 0.0);
  std::vector<size_t> count(channels, 0);
  for (size_t i = 0; i < ds.n; ++i) {
    const double* s = ds.sample(i);
    for (size_t c = 0; c < channels; ++c) {
      for (size_t j = 0; j < plane; ++j) {
        const double v = s[c * plane + j];
        ++count[c];
        const double delta = v - mean[c];
        mean[c] += delta / static_cast<double>(count[c]);
        m2[c] += delta * (v - mean[c]);
      }
    }
  }
  std::vector<ScalarMoments> stats(channels);
  for (size_t c = 0; c < channels; ++c)
    stats[c] = {mean[c], m2[c] / static_cast<double>(count[c])};
  return stats;
}

}  // namespace momentflow
