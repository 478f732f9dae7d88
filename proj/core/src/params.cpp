#include "momentflow/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "momentflow/rng.hpp"

namespace momentflow {

namespace {
constexpr char kMagic[4] = {'M', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError(std::string("checkpoint: truncated ") + what);
  return v;
}
}  // namespace

NetworkParams init_params(const NetworkConfig& cfg, uint64_t seed) {
  NetworkParams params = zero_params_like(cfg);
  NoiseStream rng(seed, /*stream=*/0x9a7a);
  for (size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& layer = cfg.layers[i];
    size_t fan_in = 0;
    if (layer.kind == LayerKind::linear) {
      fan_in = layer.in_features;
    } else if (layer.kind == LayerKind::conv2d) {
      fan_in = layer.in_channels * layer.kernel * layer.kernel;
    } else {
      continue;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& w : params[i].weight) w = bound * (2.0 * rng.uniform() - 1.0);
    if (layer.has_bias)
      for (double& b : params[i].bias) b = bound * (2.0 * rng.uniform() - 1.0);
  }
  return params;
}

NetworkParams zero_params_like(const NetworkConfig& cfg) {
  NetworkParams params(cfg.layers.size());
  for (size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& layer = cfg.layers[i];
    if (layer.kind == LayerKind::linear) {
      params[i].weight.assign(layer.out_features * layer.in_features, 0.0);
      params[i].bias.assign(layer.out_features, 0.0);
    } else if (layer.kind == LayerKind::conv2d) {
      params[i].weight.assign(
          layer.out_channels * layer.in_channels * layer.kernel * layer.kernel,
          0.0);
      params[i].bias.assign(layer.out_channels, 0.0);
    }
  }
  return params;
}

void save_checkpoint(const std::string& path, const NetworkParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  out.write(kMagic, 4);
  write_pod<uint32_t>(out, kVersion);
  write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const LayerParams& p : params) {
    write_pod<uint64_t>(out, p.weight.size());
    write_pod<uint64_t>(out, p.bias.size());
  }
  for (const LayerParams& p : params) {
    out.write(reinterpret_cast<const char*>(p.weight.data()),
              static_cast<std::streamsize>(p.weight.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(p.bias.data()),
              static_cast<std::streamsize>(p.bias.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("checkpoint: write failed");
}

NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic");
  if (read_pod<uint32_t>(in, "version") != kVersion)
    throw CheckpointError("checkpoint: unsupported version");
  const uint32_t n_layers = read_pod<uint32_t>(in, "layer count");
  std::vector<std::pair<uint64_t, uint64_t>> sizes(n_layers);
  for (auto& [w, b] : sizes) {
    w = read_pod<uint64_t>(in, "shape table");
    b = read_pod<uint64_t>(in, "shape table");
  }
  NetworkParams params(n_layers);
  for (uint32_t i = 0; i < n_layers; ++i) {
    params[i].weight.resize(sizes[i].first);
    params[i].bias.resize(sizes[i].second);
    in.read(reinterpret_cast<char*>(params[i].weight.data()),
            static_cast<std::streamsize>(sizes[i].first * sizeof(double)));
    in.read(reinterpret_cast<char*>(params[i].bias.data()),
            static_cast<std::streamsize>(sizes[i].second * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint: truncated payload");
  }
  return params;
}

}  // namespace momentflow
