#include "momentflow/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "momentflow/tensor.hpp"

namespace momentflow {

namespace {

[[noreturn]] void fail(size_t line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_kv(const std::vector<std::string>& tokens, size_t line) {
  KeyValues kv;
  for (size_t i = 1; i < tokens.size(); ++i) {
    const auto eq = tokens[i].find('=');
    if (eq == std::string::npos)
      fail(line, "expected key=value, got '" + tokens[i] + "'");
    kv[tokens[i].substr(0, eq)] = tokens[i].substr(eq + 1);
  }
  return kv;
}

std::string take(KeyValues& kv, const std::string& key, size_t line) {
  auto it = kv.find(key);
  if (it == kv.end()) fail(line, "missing key '" + key + "'");
  std::string v = it->second;
  kv.erase(it);
  return v;
}

std::string take_or(KeyValues& kv, const std::string& key,
                    const std::string& fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::string v = it->second;
  kv.erase(it);
  return v;
}

size_t to_size(const std::string& v, size_t line) {
  try {
    const long long x = std::stoll(v);
    if (x < 0) fail(line, "negative dimension '" + v + "'");
    return static_cast<size_t>(x);
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    fail(line, "bad integer '" + v + "'");
  }
}

double to_real(const std::string& v, size_t line) {
  try {
    return std::stod(v);
  } catch (...) {
    fail(line, "bad number '" + v + "'");
  }
}

bool to_bool(const std::string& v, size_t line) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  fail(line, "bad flag '" + v + "'");
}

std::vector<size_t> parse_shape(const std::string& v, size_t line) {
  std::vector<size_t> shape;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(to_size(part, line));
  if (shape.empty()) fail(line, "empty shape");
  return shape;
}

ActivationSpec parse_activation(KeyValues& kv, size_t line) {
  ActivationSpec act;
  const std::string fn = take(kv, "fn", line);
  if (fn == "relu") act.kind = ActKind::relu;
  else if (fn == "lrelu") act.kind = ActKind::lrelu;
  else if (fn == "heaviside") act.kind = ActKind::heaviside;
  else if (fn == "logistic_bernoulli") act.kind = ActKind::logistic_bernoulli;
  else if (fn == "logistic_transform") act.kind = ActKind::logistic_transform;
  else if (fn == "probit") act.kind = ActKind::probit;
  else if (fn == "normal_cdf") act.kind = ActKind::normal_cdf;
  else if (fn == "abs") act.kind = ActKind::abs_value;
  else fail(line, "unknown activation '" + fn + "'");

  const std::string assume = take_or(kv, "input", "normal");
  if (assume == "normal") act.assume = InputAssumption::normal;
  else if (assume == "logistic") act.assume = InputAssumption::logistic;
  else fail(line, "unknown input assumption '" + assume + "'");

  const std::string var = take_or(kv, "var", "exact");
  if (var == "exact") act.var_kind = VarApprox::exact;
  else if (var == "fitted") act.var_kind = VarApprox::fitted;
  else fail(line, "unknown var approximation '" + var + "'");

  const std::string mean = take_or(kv, "mean", "ap2b");
  if (mean == "ap1") act.sigmoid_mean = SigmoidMeanApprox::ap1;
  else if (mean == "ap2a") act.sigmoid_mean = SigmoidMeanApprox::ap2a;
  else if (mean == "ap2b") act.sigmoid_mean = SigmoidMeanApprox::ap2b;
  else if (mean == "pea") act.sigmoid_mean = SigmoidMeanApprox::pea;
  else fail(line, "unknown mean approximation '" + mean + "'");

  const std::string lvar = take_or(kv, "lvar", "heuristic");
  if (lvar == "heuristic") act.sigmoid_var = SigmoidVarApprox::heuristic;
  else if (lvar == "large_sigma")
    act.sigmoid_var = SigmoidVarApprox::large_sigma;
  else fail(line, "unknown lvar approximation '" + lvar + "'");

  act.alpha = to_real(take_or(kv, "alpha", "0.01"), line);
  if (act.alpha < 0.0 || act.alpha >= 1.0)
    fail(line, "alpha must be in [0, 1)");
  return act;
}

SoftmaxApprox parse_softmax(const std::string& v, size_t line) {
  if (v == "standard") return SoftmaxApprox::standard;
  if (v == "normal") return SoftmaxApprox::normal;
  if (v == "logistic") return SoftmaxApprox::logistic;
  if (v == "simplified") return SoftmaxApprox::simplified;
  fail(line, "unknown softmax variant '" + v + "'");
}

}  // namespace

NetworkConfig parse_network_config(std::istream& in) {
  NetworkConfig cfg;
  std::string raw;
  size_t line_no = 0;
  bool have_input = false;

  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::stringstream ss(raw);
    std::vector<std::string> tokens;
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    if (tokens.empty()) continue;

    const std::string& kind = tokens[0];
    KeyValues kv = parse_kv(tokens, line_no);

    if (kind == "input") {
      if (have_input) fail(line_no, "duplicate input line");
      if (tokens.size() < 2 || tokens[1].find('=') != std::string::npos)
        fail(line_no, "expected 'input AxBxC'");
      cfg.input_shape = parse_shape(tokens[1], line_no);
      have_input = true;
      continue;
    }
    if (kind == "options") {
      const std::string mode = take_or(kv, "mode", "ap2");
      if (mode == "ap1") cfg.default_mode = PropMode::ap1;
      else if (mode == "ap2") cfg.default_mode = PropMode::ap2;
      else if (mode == "sample") cfg.default_mode = PropMode::sample;
      else fail(line_no, "unknown mode '" + mode + "'");
      cfg.seed = to_size(take_or(kv, "seed", "0"), line_no);
      continue;
    }
    if (!have_input) fail(line_no, "layers must follow the input line");

    LayerSpec layer;
    if (kind == "linear") {
      layer.kind = LayerKind::linear;
      layer.in_features = to_size(take(kv, "in", line_no), line_no);
      layer.out_features = to_size(take(kv, "out", line_no), line_no);
      layer.has_bias = to_bool(take_or(kv, "bias", "1"), line_no);
      if (layer.in_features == 0 || layer.out_features == 0)
        fail(line_no, "linear dimensions must be positive");
    } else if (kind == "conv2d") {
      layer.kind = LayerKind::conv2d;
      layer.in_channels = to_size(take(kv, "in", line_no), line_no);
      layer.out_channels = to_size(take(kv, "out", line_no), line_no);
      layer.kernel = to_size(take(kv, "kernel", line_no), line_no);
      layer.stride = to_size(take_or(kv, "stride", "1"), line_no);
      layer.has_bias = to_bool(take_or(kv, "bias", "1"), line_no);
      if (layer.in_channels == 0 || layer.out_channels == 0 ||
          layer.kernel == 0 || layer.stride == 0)
        fail(line_no, "conv2d dimensions must be positive");
    } else if (kind == "activation") {
      layer.kind = LayerKind::activation;
      layer.act = parse_activation(kv, line_no);
    } else if (kind == "dropout") {
      layer.kind = LayerKind::dropout;
      layer.drop_prob = to_real(take(kv, "p", line_no), line_no);
      layer.rescale = to_bool(take_or(kv, "rescale", "1"), line_no);
      if (layer.drop_prob < 0.0 || layer.drop_prob >= 1.0)
        fail(line_no, "dropout probability must be in [0, 1)");
    } else if (kind == "avgpool" || kind == "maxpool") {
      layer.kind = kind == "avgpool" ? LayerKind::avgpool : LayerKind::maxpool;
      layer.adaptive = to_bool(take_or(kv, "adaptive", "0"), line_no);
      if (!layer.adaptive) {
        layer.window = to_size(take(kv, "window", line_no), line_no);
        if (layer.window == 0) fail(line_no, "window must be positive");
      }
    } else if (kind == "normalize") {
      layer.kind = LayerKind::normalize;
    } else if (kind == "softmax_head") {
      layer.kind = LayerKind::softmax_head;
      layer.softmax =
          parse_softmax(take_or(kv, "variant", "simplified"), line_no);
    } else {
      fail(line_no, "unknown layer kind '" + kind + "'");
    }
    if (!kv.empty())
      fail(line_no, "unexpected key '" + kv.begin()->first + "'");
    cfg.layers.push_back(layer);
  }
  if (!have_input) throw ConfigError("config: missing input line");
  network_layer_shapes(cfg);  // validates composition
  return cfg;
}

NetworkConfig parse_network_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_network_config(in);
}

std::vector<size_t> layer_output_shape(const LayerSpec& layer,
                                       const std::vector<size_t>& in_shape) {
  const size_t volume = shape_volume(in_shape);
  switch (layer.kind) {
    case LayerKind::linear:
      if (volume != layer.in_features)
        throw ConfigError("linear: fan-in " + std::to_string(layer.in_features) +
                          " does not match input volume " +
                          std::to_string(volume));
      return {layer.out_features};
    case LayerKind::conv2d: {
      if (in_shape.size() != 3)
        throw ConfigError("conv2d: input must be CxHxW");
      const size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
      if (c != layer.in_channels)
        throw ConfigError("conv2d: channel mismatch");
      if (h < layer.kernel || w < layer.kernel)
        throw ConfigError("conv2d: spatial extent smaller than kernel");
      return {layer.out_channels, (h - layer.kernel) / layer.stride + 1,
              (w - layer.kernel) / layer.stride + 1};
    }
    case LayerKind::avgpool:
    case LayerKind::maxpool: {
      if (in_shape.size() != 3)
        throw ConfigError("pool: input must be CxHxW");
      if (layer.adaptive) return {in_shape[0], 1, 1};
      if (in_shape[1] % layer.window != 0 || in_shape[2] % layer.window != 0)
        throw ConfigError("pool: window does not divide spatial extent");
      return {in_shape[0], in_shape[1] / layer.window,
              in_shape[2] / layer.window};
    }
    case LayerKind::activation:
    case LayerKind::dropout:
    case LayerKind::normalize:
      return in_shape;
    case LayerKind::softmax_head:
      if (volume < 2) throw ConfigError("softmax_head: need >= 2 classes");
      return {volume};
  }
  return in_shape;
}

std::vector<std::vector<size_t>> network_layer_shapes(
    const NetworkConfig& cfg) {
  if (cfg.input_shape.empty()) throw ConfigError("config: no input shape");
  std::vector<std::vector<size_t>> shapes;
  std::vector<size_t> cur = cfg.input_shape;
  for (size_t i = 0; i < cfg.layers.size(); ++i) {
    if (cfg.layers[i].kind == LayerKind::softmax_head &&
        i + 1 != cfg.layers.size())
      throw ConfigError("softmax_head must be the last layer");
    cur = layer_output_shape(cfg.layers[i], cur);
    shapes.push_back(cur);
  }
  return shapes;
}

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::activation: return "activation";
    case LayerKind::dropout: return "dropout";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::normalize: return "normalize";
    case LayerKind::softmax_head: return "softmax_head";
  }
  return "?";
}

}  // namespace momentflow
