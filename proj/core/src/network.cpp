#include "momentflow/network.hpp"

#include <cmath>
#include <stdexcept>

namespace momentflow {

namespace {

size_t batch_of(const MomentTensor& t) {
  if (t.shape.empty()) throw std::invalid_argument("tensor has no batch dim");
  return t.shape[0];
}

std::vector<size_t> with_batch(size_t batch, const std::vector<size_t>& s) {
  std::vector<size_t> shape{batch};
  shape.insert(shape.end(), s.begin(), s.end());
  return shape;
}

std::vector<size_t> drop_batch(const std::vector<size_t>& s) {
  return {s.begin() + 1, s.end()};
}

}  // namespace

ScalarMoments activation_moments(const ActivationSpec& act, ScalarMoments in) {
  switch (act.kind) {
    case ActKind::relu:
      return relu_moments(in, act.assume, act.var_kind);
    case ActKind::lrelu:
      return lrelu_moments(in, act.alpha, act.var_kind);
    case ActKind::heaviside:
      return heaviside_moments(in, act.assume);
    case ActKind::logistic_bernoulli:
      return logistic_bernoulli_mean(in, act.sigmoid_mean);
    case ActKind::logistic_transform:
      return logistic_transform_moments(in, act.sigmoid_var);
    case ActKind::probit:
      return probit_mean(in);
    case ActKind::normal_cdf:
      return normal_cdf_transform_moments(in);
    case ActKind::abs_value:
      return abs_moments(in);
  }
  throw std::invalid_argument("unknown activation");
}

double activation_sample(const ActivationSpec& act, double x,
                         NoiseStream& noise) {
  switch (act.kind) {
    case ActKind::relu:
      return std::max(0.0, x);
    case ActKind::lrelu:
      return x >= 0.0 ? x : act.alpha * x;
    case ActKind::heaviside:
      return x >= 0.0 ? 1.0 : 0.0;
    case ActKind::logistic_bernoulli:
      // Y = [x - Z >= 0], Z logistic
      return x - noise.logistic() >= 0.0 ? 1.0 : 0.0;
    case ActKind::logistic_transform:
      return logistic_sigmoid(x);
    case ActKind::probit:
      return x - noise.normal() >= 0.0 ? 1.0 : 0.0;
    case ActKind::normal_cdf:
      return std_normal_cdf(x);
    case ActKind::abs_value:
      return std::abs(x);
  }
  throw std::invalid_argument("unknown activation");
}

MomentTensor linear_forward(const LayerSpec& layer, const LayerParams& p,
                            const MomentTensor& in) {
  const size_t batch = batch_of(in);
  const size_t n_in = layer.in_features;
  const size_t n_out = layer.out_features;
  if (in.size() != batch * n_in)
    throw std::invalid_argument("linear_forward: shape mismatch");
  MomentTensor out(with_batch(batch, {n_out}));
  for (size_t b = 0; b < batch; ++b) {
    const double* mi = in.mean.data() + b * n_in;
    const double* vi = in.var.data() + b * n_in;
    double* mo = out.mean.data() + b * n_out;
    double* vo = out.var.data() + b * n_out;
    for (size_t j = 0; j < n_out; ++j) {
      const double* w = p.weight.data() + j * n_in;
      double m = p.bias.empty() ? 0.0 : p.bias[j];
      double v = 0.0;
      for (size_t i = 0; i < n_in; ++i) {
        m += w[i] * mi[i];
        v += w[i] * w[i] * vi[i];
      }
      mo[j] = m;
      vo[j] = v;
    }
  }
  return out;
}

MomentTensor conv2d_forward(const LayerSpec& layer, const LayerParams& p,
                            const MomentTensor& in) {
  const size_t batch = batch_of(in);
  if (in.shape.size() != 4 || in.shape[1] != layer.in_channels)
    throw std::invalid_argument("conv2d_forward: shape mismatch");
  const size_t ic = layer.in_channels, h = in.shape[2], w = in.shape[3];
  const size_t k = layer.kernel, s = layer.stride, oc = layer.out_channels;
  if (h < k || w < k)
    throw std::invalid_argument("conv2d_forward: input smaller than kernel");
  const size_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
  MomentTensor out(with_batch(batch, {oc, oh, ow}));

  const size_t in_plane = h * w, out_plane = oh * ow;
  for (size_t b = 0; b < batch; ++b) {
    for (size_t o = 0; o < oc; ++o) {
      const double bias = p.bias.empty() ? 0.0 : p.bias[o];
      for (size_t oy = 0; oy < oh; ++oy) {
        for (size_t ox = 0; ox < ow; ++ox) {
          double m = bias, v = 0.0;
          for (size_t c = 0; c < ic; ++c) {
            const double* mi =
                in.mean.data() + ((b * ic + c) * in_plane) + oy * s * w + ox * s;
            const double* vi =
                in.var.data() + ((b * ic + c) * in_plane) + oy * s * w + ox * s;
            const double* kw = p.weight.data() + ((o * ic + c) * k * k);
            for (size_t ky = 0; ky < k; ++ky) {
              for (size_t kx = 0; kx < k; ++kx) {
                const double wv = kw[ky * k + kx];
                m += wv * mi[ky * w + kx];
                v += wv * wv * vi[ky * w + kx];
              }
            }
          }
          const size_t idx = ((b * oc + o) * out_plane) + oy * ow + ox;
          out.mean[idx] = m;
          out.var[idx] = v;
        }
      }
    }
  }
  return out;
}

MomentTensor activation_forward(const ActivationSpec& act,
                                const MomentTensor& in, PropMode mode,
                                NoiseStream* noise) {
  MomentTensor out(in.shape);
  if (mode == PropMode::sample) {
    if (noise == nullptr)
      throw std::invalid_argument("sample mode requires a noise stream");
    for (size_t i = 0; i < in.size(); ++i)
      out.mean[i] = activation_sample(act, in.mean[i], *noise);
    return out;
  }
  for (size_t i = 0; i < in.size(); ++i) {
    const ScalarMoments m =
        activation_moments(act, {in.mean[i], in.var[i]});
    out.mean[i] = m.mean;
    out.var[i] = m.var;
  }
  return out;
}

MomentTensor avgpool_forward(const LayerSpec& layer, const MomentTensor& in) {
  const size_t batch = batch_of(in);
  if (in.shape.size() != 4)
    throw std::invalid_argument("avgpool_forward: input must be BxCxHxW");
  const size_t c = in.shape[1], h = in.shape[2], w = in.shape[3];
  const size_t win_h = layer.adaptive ? h : layer.window;
  const size_t win_w = layer.adaptive ? w : layer.window;
  if (h % win_h != 0 || w % win_w != 0)
    throw std::invalid_argument("avgpool_forward: window does not divide");
  const size_t oh = h / win_h, ow = w / win_w;
  MomentTensor out(with_batch(batch, {c, oh, ow}));
  const double inv_n = 1.0 / static_cast<double>(win_h * win_w);
  for (size_t bc = 0; bc < batch * c; ++bc) {
    const double* mi = in.mean.data() + bc * h * w;
    const double* vi = in.var.data() + bc * h * w;
    double* mo = out.mean.data() + bc * oh * ow;
    double* vo = out.var.data() + bc * oh * ow;
    for (size_t oy = 0; oy < oh; ++oy) {
      for (size_t ox = 0; ox < ow; ++ox) {
        double m = 0.0, v = 0.0;
        for (size_t y = 0; y < win_h; ++y) {
          for (size_t x = 0; x < win_w; ++x) {
            m += mi[(oy * win_h + y) * w + ox * win_w + x];
            v += vi[(oy * win_h + y) * w + ox * win_w + x];
          }
        }
        mo[oy * ow + ox] = m * inv_n;
        vo[oy * ow + ox] = v * inv_n * inv_n;
      }
    }
  }
  return out;
}

MomentTensor maxpool_forward(const LayerSpec& layer, const MomentTensor& in,
                             PropMode mode) {
  const size_t batch = batch_of(in);
  if (in.shape.size() != 4)
    throw std::invalid_argument("maxpool_forward: input must be BxCxHxW");
  const size_t c = in.shape[1], h = in.shape[2], w = in.shape[3];
  const size_t win_h = layer.adaptive ? h : layer.window;
  const size_t win_w = layer.adaptive ? w : layer.window;
  if (h % win_h != 0 || w % win_w != 0)
    throw std::invalid_argument("maxpool_forward: window does not divide");
  const size_t oh = h / win_h, ow = w / win_w;
  MomentTensor out(with_batch(batch, {c, oh, ow}));
  std::vector<ScalarMoments> window(win_h * win_w);
  for (size_t bc = 0; bc < batch * c; ++bc) {
    const double* mi = in.mean.data() + bc * h * w;
    const double* vi = in.var.data() + bc * h * w;
    double* mo = out.mean.data() + bc * oh * ow;
    double* vo = out.var.data() + bc * oh * ow;
    for (size_t oy = 0; oy < oh; ++oy) {
      for (size_t ox = 0; ox < ow; ++ox) {
        for (size_t y = 0; y < win_h; ++y)
          for (size_t x = 0; x < win_w; ++x)
            window[y * win_w + x] = {
                mi[(oy * win_h + y) * w + ox * win_w + x],
                vi[(oy * win_h + y) * w + ox * win_w + x]};
        if (mode == PropMode::sample) {
          double best = window[0].mean;
          for (const auto& sm : window) best = std::max(best, sm.mean);
          mo[oy * ow + ox] = best;
          vo[oy * ow + ox] = 0.0;
        } else {
          const ScalarMoments sm = maxpool_moments(window);
          mo[oy * ow + ox] = sm.mean;
          vo[oy * ow + ox] = sm.var;
        }
      }
    }
  }
  return out;
}

ForwardTrace network_forward(const NetworkConfig& cfg,
                             const NetworkParams& params,
                             const MomentTensor& input,
                             const ForwardOptions& options) {
  if (params.size() != cfg.layers.size())
    throw std::invalid_argument("network_forward: params do not match config");
  const size_t batch = batch_of(input);
  if (drop_batch(input.shape) != cfg.input_shape)
    throw std::invalid_argument("network_forward: input shape mismatch");

  ForwardTrace trace;
  trace.input = input;
  if (options.mode == PropMode::ap1) {
    trace.input.zero_vars();
  } else if (options.mode == PropMode::sample) {
    if (options.noise == nullptr)
      throw std::invalid_argument("sample mode requires a noise stream");
    for (size_t i = 0; i < trace.input.size(); ++i) {
      if (trace.input.var[i] > 0.0)
        trace.input.mean[i] +=
            std::sqrt(trace.input.var[i]) * options.noise->normal();
      trace.input.var[i] = 0.0;
    }
  }

  trace.dropout_masks.resize(cfg.layers.size());
  MomentTensor cur = trace.input;
  for (size_t li = 0; li < cfg.layers.size(); ++li) {
    const LayerSpec& layer = cfg.layers[li];
    switch (layer.kind) {
      case LayerKind::linear: {
        // linear consumes the flattened input
        MomentTensor flat = cur;
        flat.shape = {batch, shape_volume(cur.shape) / batch};
        cur = linear_forward(layer, params[li], flat);
        break;
      }
      case LayerKind::conv2d:
        cur = conv2d_forward(layer, params[li], cur);
        break;
      case LayerKind::activation:
        cur = activation_forward(layer.act, cur, options.mode, options.noise);
        break;
      case LayerKind::dropout: {
        if (!options.dropout_active) break;
        MomentTensor out(cur.shape);
        if (options.mode == PropMode::sample) {
          const double keep = 1.0 - layer.drop_prob;
          auto& mask = trace.dropout_masks[li];
          mask.resize(cur.size());
          for (size_t i = 0; i < cur.size(); ++i) {
            const double gain = options.noise->bernoulli(keep)
                                    ? (layer.rescale ? 1.0 / keep : 1.0)
                                    : 0.0;
            mask[i] = gain;
            out.mean[i] = gain * cur.mean[i];
          }
        } else {
          for (size_t i = 0; i < cur.size(); ++i) {
            const ScalarMoments m = bernoulli_dropout_moments(
                {cur.mean[i], cur.var[i]}, layer.drop_prob, layer.rescale);
            out.mean[i] = m.mean;
            out.var[i] = m.var;
          }
        }
        cur = out;
        break;
      }
      case LayerKind::avgpool:
        cur = avgpool_forward(layer, cur);
        break;
      case LayerKind::maxpool:
        cur = maxpool_forward(layer, cur, options.mode);
        break;
      case LayerKind::normalize:
        break;  // marker; its effect lives in the folded parameters
      case LayerKind::softmax_head: {
        const size_t classes = shape_volume(cur.shape) / batch;
        trace.posterior.reserve(batch);
        std::vector<ScalarMoments> row(classes);
        for (size_t b = 0; b < batch; ++b) {
          for (size_t k = 0; k < classes; ++k)
            row[k] = {cur.mean[b * classes + k], cur.var[b * classes + k]};
          // ap1 and sample modes reduce to the standard softmax of the
          // (propagated or sampled) activations
          const SoftmaxApprox approx = options.mode == PropMode::ap2
                                           ? layer.softmax
                                           : SoftmaxApprox::standard;
          trace.posterior.push_back(softmax_posterior(row, approx));
        }
        break;
      }
    }
    if (options.mode != PropMode::ap2) cur.zero_vars();
    trace.layer_outputs.push_back(cur);
  }
  return trace;
}

namespace {

// index -> channel map for the channel-collapsed stats propagation
ScalarMoments stat_at(const ChannelStats& stats,
                      const std::vector<size_t>& shape, size_t flat_index) {
  if (stats.size() == 1) return stats[0];
  if (shape.size() == 3) {
    const size_t plane = shape[1] * shape[2];
    return stats[flat_index / plane];
  }
  return stats[flat_index];
}

ChannelStats stats_through_layer(const LayerSpec& layer, const LayerParams& p,
                                 const ChannelStats& in,
                                 const std::vector<size_t>& in_shape) {
  switch (layer.kind) {
    case LayerKind::linear: {
      ChannelStats out(layer.out_features);
      for (size_t j = 0; j < layer.out_features; ++j) {
        const double* w = p.weight.data() + j * layer.in_features;
        double m = p.bias.empty() ? 0.0 : p.bias[j];
        double v = 0.0;
        for (size_t i = 0; i < layer.in_features; ++i) {
          const ScalarMoments s = stat_at(in, in_shape, i);
          m += w[i] * s.mean;
          v += w[i] * w[i] * s.var;
        }
        out[j] = {m, v};
      }
      return out;
    }
    case LayerKind::conv2d: {
      // channel mixing with kernel sums (means) and squared sums (variances)
      ChannelStats out(layer.out_channels);
      const size_t kk = layer.kernel * layer.kernel;
      for (size_t o = 0; o < layer.out_channels; ++o) {
        double m = p.bias.empty() ? 0.0 : p.bias[o];
        double v = 0.0;
        for (size_t c = 0; c < layer.in_channels; ++c) {
          const double* kw = p.weight.data() + (o * layer.in_channels + c) * kk;
          double wsum = 0.0, w2sum = 0.0;
          for (size_t i = 0; i < kk; ++i) {
            wsum += kw[i];
            w2sum += kw[i] * kw[i];
          }
          const ScalarMoments s = in.size() == 1 ? in[0] : in[c];
          m += wsum * s.mean;
          v += w2sum * s.var;
        }
        out[o] = {m, v};
      }
      return out;
    }
    case LayerKind::activation: {
      ChannelStats out(in.size());
      for (size_t i = 0; i < in.size(); ++i)
        out[i] = activation_moments(layer.act, in[i]);
      return out;
    }
    case LayerKind::dropout: {
      ChannelStats out(in.size());
      for (size_t i = 0; i < in.size(); ++i)
        out[i] =
            bernoulli_dropout_moments(in[i], layer.drop_prob, layer.rescale);
      return out;
    }
    case LayerKind::avgpool: {
      const size_t n = layer.adaptive
                           ? in_shape[1] * in_shape[2]
                           : layer.window * layer.window;
      ChannelStats out(in.size());
      for (size_t i = 0; i < in.size(); ++i)
        out[i] = {in[i].mean, in[i].var / static_cast<double>(n)};
      return out;
    }
    case LayerKind::maxpool: {
      const size_t n = layer.adaptive
                           ? in_shape[1] * in_shape[2]
                           : layer.window * layer.window;
      ChannelStats out(in.size());
      for (size_t i = 0; i < in.size(); ++i) {
        std::vector<ScalarMoments> window(n, in[i]);
        out[i] = maxpool_moments(window);
      }
      return out;
    }
    case LayerKind::normalize:
    case LayerKind::softmax_head:
      return in;
  }
  return in;
}

}  // namespace

std::vector<ChannelStats> propagate_dataset_stats(
    const NetworkConfig& cfg, const NetworkParams& params,
    const ChannelStats& input_stats) {
  const auto shapes = network_layer_shapes(cfg);
  std::vector<ChannelStats> per_layer;
  per_layer.reserve(cfg.layers.size());
  ChannelStats cur = input_stats;
  std::vector<size_t> cur_shape = cfg.input_shape;
  for (size_t i = 0; i < cfg.layers.size(); ++i) {
    cur = stats_through_layer(cfg.layers[i], params[i], cur, cur_shape);
    cur_shape = shapes[i];
    per_layer.push_back(cur);
  }
  return per_layer;
}

void apply_analytic_normalization(const NetworkConfig& cfg,
                                  NetworkParams& params,
                                  const ChannelStats& input_stats) {
  const auto shapes = network_layer_shapes(cfg);
  ChannelStats cur = input_stats;
  std::vector<size_t> cur_shape = cfg.input_shape;
  for (size_t i = 0; i < cfg.layers.size(); ++i) {
    if (cfg.layers[i].kind == LayerKind::normalize) {
      if (i == 0 || (cfg.layers[i - 1].kind != LayerKind::linear &&
                     cfg.layers[i - 1].kind != LayerKind::conv2d))
        throw NormalizationError(
            "normalize marker must directly follow a linear or conv2d layer");
      const LayerSpec& prod = cfg.layers[i - 1];
      LayerParams& pp = params[i - 1];
      const size_t n_out = prod.kind == LayerKind::linear ? prod.out_features
                                                          : prod.out_channels;
      const size_t row = pp.weight.size() / n_out;
      if (pp.bias.empty()) pp.bias.assign(n_out, 0.0);
      for (size_t c = 0; c < n_out; ++c) {
        if (!(cur[c].var > 0.0))
          throw NormalizationError(
              "cannot normalize channel " + std::to_string(c) +
              ": zero propagated variance");
        const double sigma = std::sqrt(cur[c].var);
        for (size_t j = 0; j < row; ++j) pp.weight[c * row + j] /= sigma;
        pp.bias[c] = (pp.bias[c] - cur[c].mean) / sigma;
        cur[c] = {0.0, 1.0};
      }
    } else {
      cur = stats_through_layer(cfg.layers[i], params[i], cur, cur_shape);
    }
    cur_shape = shapes[i];
  }
}

}  // namespace momentflow
