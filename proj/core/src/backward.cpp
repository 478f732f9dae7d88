#include "momentflow/backward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace momentflow {

namespace {

constexpr double kLn2 = 0.6931471805599453094;

double step01(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? 0.0 : 0.5); }

// d(mean)/d(mean), d(mean)/d(var) of each sigmoid mean approximation.
void sigmoid_mean_partials(ScalarMoments in, SigmoidMeanApprox approx,
                           double& p, double& p_m, double& p_v) {
  const double mu = in.mean, v = in.var;
  switch (approx) {
    case SigmoidMeanApprox::ap1: {
      p = logistic_sigmoid(mu);
      p_m = p * (1.0 - p);
      p_v = 0.0;
      return;
    }
    case SigmoidMeanApprox::ap2a: {
      const double d2 = v + kLogisticVariance;
      const double d = std::sqrt(d2);
      const double u = mu / d;
      const double pdf = std_normal_pdf(u);
      p = std_normal_cdf(u);
      p_m = pdf / d;
      p_v = pdf * (-u / (2.0 * d2));
      return;
    }
    case SigmoidMeanApprox::ap2b: {
      const double d = std::sqrt(v / kLogisticVariance + 1.0);
      const double r = mu / d;
      p = logistic_sigmoid(r);
      const double sp = p * (1.0 - p);
      p_m = sp / d;
      p_v = sp * (-r / (2.0 * (v + kLogisticVariance)));
      return;
    }
    case SigmoidMeanApprox::pea: {
      if (v <= 0.0) {
        // deterministic limit: Laplace cdf slope
        p = mu < 0.0 ? 0.5 * std::exp(mu * kLn2)
                     : 1.0 - 0.5 * std::exp(-mu * kLn2);
        p_m = mu < 0.0 ? kLn2 * p : kLn2 * (1.0 - p);
        p_v = 0.0;
        return;
      }
      const double sigma = std::sqrt(v);
      const double c = 0.5 * kLn2 * kLn2 * v - kLn2;
      const double a_arg = (-mu - kLn2 * v) / sigma;
      const double b_arg = (mu - kLn2 * v) / sigma;
      const double t1 = std::exp(c + mu * kLn2 + log_std_normal_cdf(a_arg));
      const double t2 = std::exp(c - mu * kLn2 + log_std_normal_cdf(b_arg));
      const double e1 = std::exp(c + mu * kLn2);  // t1 without the cdf factor
      const double e2 = std::exp(c - mu * kLn2);
      const double r = mu / sigma;
      p = std_normal_cdf(r) + t1 - t2;
      p_m = std_normal_pdf(r) / sigma + kLn2 * (t1 + t2) -
            (e1 * std_normal_pdf(a_arg) + e2 * std_normal_pdf(b_arg)) / sigma;
      const double dr_dv = -r / (2.0 * v);
      const double da_dv = mu / (2.0 * v * sigma) - kLn2 / (2.0 * sigma);
      const double db_dv = -mu / (2.0 * v * sigma) - kLn2 / (2.0 * sigma);
      const double dc_dv = 0.5 * kLn2 * kLn2;
      p_v = std_normal_pdf(r) * dr_dv + dc_dv * (t1 - t2) +
            e1 * std_normal_pdf(a_arg) * da_dv -
            e2 * std_normal_pdf(b_arg) * db_dv;
      return;
    }
  }
}

MomentJacobian bernoulli_from_p(double p, double p_m, double p_v) {
  MomentJacobian j;
  j.m_m = p_m;
  j.m_v = p_v;
  const double d = 1.0 - 2.0 * p;  // derivative of p(1-p) in p
  j.v_m = d * p_m;
  j.v_v = d * p_v;
  return j;
}

MomentJacobian relu_jacobian(ScalarMoments in, InputAssumption assume,
                             VarApprox var_kind) {
  MomentJacobian j;
  const double mu = in.mean, v = in.var;
  if (v <= 0.0) {
    j.m_m = step01(mu);
    j.v_v = assume == InputAssumption::normal && var_kind == VarApprox::exact &&
                    mu == 0.0
                ? relu_var_ratio(0.0, VarApprox::exact)
                : step01(mu);
    return j;
  }
  if (assume == InputAssumption::normal) {
    const double sigma = std::sqrt(v);
    const double a = mu / sigma;
    const double cdf = std_normal_cdf(a);
    const double pdf = std_normal_pdf(a);
    j.m_m = cdf;
    j.m_v = pdf / (2.0 * sigma);
    if (var_kind == VarApprox::exact) {
      const double rp = relu_var_ratio_deriv(a);
      j.v_m = sigma * rp;
      j.v_v = relu_var_ratio(a, VarApprox::exact) - 0.5 * a * rp;
    } else {
      const double f = logistic_sigmoid(a / kReluVarSlope);
      const double fp = f * (1.0 - f) / kReluVarSlope;
      j.v_m = sigma * fp;
      j.v_v = f - 0.5 * a * fp;
    }
    return j;
  }
  // logistic assumption
  const double s = std::sqrt(v / kLogisticVariance);
  const double r = mu / s;
  const double sig = logistic_sigmoid(r);
  const double sp = softplus(r);
  const double mean = s * sp;
  const double s_v = 1.0 / (2.0 * s * kLogisticVariance);
  const double r_v = -r / (2.0 * v);
  j.m_m = sig;
  j.m_v = sp * s_v + s * sig * r_v;
  const double li2 = dilog_neg_exp(r);
  j.v_m = 2.0 * mean * (1.0 - sig);
  j.v_v = -4.0 * s * s_v * li2 + 2.0 * s * s * sp * r_v - 2.0 * mean * j.m_v;
  return j;
}

MomentJacobian lrelu_jacobian(ScalarMoments in, double alpha,
                              VarApprox var_kind) {
  MomentJacobian j;
  const double mu = in.mean, v = in.var;
  if (v <= 0.0) {
    j.m_m = mu > 0.0 ? 1.0 : (mu < 0.0 ? alpha : alpha + (1.0 - alpha) * 0.5);
    j.v_v = mu > 0.0 ? 1.0 : (mu < 0.0 ? alpha * alpha : 0.0);
    if (mu == 0.0)
      j.v_v = alpha * alpha + 2.0 * alpha * (1.0 - alpha) * 0.5 +
              (1.0 - alpha) * (1.0 - alpha) *
                  relu_var_ratio(0.0, VarApprox::exact);
    return j;
  }
  const double sigma = std::sqrt(v);
  const double a = mu / sigma;
  const double cdf = std_normal_cdf(a);
  const double pdf = std_normal_pdf(a);
  j.m_m = alpha + (1.0 - alpha) * cdf;
  j.m_v = (1.0 - alpha) * pdf / (2.0 * sigma);
  double g, gp;  // variance ratio and its a-derivative
  if (var_kind == VarApprox::exact) {
    g = alpha * alpha + 2.0 * alpha * (1.0 - alpha) * cdf +
        (1.0 - alpha) * (1.0 - alpha) * relu_var_ratio(a, VarApprox::exact);
    gp = 2.0 * alpha * (1.0 - alpha) * pdf +
         (1.0 - alpha) * (1.0 - alpha) * relu_var_ratio_deriv(a);
  } else {
    const double f = logistic_sigmoid(a / kReluVarSlope);
    g = alpha * alpha + (1.0 - alpha * alpha) * f;
    gp = (1.0 - alpha * alpha) * f * (1.0 - f) / kReluVarSlope;
  }
  j.v_m = sigma * gp;
  j.v_v = g - 0.5 * a * gp;
  return j;
}

MomentJacobian heaviside_jacobian(ScalarMoments in, InputAssumption assume) {
  const double mu = in.mean, v = in.var;
  if (v <= 0.0) return {};  // hard step: zero slope away from the jump
  double p, p_m, p_v;
  if (assume == InputAssumption::normal) {
    const double sigma = std::sqrt(v);
    const double a = mu / sigma;
    const double pdf = std_normal_pdf(a);
    p = std_normal_cdf(a);
    p_m = pdf / sigma;
    p_v = pdf * (-a / (2.0 * v));
  } else {
    const double scale = std::sqrt(kLogisticVariance);
    const double sigma = std::sqrt(v);
    const double r = mu * scale / sigma;
    p = logistic_sigmoid(r);
    const double sp = p * (1.0 - p);
    p_m = sp * scale / sigma;
    p_v = sp * (-r / (2.0 * v));
  }
  return bernoulli_from_p(p, p_m, p_v);
}

MomentJacobian logistic_transform_jacobian(ScalarMoments in,
                                           SigmoidVarApprox var_kind) {
  double p, p_m, p_v;
  sigmoid_mean_partials(in, SigmoidMeanApprox::ap2b, p, p_m, p_v);
  MomentJacobian j;
  j.m_m = p_m;
  j.m_v = p_v;
  const double v = in.var;
  if (v <= 0.0) {
    // right-limit of the heuristic: d var'/d var -> (p(1-p))^2
    const double pq = p * (1.0 - p);
    j.v_v = var_kind == SigmoidVarApprox::heuristic ? pq * pq : 0.0;
    return j;
  }
  if (var_kind == SigmoidVarApprox::heuristic) {
    const double pq = p * (1.0 - p);
    const double c = 4.0 * v / (v + 4.0);
    const double c_v = 16.0 / ((v + 4.0) * (v + 4.0));
    const double var = c * pq * pq;
    if (var <= 0.0 || var >= 0.25) return j;  // clamp active
    j.v_m = c * 2.0 * pq * (1.0 - 2.0 * p) * p_m;
    j.v_v = c_v * pq * pq + c * 2.0 * pq * (1.0 - 2.0 * p) * p_v;
    return j;
  }
  // large-sigma form
  const double d2 = v + kLogisticVariance - 1.0;
  const double d = std::sqrt(d2);
  const double u = (in.mean - 1.0) / d;
  const double second = std_normal_cdf(u);
  const double var = second - p * p;
  if (var <= 0.0 || var >= 0.25) return j;  // clamp active
  const double pdf = std_normal_pdf(u);
  j.v_m = pdf / d - 2.0 * p * p_m;
  j.v_v = pdf * (-u / (2.0 * d2)) - 2.0 * p * p_v;
  return j;
}

MomentJacobian probit_jacobian(ScalarMoments in) {
  const double d2 = in.var + 1.0;
  const double d = std::sqrt(d2);
  const double u = in.mean / d;
  const double pdf = std_normal_pdf(u);
  return bernoulli_from_p(std_normal_cdf(u), pdf / d,
                          pdf * (-u / (2.0 * d2)));
}

MomentJacobian normal_cdf_jacobian(ScalarMoments in) {
  const double d2 = in.var + 1.0;
  const double d = std::sqrt(d2);
  const double u = in.mean / d;
  const double pdf = std_normal_pdf(u);
  const double p = std_normal_cdf(u);
  const double p_m = pdf / d;
  const double p_v = pdf * (-u / (2.0 * d2));
  MomentJacobian j;
  j.m_m = p_m;
  j.m_v = p_v;
  const double v = in.var;
  const double pq = p * (1.0 - p);
  if (v <= 0.0) {
    j.v_v = kLogisticVariance * pq * pq;
    return j;
  }
  const double vr = v * kLogisticVariance;
  const double c = 4.0 * vr / (vr + 4.0);
  const double var = c * pq * pq;
  if (var > 0.0 && var < 0.25) {
    j.v_m = c * 2.0 * pq * (1.0 - 2.0 * p) * p_m;
    j.v_v = 16.0 * kLogisticVariance / ((vr + 4.0) * (vr + 4.0)) * pq * pq +
            c * 2.0 * pq * (1.0 - 2.0 * p) * p_v;
  }
  return j;
}

MomentJacobian abs_jacobian(ScalarMoments in) {
  MomentJacobian j;
  const double mu = in.mean, v = in.var;
  if (v <= 0.0) {
    j.m_m = mu > 0.0 ? 1.0 : (mu < 0.0 ? -1.0 : 0.0);
    j.v_v = 1.0;
    return j;
  }
  const double sigma = std::sqrt(v);
  const double a = mu / sigma;
  const double cdf = std_normal_cdf(a);
  const double pdf = std_normal_pdf(a);
  const double mean = 2.0 * (mu * cdf + sigma * pdf) - mu;
  j.m_m = 2.0 * cdf - 1.0;
  j.m_v = pdf / sigma;
  j.v_m = 2.0 * mu - 2.0 * mean * j.m_m;
  j.v_v = 1.0 - 2.0 * mean * j.m_v;
  return j;
}

}  // namespace

MomentJacobian activation_jacobian(const ActivationSpec& act,
                                   ScalarMoments in) {
  switch (act.kind) {
    case ActKind::relu:
      return relu_jacobian(in, act.assume, act.var_kind);
    case ActKind::lrelu:
      return lrelu_jacobian(in, act.alpha, act.var_kind);
    case ActKind::heaviside:
      return heaviside_jacobian(in, act.assume);
    case ActKind::logistic_bernoulli: {
      double p, p_m, p_v;
      sigmoid_mean_partials(in, act.sigmoid_mean, p, p_m, p_v);
      return bernoulli_from_p(p, p_m, p_v);
    }
    case ActKind::logistic_transform:
      return logistic_transform_jacobian(in, act.sigmoid_var);
    case ActKind::probit:
      return probit_jacobian(in);
    case ActKind::normal_cdf:
      return normal_cdf_jacobian(in);
    case ActKind::abs_value:
      return abs_jacobian(in);
  }
  throw std::invalid_argument("unknown activation");
}

MomentJacobian dropout_jacobian(ScalarMoments in, double drop_prob,
                                bool rescale) {
  if (drop_prob < 0.0 || drop_prob >= 1.0)
    throw std::invalid_argument("dropout_jacobian: drop_prob out of range");
  const double m = 1.0 - drop_prob;
  MomentJacobian j;
  if (rescale) {
    j.m_m = 1.0;
    j.v_m = 2.0 * (1.0 - m) * in.mean / m;
    j.v_v = 1.0 / m;
  } else {
    j.m_m = m;
    j.v_m = 2.0 * m * (1.0 - m) * in.mean;
    j.v_v = m;
  }
  return j;
}

MomentJacobian product_jacobian_wrt_first(ScalarMoments a, ScalarMoments b) {
  MomentJacobian j;
  j.m_m = b.mean;
  j.v_m = 2.0 * a.mean * b.var;
  j.v_v = b.var + b.mean * b.mean;
  return j;
}

Max2Jacobian max2_jacobian(ScalarMoments a, ScalarMoments b,
                           VarApprox var_kind) {
  Max2Jacobian j;
  const double s2 = a.var + b.var;
  if (s2 <= 0.0) {
    const double pick_a = a.mean > b.mean ? 1.0 : (a.mean < b.mean ? 0.0 : 0.5);
    j.a.m_m = pick_a;
    j.b.m_m = 1.0 - pick_a;
    j.a.v_v = pick_a;
    j.b.v_v = 1.0 - pick_a;
    return j;
  }
  const double s = std::sqrt(s2);
  const double t = (a.mean - b.mean) / s;
  const double cdf = std_normal_cdf(t);
  const double cdf_n = std_normal_cdf(-t);
  const double pdf = std_normal_pdf(t);

  j.a.m_m = cdf;
  j.b.m_m = cdf_n;
  j.a.m_v = j.b.m_v = pdf / (2.0 * s);

  double dvdt;  // d var' / d t
  double direct_a, direct_b;
  if (var_kind == VarApprox::exact) {
    const double r = relu_var_ratio(t, VarApprox::exact);
    const double rp = relu_var_ratio_deriv(t);
    dvdt = a.var * pdf - b.var * pdf + s2 * (rp - pdf);
    direct_a = cdf + (r - cdf);   // d/d var_a: direct term plus s^2 chain
    direct_b = cdf_n + (r - cdf);
  } else {
    const double fa = logistic_sigmoid(t / kReluVarSlope);
    const double fb = logistic_sigmoid(-t / kReluVarSlope);
    dvdt = (a.var * fa * (1.0 - fa) - b.var * fb * (1.0 - fb)) / kReluVarSlope;
    direct_a = fa;
    direct_b = fb;
  }
  const double dt_dv = -t / (2.0 * s2);
  j.a.v_m = dvdt / s;
  j.b.v_m = -dvdt / s;
  j.a.v_v = direct_a + dvdt * dt_dv;
  j.b.v_v = direct_b + dvdt * dt_dv;
  return j;
}

double nll_loss(const ClassPosterior& posterior, size_t label) {
  if (label >= posterior.size())
    throw std::invalid_argument("nll_loss: label out of range");
  return -posterior.log_probs[label];
}

double batch_nll(const ForwardTrace& trace, std::span<const int> labels) {
  if (trace.posterior.size() != labels.size())
    throw std::invalid_argument("batch_nll: label count mismatch");
  double acc = 0.0;
  for (size_t b = 0; b < labels.size(); ++b)
    acc += nll_loss(trace.posterior[b], static_cast<size_t>(labels[b]));
  return acc / static_cast<double>(labels.size());
}

namespace {

struct Grads {
  std::vector<double> mean, var;
  explicit Grads(size_t n) : mean(n, 0.0), var(n, 0.0) {}
};

// dL/d(head input moments) for the batch-mean NLL, one softmax variant each.
void softmax_head_backward(const LayerSpec& layer, const MomentTensor& in,
                           std::span<const int> labels, PropMode mode,
                           const std::vector<ClassPosterior>& posterior,
                           Grads& g) {
  const size_t batch = in.shape[0];
  const size_t n = in.size() / batch;
  const double inv_b = 1.0 / static_cast<double>(batch);
  const SoftmaxApprox approx =
      mode == PropMode::ap2 ? layer.softmax : SoftmaxApprox::standard;

  for (size_t b = 0; b < batch; ++b) {
    const double* mu = in.mean.data() + b * n;
    const double* var = in.var.data() + b * n;
    double* gm = g.mean.data() + b * n;
    double* gv = g.var.data() + b * n;
    const size_t y = static_cast<size_t>(labels[b]);

    switch (approx) {
      case SoftmaxApprox::standard: {
        for (size_t k = 0; k < n; ++k) {
          const double p = posterior[b].prob(k);
          gm[k] += inv_b * (p - (k == y ? 1.0 : 0.0));
        }
        break;
      }
      case SoftmaxApprox::simplified: {
        for (size_t k = 0; k < n; ++k) {
          const double c = 1.0 / std::sqrt(var[k] / kLogisticVariance + 1.0);
          const double gz = inv_b * (posterior[b].prob(k) -
                                     (k == y ? 1.0 : 0.0));
          gm[k] += gz * c;
          gv[k] += gz * mu[k] * (-c * c * c / (2.0 * kLogisticVariance));
        }
        break;
      }
      case SoftmaxApprox::logistic: {
        // scores l_y = -logsumexp_k t_ky; renormalization via softmax of l
        std::vector<double> scores(n), t(n * n), w(n * n);
        for (size_t yy = 0; yy < n; ++yy) {
          double m = 0.0;
          for (size_t k = 0; k < n; ++k) {
            t[yy * n + k] =
                k == yy ? 0.0
                        : (mu[k] - mu[yy]) /
                              std::sqrt((var[k] + var[yy]) / kLogisticVariance +
                                        1.0);
            m = std::max(m, t[yy * n + k]);
          }
          double sum = 0.0;
          for (size_t k = 0; k < n; ++k) sum += std::exp(t[yy * n + k] - m);
          scores[yy] = -(m + std::log(sum));
          for (size_t k = 0; k < n; ++k)
            w[yy * n + k] = std::exp(t[yy * n + k] - m) / sum;
        }
        const double lse = logsumexp(scores);
        for (size_t yy = 0; yy < n; ++yy) {
          // dL/d score_yy
          const double gl =
              inv_b * (std::exp(scores[yy] - lse) - (yy == y ? 1.0 : 0.0));
          for (size_t k = 0; k < n; ++k) {
            if (k == yy) continue;
            const double gt = -gl * w[yy * n + k];
            const double d2 = (var[k] + var[yy]) / kLogisticVariance + 1.0;
            const double d = std::sqrt(d2);
            gm[k] += gt / d;
            gm[yy] -= gt / d;
            const double gdv =
                gt * (-t[yy * n + k] / (2.0 * d2 * kLogisticVariance));
            gv[k] += gdv;
            gv[yy] += gdv;
          }
        }
        break;
      }
      case SoftmaxApprox::normal: {
        std::vector<double> scores(n);
        for (size_t yy = 0; yy < n; ++yy) {
          double acc = 0.0;
          for (size_t k = 0; k < n; ++k) {
            if (k == yy) continue;
            acc += log_std_normal_cdf(
                (mu[yy] - mu[k]) /
                std::sqrt(var[yy] + var[k] + kLogisticVariance));
          }
          scores[yy] = acc;
        }
        const double lse = logsumexp(scores);
        for (size_t yy = 0; yy < n; ++yy) {
          const double gl =
              inv_b * (std::exp(scores[yy] - lse) - (yy == y ? 1.0 : 0.0));
          for (size_t k = 0; k < n; ++k) {
            if (k == yy) continue;
            const double e2 = var[yy] + var[k] + kLogisticVariance;
            const double e = std::sqrt(e2);
            const double u = (mu[yy] - mu[k]) / e;
            // hazard ratio pdf/cdf, computed in the log domain
            const double h = std::exp(std::log(std_normal_pdf(u)) -
                                      log_std_normal_cdf(u));
            const double gu = gl * h;
            gm[yy] += gu / e;
            gm[k] -= gu / e;
            const double gvv = gu * (-u / (2.0 * e2));
            gv[yy] += gvv;
            gv[k] += gvv;
          }
        }
        break;
      }
    }
  }
}

void linear_backward(const LayerSpec& layer, const LayerParams& p,
                     const MomentTensor& in, const Grads& gout, Grads& gin,
                     LayerParams& gp) {
  const size_t batch = in.shape[0];
  const size_t n_in = layer.in_features, n_out = layer.out_features;
  for (size_t b = 0; b < batch; ++b) {
    const double* mi = in.mean.data() + b * n_in;
    const double* vi = in.var.data() + b * n_in;
    const double* gm = gout.mean.data() + b * n_out;
    const double* gv = gout.var.data() + b * n_out;
    double* gmi = gin.mean.data() + b * n_in;
    double* gvi = gin.var.data() + b * n_in;
    for (size_t j = 0; j < n_out; ++j) {
      const double* w = p.weight.data() + j * n_in;
      double* gw = gp.weight.data() + j * n_in;
      if (!gp.bias.empty()) gp.bias[j] += gm[j];
      for (size_t i = 0; i < n_in; ++i) {
        gmi[i] += gm[j] * w[i];
        gvi[i] += gv[j] * w[i] * w[i];
        gw[i] += gm[j] * mi[i] + gv[j] * 2.0 * w[i] * vi[i];
      }
    }
  }
}

void conv2d_backward(const LayerSpec& layer, const LayerParams& p,
                     const MomentTensor& in, const Grads& gout, Grads& gin,
                     LayerParams& gp) {
  const size_t batch = in.shape[0];
  const size_t ic = layer.in_channels, h = in.shape[2], w = in.shape[3];
  const size_t k = layer.kernel, s = layer.stride, oc = layer.out_channels;
  const size_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
  const size_t in_plane = h * w, out_plane = oh * ow;

  for (size_t b = 0; b < batch; ++b) {
    for (size_t o = 0; o < oc; ++o) {
      for (size_t oy = 0; oy < oh; ++oy) {
        for (size_t ox = 0; ox < ow; ++ox) {
          const size_t oidx = ((b * oc + o) * out_plane) + oy * ow + ox;
          const double gm = gout.mean[oidx];
          const double gv = gout.var[oidx];
          if (!gp.bias.empty()) gp.bias[o] += gm;
          for (size_t c = 0; c < ic; ++c) {
            const size_t base = (b * ic + c) * in_plane + oy * s * w + ox * s;
            const double* kw = p.weight.data() + (o * ic + c) * k * k;
            double* gkw = gp.weight.data() + (o * ic + c) * k * k;
            for (size_t ky = 0; ky < k; ++ky) {
              for (size_t kx = 0; kx < k; ++kx) {
                const size_t iidx = base + ky * w + kx;
                const double wv = kw[ky * k + kx];
                gin.mean[iidx] += gm * wv;
                gin.var[iidx] += gv * wv * wv;
                gkw[ky * k + kx] +=
                    gm * in.mean[iidx] + gv * 2.0 * wv * in.var[iidx];
              }
            }
          }
        }
      }
    }
  }
}

void avgpool_backward(const LayerSpec& layer, const MomentTensor& in,
                      const Grads& gout, Grads& gin) {
  const size_t batch = in.shape[0];
  const size_t c = in.shape[1], h = in.shape[2], w = in.shape[3];
  const size_t win_h = layer.adaptive ? h : layer.window;
  const size_t win_w = layer.adaptive ? w : layer.window;
  const size_t oh = h / win_h, ow = w / win_w;
  const double inv_n = 1.0 / static_cast<double>(win_h * win_w);
  for (size_t bc = 0; bc < batch * c; ++bc) {
    for (size_t oy = 0; oy < oh; ++oy) {
      for (size_t ox = 0; ox < ow; ++ox) {
        const size_t oidx = bc * oh * ow + oy * ow + ox;
        for (size_t y = 0; y < win_h; ++y) {
          for (size_t x = 0; x < win_w; ++x) {
            const size_t iidx =
                bc * h * w + (oy * win_h + y) * w + ox * win_w + x;
            gin.mean[iidx] += gout.mean[oidx] * inv_n;
            gin.var[iidx] += gout.var[oidx] * inv_n * inv_n;
          }
        }
      }
    }
  }
}

// Replays the left-balanced max2 reduction of one window and routes the
// output gradient back through the tree.
void maxpool_window_backward(std::span<const ScalarMoments> window,
                             double gm_out, double gv_out,
                             std::span<double> gm_in, std::span<double> gv_in,
                             VarApprox var_kind) {
  std::vector<std::vector<ScalarMoments>> levels;
  levels.emplace_back(window.begin(), window.end());
  while (levels.back().size() > 1) {
    const auto& prev = levels.back();
    std::vector<ScalarMoments> next;
    next.reserve((prev.size() + 1) / 2);
    for (size_t i = 0; i + 1 < prev.size(); i += 2)
      next.push_back(max2_moments(prev[i], prev[i + 1], var_kind));
    if (prev.size() % 2 == 1) next.push_back(prev.back());
    levels.push_back(std::move(next));
  }
  std::vector<std::pair<double, double>> g{{gm_out, gv_out}};
  for (size_t li = levels.size(); li-- > 1;) {
    const auto& prev = levels[li - 1];
    std::vector<std::pair<double, double>> gprev(prev.size(), {0.0, 0.0});
    size_t gi = 0;
    for (size_t i = 0; i + 1 < prev.size(); i += 2, ++gi) {
      const Max2Jacobian j = max2_jacobian(prev[i], prev[i + 1], var_kind);
      const auto [gm, gv] = g[gi];
      gprev[i].first += gm * j.a.m_m + gv * j.a.v_m;
      gprev[i].second += gm * j.a.m_v + gv * j.a.v_v;
      gprev[i + 1].first += gm * j.b.m_m + gv * j.b.v_m;
      gprev[i + 1].second += gm * j.b.m_v + gv * j.b.v_v;
    }
    if (prev.size() % 2 == 1) gprev.back() = g[gi];
    g = std::move(gprev);
  }
  for (size_t i = 0; i < window.size(); ++i) {
    gm_in[i] += g[i].first;
    gv_in[i] += g[i].second;
  }
}

void maxpool_backward(const LayerSpec& layer, const MomentTensor& in,
                      const Grads& gout, Grads& gin, PropMode mode) {
  const size_t batch = in.shape[0];
  const size_t c = in.shape[1], h = in.shape[2], w = in.shape[3];
  const size_t win_h = layer.adaptive ? h : layer.window;
  const size_t win_w = layer.adaptive ? w : layer.window;
  const size_t oh = h / win_h, ow = w / win_w;
  std::vector<ScalarMoments> window(win_h * win_w);
  std::vector<double> gm_win(window.size()), gv_win(window.size());
  for (size_t bc = 0; bc < batch * c; ++bc) {
    for (size_t oy = 0; oy < oh; ++oy) {
      for (size_t ox = 0; ox < ow; ++ox) {
        const size_t oidx = bc * oh * ow + oy * ow + ox;
        if (mode == PropMode::sample || mode == PropMode::ap1) {
          // route to the argmax of the recorded input means
          size_t best = 0;
          double best_m = -std::numeric_limits<double>::infinity();
          for (size_t y = 0; y < win_h; ++y) {
            for (size_t x = 0; x < win_w; ++x) {
              const size_t iidx =
                  bc * h * w + (oy * win_h + y) * w + ox * win_w + x;
              if (in.mean[iidx] > best_m) {
                best_m = in.mean[iidx];
                best = iidx;
              }
            }
          }
          gin.mean[best] += gout.mean[oidx];
          continue;
        }
        for (size_t y = 0; y < win_h; ++y)
          for (size_t x = 0; x < win_w; ++x) {
            const size_t iidx =
                bc * h * w + (oy * win_h + y) * w + ox * win_w + x;
            window[y * win_w + x] = {in.mean[iidx], in.var[iidx]};
          }
        std::fill(gm_win.begin(), gm_win.end(), 0.0);
        std::fill(gv_win.begin(), gv_win.end(), 0.0);
        maxpool_window_backward(window, gout.mean[oidx], gout.var[oidx],
                                gm_win, gv_win,
                                VarApprox::exact);
        for (size_t y = 0; y < win_h; ++y)
          for (size_t x = 0; x < win_w; ++x) {
            const size_t iidx =
                bc * h * w + (oy * win_h + y) * w + ox * win_w + x;
            gin.mean[iidx] += gm_win[y * win_w + x];
            gin.var[iidx] += gv_win[y * win_w + x];
          }
      }
    }
  }
}

// Pathwise slope of the sampled activation at pre-activation x. Hard
// threshold units have zero slope almost everywhere.
double sample_activation_slope(const ActivationSpec& act, double x) {
  switch (act.kind) {
    case ActKind::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case ActKind::lrelu:
      return x > 0.0 ? 1.0 : act.alpha;
    case ActKind::logistic_transform:
      return logistic_sigmoid_deriv(x);
    case ActKind::normal_cdf:
      return std_normal_pdf(x);
    case ActKind::abs_value:
      return x > 0.0 ? 1.0 : -1.0;
    case ActKind::heaviside:
    case ActKind::logistic_bernoulli:
    case ActKind::probit:
      return 0.0;
  }
  return 0.0;
}

}  // namespace

GradientBundle backward(const NetworkConfig& cfg, const NetworkParams& params,
                        const ForwardTrace& trace, std::span<const int> labels,
                        PropMode mode, bool dropout_active) {
  if (trace.layer_outputs.size() != cfg.layers.size())
    throw std::invalid_argument("backward: trace does not match config");
  if (cfg.layers.empty() || cfg.layers.back().kind != LayerKind::softmax_head)
    throw std::invalid_argument("backward: network must end in softmax_head");
  if (trace.posterior.empty())
    throw std::invalid_argument("backward: missing recorded posterior");

  GradientBundle bundle;
  bundle.params = zero_params_like(cfg);

  const size_t n_layers = cfg.layers.size();
  auto layer_input = [&](size_t i) -> const MomentTensor& {
    return i == 0 ? trace.input : trace.layer_outputs[i - 1];
  };

  // gradient w.r.t. the head input
  const MomentTensor& head_in = layer_input(n_layers - 1);
  Grads g(head_in.size());
  softmax_head_backward(cfg.layers[n_layers - 1], head_in, labels, mode,
                        trace.posterior, g);

  for (size_t li = n_layers - 1; li-- > 0;) {
    const LayerSpec& layer = cfg.layers[li];
    const MomentTensor& in = layer_input(li);
    Grads gin(in.size());
    switch (layer.kind) {
      case LayerKind::linear:
        linear_backward(layer, params[li], in, g, gin, bundle.params[li]);
        break;
      case LayerKind::conv2d:
        conv2d_backward(layer, params[li], in, g, gin, bundle.params[li]);
        break;
      case LayerKind::activation: {
        if (mode == PropMode::sample) {
          for (size_t i = 0; i < in.size(); ++i)
            gin.mean[i] =
                g.mean[i] * sample_activation_slope(layer.act, in.mean[i]);
        } else {
          for (size_t i = 0; i < in.size(); ++i) {
            const MomentJacobian j =
                activation_jacobian(layer.act, {in.mean[i], in.var[i]});
            gin.mean[i] = g.mean[i] * j.m_m + g.var[i] * j.v_m;
            gin.var[i] = g.mean[i] * j.m_v + g.var[i] * j.v_v;
          }
        }
        break;
      }
      case LayerKind::dropout: {
        if (!dropout_active) {
          gin = g;
        } else if (mode == PropMode::sample) {
          const auto& mask = trace.dropout_masks[li];
          for (size_t i = 0; i < in.size(); ++i)
            gin.mean[i] = g.mean[i] * mask[i];
        } else {
          for (size_t i = 0; i < in.size(); ++i) {
            const MomentJacobian j = dropout_jacobian(
                {in.mean[i], in.var[i]}, layer.drop_prob, layer.rescale);
            gin.mean[i] = g.mean[i] * j.m_m + g.var[i] * j.v_m;
            gin.var[i] = g.mean[i] * j.m_v + g.var[i] * j.v_v;
          }
        }
        break;
      }
      case LayerKind::avgpool:
        avgpool_backward(layer, in, g, gin);
        break;
      case LayerKind::maxpool:
        maxpool_backward(layer, in, g, gin, mode);
        break;
      case LayerKind::normalize:
        gin = g;
        break;
      case LayerKind::softmax_head:
        throw std::invalid_argument("backward: unexpected inner softmax head");
    }
    if (mode != PropMode::ap2) gin.var.assign(gin.var.size(), 0.0);
    g = std::move(gin);
  }

  bundle.input = MomentTensor(trace.input.shape);
  bundle.input.mean = std::move(g.mean);
  bundle.input.var = std::move(g.var);
  return bundle;
}

}  // namespace momentflow
