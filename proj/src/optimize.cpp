#include "fklboost/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fklboost/snis.hpp"

namespace fklboost {

namespace {

double floored(double s) { return std::max(std::fabs(s), kScaleFloor); }

double scale_sign(double s) {
  if (std::fabs(s) < kScaleFloor) return 0.0;  // flat region of the floor
  return s < 0.0 ? -1.0 : 1.0;
}

/// log f(mean + |s| eps) as a function of the parameters, for fixed eps.
/// The location cancels, so only the -log|s_d| terms carry parameter
/// dependence; d/d mean = 0 and d/d s_d = -sign(s_d)/|s_d|.
double reparam_log_pdf(const Component& f, const Vec& eps) {
  constexpr double kLogTwoPi = 1.8378770664093453;
  const int d = f.dim();
  double acc = 0.0;
  if (f.kind == ComponentKind::gaussian) {
    for (int i = 0; i < d; ++i)
      acc += -0.5 * kLogTwoPi - std::log(floored(f.root_scale[i])) - 0.5 * eps[i] * eps[i];
  } else {
    const double ln = std::lgamma(0.5 * (f.nu + 1.0)) - std::lgamma(0.5 * f.nu) -
                      0.5 * std::log(f.nu * M_PI);
    for (int i = 0; i < d; ++i)
      acc += ln - std::log(floored(f.root_scale[i])) -
             0.5 * (f.nu + 1.0) * std::log1p(eps[i] * eps[i] / f.nu);
  }
  return acc;
}

Vec reparam_point(const Component& f, const Vec& eps) {
  const int d = f.dim();
  Vec x(d);
  for (int i = 0; i < d; ++i) x[i] = f.mean[i] + floored(f.root_scale[i]) * eps[i];
  return x;
}

}  // namespace

AdamState make_adam(Vec params, double lr) {
  AdamState st;
  st.m.assign(params.size(), 0.0);
  st.v.assign(params.size(), 0.0);
  st.params = std::move(params);
  st.lr = lr;
  return st;
}

AdamState adam_step(AdamState state, const Vec& grad) {
  if (grad.size() != state.params.size())
    throw config_error("adam_step: gradient length mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw numerical_error("adam_step: non-finite gradient at index " + std::to_string(i));
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    state.params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
  return state;
}

GradientBundle boost_objective_grad(const WeightedBatch& batch, const Component& f,
                                    double gamma_logit) {
  const std::size_t n = batch.size();
  if (batch.norm_weights.size() != n)
    throw config_error("boost_objective_grad: batch weights missing");
  const int d = f.dim();
  const double gamma = sigmoid(gamma_logit);
  const double log_g = log_sigmoid(gamma_logit);
  const double log_1mg = log_sigmoid(-gamma_logit);

  GradientBundle grad;
  grad.d_mean.assign(d, 0.0);
  grad.d_root_scale.assign(d, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const Vec& x = batch.points[s];
    const double lf = component_log_pdf(f, x);
    const double lq = batch.log_q[s];
    const double lm = log_sum_exp(log_g + lf, log_1mg + lq);
    // gamma f / m, computed in log space.
    const double a = std::exp(log_g + lf - lm);
    // All objective terms are -w_s log m_s, so each block carries a minus.
    accumulate_component_param_grad(f, x, -batch.norm_weights[s] * a, grad.d_mean,
                                    grad.d_root_scale);
    // (f - q)/m * gamma(1-gamma); both pieces bounded by construction.
    const double t1 = std::exp(lf - lm + log_g + log_1mg);
    const double t2 = std::exp(lq - lm + log_g + log_1mg);
    grad.d_gamma_logit -= batch.norm_weights[s] * (t1 - t2);
  }
  return grad;
}

std::vector<Vec> draw_component_noise(ComponentKind kind, double nu, std::size_t n, int dim,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec> eps(n, Vec(dim));
  for (std::size_t s = 0; s < n; ++s)
    for (int i = 0; i < dim; ++i)
      eps[s][i] = kind == ComponentKind::gaussian ? rng.normal() : rng.student_t(nu);
  if (kind == ComponentKind::gaussian && n >= 2) {
    for (int i = 0; i < dim; ++i) {
      double mean = 0.0;
      for (std::size_t s = 0; s < n; ++s) mean += eps[s][i];
      mean /= static_cast<double>(n);
      double second = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        eps[s][i] -= mean;
        second += eps[s][i] * eps[s][i];
      }
      const double scale = std::sqrt(second / static_cast<double>(n));
      if (scale > 0.0)
        for (std::size_t s = 0; s < n; ++s) eps[s][i] /= scale;
    }
  }
  return eps;
}

std::pair<double, GradientBundle> rkl_objective_and_grad(const Target& target, const Component& f,
                                                         const std::vector<Vec>& noise) {
  const std::size_t n = noise.size();
  if (n == 0) throw config_error("rkl_objective_and_grad: no noise draws");
  const int d = f.dim();
  const double inv_n = 1.0 / static_cast<double>(n);

  double objective = 0.0;
  GradientBundle grad;
  grad.d_mean.assign(d, 0.0);
  grad.d_root_scale.assign(d, 0.0);
  for (const Vec& eps : noise) {
    const Vec x = reparam_point(f, eps);
    objective += inv_n * (reparam_log_pdf(f, eps) - target.log_density(x));
    const Vec gp = target.grad_log_density(x);
    for (int i = 0; i < d; ++i) {
      const double sg = scale_sign(f.root_scale[i]);
      grad.d_mean[i] -= inv_n * gp[i];
      grad.d_root_scale[i] -= inv_n * gp[i] * sg * eps[i];
    }
  }
  for (int i = 0; i < d; ++i)
    grad.d_root_scale[i] -= scale_sign(f.root_scale[i]) / floored(f.root_scale[i]);
  return {objective, grad};
}

std::pair<double, GradientBundle> selfsample_fkl_grad(const Target& target, const Component& f,
                                                      const std::vector<Vec>& noise) {
  const std::size_t n = noise.size();
  if (n == 0) throw config_error("selfsample_fkl_grad: no noise draws");
  const int d = f.dim();

  Vec log_p(n), log_f(n);
  std::vector<Vec> grads_p(n);
  std::vector<Vec> points(n);
  for (std::size_t s = 0; s < n; ++s) {
    points[s] = reparam_point(f, noise[s]);
    log_p[s] = target.log_density(points[s]);
    log_f[s] = reparam_log_pdf(f, noise[s]);
    grads_p[s] = target.grad_log_density(points[s]);
  }
  const Vec w = stable_normalized_weights(log_p, log_f);
  double raw = 0.0;
  for (std::size_t s = 0; s < n; ++s) raw += w[s] * (log_p[s] - log_f[s]);
  const double objective = raw - snis_log_normalizer(log_p, log_f);

  // d/d eta [sum w_s l_s - lse(l) + log S] with w = softmax(l) collapses to
  // sum w_s (l_s - raw) dl_s; exactly zero when all ratios agree.
  GradientBundle grad;
  grad.d_mean.assign(d, 0.0);
  grad.d_root_scale.assign(d, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const double coeff = w[s] * ((log_p[s] - log_f[s]) - raw);
    for (int i = 0; i < d; ++i) {
      const double sg = scale_sign(f.root_scale[i]);
      const double dl_dmean = grads_p[s][i];
      const double dl_dscale = grads_p[s][i] * sg * noise[s][i] + sg / floored(f.root_scale[i]);
      grad.d_mean[i] += coeff * dl_dmean;
      grad.d_root_scale[i] += coeff * dl_dscale;
    }
  }
  return {objective, grad};
}

Vec weight_grad_fkl(const MixtureProposal& q, const WeightedBatch& batch) {
  const std::size_t n = batch.size();
  if (batch.norm_weights.size() != n) throw config_error("weight_grad_fkl: batch weights missing");
  Vec grad(q.size(), 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const double lq = batch.log_q[s];
    for (std::size_t k = 0; k < q.size(); ++k) {
      const double lf = component_log_pdf(q.components[k], batch.points[s]);
      grad[k] -= batch.norm_weights[s] * std::exp(lf - lq);
    }
  }
  return grad;
}

Vec project_simplex(const Vec& v) {
  if (v.empty()) throw config_error("project_simplex: empty vector");
  if (!all_finite(v)) throw numerical_error("project_simplex: non-finite input");
  Vec sorted = v;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double cum = 0.0;
  double tau = 0.0;
  int rho = 0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cum += sorted[j];
    const double cand = (cum - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - cand > 0.0) {
      rho = static_cast<int>(j + 1);
      tau = cand;
    }
  }
  (void)rho;
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - tau, 0.0);
  // Defensive renormalization keeps the simplex invariant exact.
  double total = std::accumulate(out.begin(), out.end(), 0.0);
  for (double& x : out) x /= total;
  return out;
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  Vec p = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double hi = f(p);
    p[i] = orig - h;
    const double lo = f(p);
    p[i] = orig;
    g[i] = (hi - lo) / (2.0 * h);
  }
  return g;
}

}  // namespace fklboost
