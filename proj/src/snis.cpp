#include "fklboost/snis.hpp"

#include <cmath>

namespace fklboost {

Vec stable_normalized_weights(const Vec& log_p, const Vec& log_q) {
  const std::size_t n = log_p.size();
  if (n == 0) throw config_error("stable_normalized_weights: empty batch");
  if (log_q.size() != n)
    throw config_error("stable_normalized_weights: log_p/log_q length mismatch");
  double d_max = kNegInf;
  for (std::size_t s = 0; s < n; ++s) d_max = std::max(d_max, log_p[s] - log_q[s]);
  Vec w(n);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    w[s] = std::exp(log_p[s] - log_q[s] - d_max);
    total += w[s];
  }
  for (double& x : w) x /= total;
  return w;
}

/// SNIS estimate of the target's log-normalizer, log((1/S) sum p/q).
/// Subtracting it from the raw ratio average makes the KL estimate exactly
/// invariant to constant shifts of the unnormalized log target.
double snis_log_normalizer(const Vec& log_p, const Vec& log_q) {
  Vec ratios(log_p.size());
  for (std::size_t s = 0; s < log_p.size(); ++s) ratios[s] = log_p[s] - log_q[s];
  return log_sum_exp(ratios) - std::log(static_cast<double>(log_p.size()));
}

FklEstimate snis_fkl(const WeightedBatch& batch) {
  const std::size_t n = batch.size();
  if (batch.log_p.size() != n || batch.log_q.size() != n)
    throw config_error("snis_fkl: batch is incomplete");
  const Vec w = batch.norm_weights.size() == n
                    ? batch.norm_weights
                    : stable_normalized_weights(batch.log_p, batch.log_q);
  FklEstimate est;
  est.max_log_ratio = kNegInf;
  double sq = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double lr = batch.log_p[s] - batch.log_q[s];
    est.value += w[s] * lr;
    est.max_log_ratio = std::max(est.max_log_ratio, lr);
    sq += w[s] * w[s];
  }
  est.value -= snis_log_normalizer(batch.log_p, batch.log_q);
  est.ess = 1.0 / sq;
  return est;
}

double snis_boost_objective(const WeightedBatch& batch, const Component& f, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw config_error("snis_boost_objective: gamma must lie in [0, 1]");
  const std::size_t n = batch.size();
  if (batch.norm_weights.size() != n)
    throw config_error("snis_boost_objective: batch weights missing");
  const double log_g = gamma > 0.0 ? std::log(gamma) : kNegInf;
  const double log_1mg = gamma < 1.0 ? std::log1p(-gamma) : kNegInf;
  double acc = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double log_mix =
        log_sum_exp(log_g + component_log_pdf(f, batch.points[s]), log_1mg + batch.log_q[s]);
    acc += batch.norm_weights[s] * (batch.log_p[s] - log_mix);
  }
  // Same normalizer correction as snis_fkl; constant in (f, gamma), so it
  // leaves the gradients untouched and keeps the gamma = 0 identity exact.
  return acc - snis_log_normalizer(batch.log_p, batch.log_q);
}

double snis_expectation(const Vec& f_values, const Vec& weights) {
  if (f_values.size() != weights.size())
    throw config_error("snis_expectation: length mismatch");
  double acc = 0.0;
  for (std::size_t s = 0; s < f_values.size(); ++s) acc += weights[s] * f_values[s];
  return acc;
}

double ess(const Vec& weights) {
  double sq = 0.0;
  for (double w : weights) sq += w * w;
  return 1.0 / sq;
}

double stabilized_log_residual(double log_p, double log_q, double log_eps) {
  return log_sum_exp(log_p, log_eps) - log_sum_exp(log_q, log_eps);
}

}  // namespace fklboost
