#ifndef FKLBOOST_SNIS_HPP
#define FKLBOOST_SNIS_HPP

#include "fklboost/common.hpp"
#include "fklboost/mixture.hpp"

namespace fklboost {

struct FklEstimate {
  double value = 0.0;
  double ess = 0.0;
  double max_log_ratio = 0.0;
};

/// Self-normalized importance weights with the running-max stabilization:
/// w_s = exp(log_p_s - log_q_s - d_max) / sum(...). Always a simplex, never
/// overflows for finite inputs.
Vec stable_normalized_weights(const Vec& log_p, const Vec& log_q);

/// SNIS estimate of the target's log-normalizer, log((1/S) sum exp(lp - lq)).
double snis_log_normalizer(const Vec& log_p, const Vec& log_q);

/// SNIS estimate of KL(p || q) from a complete batch (log_p and log_q filled).
/// Fills/uses the batch's norm_weights if present; computes them otherwise.
FklEstimate snis_fkl(const WeightedBatch& batch);

/// SNIS estimate of KL(p || gamma f + (1 - gamma) q_prev) on a batch drawn
/// from q_prev whose weights are already normalized.
double snis_boost_objective(const WeightedBatch& batch, const Component& f, double gamma);

double snis_expectation(const Vec& f_values, const Vec& weights);

/// 1 / sum(w^2) for simplex weights.
double ess(const Vec& weights);

/// log((exp(log_p) + eps) / (exp(log_q) + eps)) with eps = exp(log_eps).
/// Diagnostic-only smoothing of the log residual; biased by construction.
double stabilized_log_residual(double log_p, double log_q, double log_eps = -10.0);

}  // namespace fklboost

#endif  // FKLBOOST_SNIS_HPP
