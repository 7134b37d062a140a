#ifndef FKLBOOST_OPTIMIZE_HPP
#define FKLBOOST_OPTIMIZE_HPP

#include <functional>
#include <utility>

#include "fklboost/common.hpp"
#include "fklboost/mixture.hpp"
#include "fklboost/targets.hpp"

namespace fklboost {

struct AdamState {
  Vec params;
  Vec m;
  Vec v;
  long t = 0;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam(Vec params, double lr);

/// One bias-corrected ADAM update; throws numerical_error naming the first
/// non-finite gradient entry.
AdamState adam_step(AdamState state, const Vec& grad);

/// Gradient blocks of the boosting objective with respect to the new
/// component's parameters and the logit of its mixture weight.
struct GradientBundle {
  Vec d_mean;
  Vec d_root_scale;
  double d_gamma_logit = 0.0;
};

/// Gradient of snis_boost_objective at gamma = sigmoid(gamma_logit). Batch
/// weights are treated as constants (they come from q_{i-1}).
GradientBundle boost_objective_grad(const WeightedBatch& batch, const Component& f,
                                    double gamma_logit);

/// Fixed standardized noise for the reparameterization path. Normal noise is
/// centered and rescaled to unit second moment per dimension (n >= 2) so the
/// seeded objectives are stationary exactly where their populations are.
std::vector<Vec> draw_component_noise(ComponentKind kind, double nu, std::size_t n, int dim,
                                      std::uint64_t seed);

/// Monte Carlo reverse-KL objective (1/S) sum[log f(theta_s) - log p(theta_s)]
/// with theta_s = mean + |root_scale| * eps_s, plus its exact gradient.
std::pair<double, GradientBundle> rkl_objective_and_grad(const Target& target, const Component& f,
                                                         const std::vector<Vec>& noise);

/// Self-sampled SNIS forward-KL objective and its exact total derivative
/// through the samples, the normalized weights, and the log-ratios.
std::pair<double, GradientBundle> selfsample_fkl_grad(const Target& target, const Component& f,
                                                      const std::vector<Vec>& noise);

/// SNIS estimate of d KL(p||q) / d lambda_i = -E_p[f_i / q]; the batch's
/// weights must have been computed against the full mixture q.
Vec weight_grad_fkl(const MixtureProposal& q, const WeightedBatch& batch);

/// Euclidean projection onto the probability simplex (sort and threshold).
Vec project_simplex(const Vec& v);

/// Central differences per coordinate with step h.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h);

}  // namespace fklboost

#endif  // FKLBOOST_OPTIMIZE_HPP
