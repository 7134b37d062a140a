#ifndef FKLBOOST_BOOST_HPP
#define FKLBOOST_BOOST_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fklboost/common.hpp"
#include "fklboost/mixture.hpp"
#include "fklboost/optimize.hpp"
#include "fklboost/targets.hpp"

namespace fklboost {

/// Which divergence drives component fitting for iterations >= 2 (and the
/// K=1 VI fit).
enum class Divergence { fkl, rkl };

struct BoostConfig {
  int k = 3;
  Divergence divergence = Divergence::fkl;
  int steps_per_component = 400;
  int samples_per_batch = 100;
  double lr_mean = 0.01;
  double lr_scale = 0.01;
  double lr_gamma = 0.01;
  double lr_weights = 0.05;
  double init_sigma = 0.001;
  int init_heuristic_steps = 400;
  double init_heuristic_lr = 0.05;
  int rkl_warmstart_steps = 100;
  int weight_search_steps = 150;
  int weight_search_rounds = 5;  // fresh batch per round; kills the pull toward the sampling weights
  ComponentKind component_kind = ComponentKind::gaussian;
  double nu = 5.0;  // student_t components only
  std::uint64_t seed = 1;

  void validate() const;  // throws config_error naming the offending field
};

struct IterationRecord {
  int iteration = 0;
  double snis_fkl = 0.0;
  std::optional<double> exact_fkl;
  double ess = 0.0;
  double gamma = 0.0;
  Vec weights;
  double objective_before = 0.0;  // batch SNIS FKL entering the iteration
  double objective_after = 0.0;   // accepted boosting objective
  double batch_ess = 0.0;
  bool low_ess_warning = false;
  double wallclock_ms = 0.0;
};

struct FitReport {
  std::vector<IterationRecord> iterations;
};

std::string report_to_json(const FitReport& report);

/// Single-component reverse-KL VI fit (mean init 0, root scales ~ N(0, sigma^2)).
Component fit_rkl_vi(const Target& target, const BoostConfig& cfg);

/// RKL warm start followed by self-sampled forward-KL refinement.
Component fit_fkl_vi(const Target& target, const BoostConfig& cfg);

/// Residual-mode heuristic: ascend log p - log q_prev from a draw of q_prev,
/// one point per step; restarts (at most 5) on a non-finite trajectory.
Vec init_new_component(const Target& target, const MixtureProposal& q_prev,
                       const BoostConfig& cfg, std::uint64_t seed);

/// Fit a new component and its mixture weight jointly on one reused batch
/// from q_prev, tracking the best objective seen.
std::pair<Component, double> fit_fkl_component(const Target& target,
                                               const MixtureProposal& q_prev,
                                               const BoostConfig& cfg, std::uint64_t seed,
                                               IterationRecord* record = nullptr);

/// Reverse-KL boosting baseline: entropy-regularized fit of the new
/// component to the remainder p / q_prev; the returned weight (0.5) is a
/// placeholder for the fully-corrective search that follows.
std::pair<Component, double> fit_rkl_component(const Target& target,
                                               const MixtureProposal& q_prev,
                                               const BoostConfig& cfg, std::uint64_t seed,
                                               IterationRecord* record = nullptr);

/// Projected-gradient re-optimization of all mixture weights on a fresh
/// batch; step size halves whenever the objective would increase, so the
/// recorded trace is non-increasing. `trace` (optional) receives the
/// objective after every accepted step.
MixtureProposal fully_corrective_weights(const Target& target, const MixtureProposal& q,
                                         const BoostConfig& cfg, std::uint64_t seed,
                                         Vec* trace = nullptr);

/// Observer invoked with the proposal after each boosting iteration
/// (component count, current mixture); used to trace metric curves from a
/// single run.
using BoostObserver = std::function<void(int, const MixtureProposal&)>;

/// Full K-iteration boosting loop.
std::pair<MixtureProposal, FitReport> boost(const Target& target, const BoostConfig& cfg,
                                            const BoostObserver& on_iteration = {});

}  // namespace fklboost

#endif  // FKLBOOST_BOOST_HPP
