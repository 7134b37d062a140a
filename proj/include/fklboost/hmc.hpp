#ifndef FKLBOOST_HMC_HPP
#define FKLBOOST_HMC_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "fklboost/common.hpp"
#include "fklboost/targets.hpp"

namespace fklboost {

struct HmcConfig {
  double step_size = 1.0;
  int leapfrog_steps = 10;
  int burn_in = 1000;
  int adapt_steps = 800;  // dual averaging window, within burn-in
  int n_samples = 2000;
  int n_chains = 1;  // 1 or 3
  double target_accept = 0.75;
  double init_sigma = 0.01;
  bool adapt = true;  // false = fixed step size throughout
  std::uint64_t seed = 1;

  void validate() const;
};

struct HmcResult {
  std::vector<Vec> samples;  // n_chains * n_samples draws, chain-major
  double accept_rate = 0.0;  // over kept draws, averaged across chains
  double step_size = 0.0;    // adapted value (mean across chains)
};

/// Identity-mass leapfrog integration of (position, momentum). Returns
/// nullopt if any intermediate state goes non-finite (rejection signal).
std::optional<std::pair<Vec, Vec>> leapfrog(const Vec& position, const Vec& momentum,
                                            double step, int n_steps,
                                            const std::function<Vec(const Vec&)>& grad);

/// Metropolis-corrected HMC with dual-averaging step-size adaptation toward
/// cfg.target_accept. Chains start from N(0, init_sigma^2 I) and run
/// independently on derived seeds. Throws numerical_error if the burn-in
/// acceptance rate collapses below 1%.
HmcResult hmc_sample(const Target& target, const HmcConfig& cfg);

}  // namespace fklboost

#endif  // FKLBOOST_HMC_HPP
