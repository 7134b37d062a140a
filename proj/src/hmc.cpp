#include "fklboost/hmc.hpp"

#include <algorithm>
#include <cmath>

namespace fklboost {

namespace {

void require(bool ok, const char* field) {
  if (!ok) throw config_error(std::string("hmc config: invalid value for '") + field + "'");
}

/// Dual averaging of Hoffman & Gelman (2014) against a target statistic.
struct DualAverage {
  double mu;
  double log_eps;
  double log_eps_bar = 0.0;
  double h_bar = 0.0;
  double delta;
  double gamma = 0.05;
  double t0 = 10.0;
  double kappa = 0.75;
  long m = 0;

  DualAverage(double eps0, double target)
      : mu(std::log(10.0 * eps0)), log_eps(std::log(eps0)), delta(target) {}

  void update(double alpha) {
    m += 1;
    const double md = static_cast<double>(m);
    const double frac = 1.0 / (md + t0);
    h_bar = (1.0 - frac) * h_bar + frac * (delta - alpha);
    log_eps = mu - std::sqrt(md) / gamma * h_bar;
    const double eta = std::pow(md, -kappa);
    log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar;
  }

  double current() const { return std::exp(log_eps); }
  double averaged() const { return std::exp(log_eps_bar); }
};

struct ChainOutput {
  std::vector<Vec> samples;
  double accept_rate = 0.0;
  double step_size = 0.0;
};

ChainOutput run_chain(const Target& target, const HmcConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const int d = target.dim;
  Vec theta(d);
  for (int i = 0; i < d; ++i) theta[i] = cfg.init_sigma * rng.normal();
  double log_p = target.log_density(theta);

  DualAverage da(cfg.step_size, cfg.target_accept);
  double eps = cfg.step_size;
  const int total = cfg.burn_in + cfg.n_samples;
  long burn_accepts = 0;
  long kept_accepts = 0;

  ChainOutput out;
  out.samples.reserve(cfg.n_samples);
  for (int iter = 0; iter < total; ++iter) {
    Vec rho(d);
    for (int i = 0; i < d; ++i) rho[i] = rng.normal();
    double kin0 = 0.5 * dot(rho, rho);

    const auto prop = leapfrog(theta, rho, eps, cfg.leapfrog_steps, target.grad_log_density);
    double alpha = 0.0;
    bool accept = false;
    if (prop) {
      const double log_p_new = target.log_density(prop->first);
      const double kin1 = 0.5 * dot(prop->second, prop->second);
      const double log_ratio = (log_p_new - kin1) - (log_p - kin0);
      if (std::isfinite(log_ratio)) {
        alpha = std::min(1.0, std::exp(log_ratio));
        accept = std::log(rng.uniform_pos()) < log_ratio;
        if (accept) {
          theta = prop->first;
          log_p = log_p_new;
        }
      }
    }

    if (iter < cfg.burn_in) {
      burn_accepts += accept ? 1 : 0;
      if (cfg.adapt && iter < cfg.adapt_steps) {
        da.update(alpha);
        eps = iter + 1 < cfg.adapt_steps ? da.current() : da.averaged();
      }
      if (iter + 1 == cfg.burn_in && cfg.burn_in >= 100 &&
          static_cast<double>(burn_accepts) / cfg.burn_in < 0.01)
        throw numerical_error("hmc_sample: acceptance rate below 1% during burn-in");
    } else {
      kept_accepts += accept ? 1 : 0;
      out.samples.push_back(theta);
    }
  }
  out.accept_rate = cfg.n_samples > 0 ? static_cast<double>(kept_accepts) / cfg.n_samples : 0.0;
  out.step_size = eps;
  return out;
}

}  // namespace

void HmcConfig::validate() const {
  require(step_size > 0.0, "step_size");
  require(leapfrog_steps >= 0, "leapfrog_steps");
  require(burn_in >= 0, "burn_in");
  require(adapt_steps >= 0, "adapt_steps");
  require(adapt_steps <= burn_in, "adapt_steps");
  require(n_samples >= 1, "n_samples");
  require(n_chains == 1 || n_chains == 3, "n_chains");
  require(target_accept > 0.0 && target_accept < 1.0, "target_accept");
  require(init_sigma > 0.0, "init_sigma");
}

std::optional<std::pair<Vec, Vec>> leapfrog(const Vec& position, const Vec& momentum,
                                            double step, int n_steps,
                                            const std::function<Vec(const Vec&)>& grad) {
  Vec theta = position;
  Vec rho = momentum;
  if (n_steps == 0) return std::make_pair(theta, rho);
  const std::size_t d = theta.size();

  Vec g = grad(theta);
  if (!all_finite(g)) return std::nullopt;
  for (std::size_t i = 0; i < d; ++i) rho[i] += 0.5 * step * g[i];
  for (int l = 0; l < n_steps; ++l) {
    for (std::size_t i = 0; i < d; ++i) theta[i] += step * rho[i];
    if (!all_finite(theta)) return std::nullopt;
    g = grad(theta);
    if (!all_finite(g)) return std::nullopt;
    const double w = l + 1 < n_steps ? step : 0.5 * step;
    for (std::size_t i = 0; i < d; ++i) rho[i] += w * g[i];
  }
  if (!all_finite(rho)) return std::nullopt;
  return std::make_pair(theta, rho);
}

HmcResult hmc_sample(const Target& target, const HmcConfig& cfg) {
  cfg.validate();
  HmcResult result;
  result.samples.reserve(static_cast<std::size_t>(cfg.n_chains) * cfg.n_samples);
  for (int c = 0; c < cfg.n_chains; ++c) {
    ChainOutput chain = run_chain(target, cfg, derive_seed(cfg.seed, static_cast<std::uint64_t>(c)));
    result.accept_rate += chain.accept_rate / cfg.n_chains;
    result.step_size += chain.step_size / cfg.n_chains;
    for (Vec& s : chain.samples) result.samples.push_back(std::move(s));
  }
  return result;
}

}  // namespace fklboost
