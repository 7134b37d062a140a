#ifndef FKLBOOST_HARNESS_HPP
#define FKLBOOST_HARNESS_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fklboost/boost.hpp"
#include "fklboost/hmc.hpp"
#include "fklboost/mixture.hpp"
#include "fklboost/targets.hpp"

namespace fklboost {

// ---------------------------------------------------------------------------
// Oracles and metrics

/// Trapezoid quadrature of p (log p - log q) over a uniform 1-D grid. The
/// target must be normalized. Errors if the proposal's mass inside the grid
/// falls short of 1 by more than 1e-4 (widen the grid).
double exact_fkl_quadrature_1d(const std::function<double(double)>& target_logp,
                               const MixtureProposal& q, double lo = -200.0, double hi = 200.0,
                               std::size_t n = 2000001);

/// Plain Monte Carlo FKL for exactly sampleable, normalized targets:
/// mean of log p(x) - log q(x) over x ~ p.
double exact_fkl_mc(const std::function<Vec(Rng&)>& p_sampler,
                    const std::function<double(const Vec&)>& p_logpdf, const MixtureProposal& q,
                    std::size_t n, std::uint64_t seed);

/// Draw n samples from q, SNIS-reweight against the target, and return the
/// summed squared error of the estimated mean and diagonal variance.
double moment_mse(const MixtureProposal& q, const Target& target, const Vec& true_mean,
                  const Vec& true_cov_diag, std::size_t n, std::uint64_t seed);

/// SNIS-weighted posterior mean from a proposal, as a convenience.
Vec snis_posterior_mean(const MixtureProposal& q, const Target& target, std::size_t n,
                        std::uint64_t seed);

/// log p(y | x, theta) for a regression model, for predictive evaluation.
using BlrLoglik = std::function<double(const Eigen::RowVectorXd& x, double y, const Vec& theta)>;

/// log sum_s w_s p(y | x, theta_s), computed by log-sum-exp. Pass uniform
/// weights for the direct variational / MCMC average.
double posterior_predictive_logprob(const Eigen::RowVectorXd& x, double y,
                                    const std::vector<Vec>& thetas, const Vec& weights,
                                    const BlrLoglik& model);

/// Mean predictive log probability over a test set.
double mean_predictive_logprob(const BlrDataset& test, const std::vector<Vec>& thetas,
                               const Vec& weights, const BlrLoglik& model);

/// Closed-form Gaussian posterior for fixed-hyperparameter BLR.
struct ConjugateBlr {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double alpha = 1.0;
  double tau = 1.0;
};

ConjugateBlr conjugate_blr_posterior(const BlrDataset& data, double alpha, double tau);
double conjugate_predictive_logprob(const ConjugateBlr& post, const Eigen::RowVectorXd& x,
                                    double y);

/// Stabilized log-residual values of target vs proposal over a square grid,
/// row-major, n_side points per axis.
Vec residual_grid(const Target& target, const MixtureProposal& q, double lo, double hi,
                  int n_side);

// ---------------------------------------------------------------------------
// Experiment drivers

struct CurveRow {
  std::string method;
  std::uint64_t seed = 0;
  int k = 0;
  std::string metric;
  double value = 0.0;
};

struct ExperimentResult {
  std::string method;
  Vec per_split;
  double mean = 0.0;
  double stderr_ = 0.0;
};

ExperimentResult aggregate(std::string method, Vec per_split);

/// Quadrature FKL against the standard Cauchy for FKL and RKL boosting,
/// per seed and boosting size. Each (seed, k) point is a fresh run.
std::vector<CurveRow> run_cauchy_experiment(const BoostConfig& base, int n_seeds,
                                            const std::vector<int>& ks);

/// Exact-sample FKL, moment MSE and max stabilized log-residual on the
/// GMM-20 target for FKL boosting. When `seed0_grids` is given, the full
/// 200x200 residual grid over [-2, 12]^2 for the first seed is stored per k.
std::vector<CurveRow> run_gmm20_experiment(const BoostConfig& base, const Gmm20Spec& spec,
                                           int n_seeds, const std::vector<int>& ks,
                                           std::size_t eval_samples,
                                           std::map<int, Vec>* seed0_grids = nullptr);

enum class BlrPrior { gaussian, heavy };

struct BlrExperimentConfig {
  BlrPrior prior = BlrPrior::gaussian;
  std::vector<std::string> methods;  // rkl_vi, fkl_vi, rkl_vb_2, fkl_vb_3, hmc, ...
  int n_splits = 20;
  std::size_t eval_samples = 6000;
  std::uint64_t heavy_seed = 1234;  // seed for the Student-t scale matrix draw
  int jobs = 1;
  std::string hmc_dump_dir;  // when set, HMC draws land in <dir>/hmc_split<i>.csv
};

struct BlrSplitRow {
  std::string method;
  int split = 0;
  std::string metric;
  double value = 0.0;
};

/// Fits every method on each train split and scores mean predictive log
/// probability on the matching test split. HMC uses uniform weights; the
/// variational methods use self-normalized importance weights.
std::vector<ExperimentResult> run_blr_experiment(const RawDataset& raw,
                                                 const BlrExperimentConfig& cfg,
                                                 const BoostConfig& boost_base,
                                                 const HmcConfig& hmc_base,
                                                 std::vector<BlrSplitRow>* split_rows = nullptr);

/// Deterministic synthetic regression table: y = X w + noise.
RawDataset make_synthetic_linear_dataset(int n, int d, double noise_sd, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Output helpers (atomic write-then-rename)

void write_text_atomic(const std::string& path, const std::string& content);
std::string curve_rows_to_csv(const std::vector<CurveRow>& rows);
std::string split_rows_to_csv(const std::vector<BlrSplitRow>& rows);
std::string results_to_json(const std::vector<ExperimentResult>& results, int n_splits);

}  // namespace fklboost

#endif  // FKLBOOST_HARNESS_HPP
