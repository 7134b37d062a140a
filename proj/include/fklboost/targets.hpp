#ifndef FKLBOOST_TARGETS_HPP
#define FKLBOOST_TARGETS_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fklboost/common.hpp"

namespace fklboost {

/// Counters a target may bump during evaluation (e.g. hyperparameter
/// clamping). Shared so copies of a target report into the same sink.
struct TargetDiagnostics {
  std::atomic<std::uint64_t> clamp_events{0};
};

/// Unnormalized target log-density with analytic gradient. Immutable after
/// construction; safe to evaluate concurrently.
struct Target {
  int dim = 0;
  std::function<double(const Vec&)> log_density;
  std::function<Vec(const Vec&)> grad_log_density;
  std::shared_ptr<TargetDiagnostics> diagnostics;
};

// ---------------------------------------------------------------------------
// Simulation targets

double cauchy_log_density(const Vec& theta);
Vec cauchy_grad_log_density(const Vec& theta);
Target make_cauchy_target();

struct Gmm20Spec {
  std::vector<Vec> means;  // 20 points in 2-D
  double scale = 1.0;      // shared per-component std
  Vec weights;             // simplex of length 20
};

inline constexpr std::uint64_t kGmm20DefaultSeed = 20u;

/// Means i.i.d. uniform on [0,10]^2, unit component std, equal weights.
Gmm20Spec make_gmm20_spec(std::uint64_t seed = kGmm20DefaultSeed);

double gmm20_log_density(const Vec& theta, const Gmm20Spec& spec);
Vec gmm20_grad_log_density(const Vec& theta, const Gmm20Spec& spec);
Target make_gmm20_target(const Gmm20Spec& spec);

/// Closed-form moments of the mixture target, for moment-error oracles.
Vec gmm20_mean(const Gmm20Spec& spec);
Vec gmm20_cov_diag(const Gmm20Spec& spec);

// ---------------------------------------------------------------------------
// Bayesian linear regression

/// Unstandardized regression table as read from CSV (no bias column).
struct RawDataset {
  Eigen::MatrixXd features;
  Eigen::VectorXd y;
  std::vector<std::string> column_names;
};

/// Header row required; last column is the response.
RawDataset load_regression_csv(const std::string& path);

/// Standardized design matrix with an appended all-ones bias column.
struct BlrDataset {
  Eigen::MatrixXd X;  // N x (d_x + 1)
  Eigen::VectorXd y;
};

/// Z-scores features and response with the supplied row subset's statistics
/// (constant columns are left unscaled), then appends the bias column.
BlrDataset standardize(const RawDataset& raw, const std::vector<int>& stat_rows,
                       const std::vector<int>& keep_rows);

/// Whole table standardized on itself.
BlrDataset standardize_full(const RawDataset& raw);

/// Random 90/10 train/test split; the seed fully determines the partition.
std::pair<BlrDataset, BlrDataset> make_train_test_split(const RawDataset& raw,
                                                        std::uint64_t seed,
                                                        double test_fraction = 0.1);

/// theta = (w in R^{d_x+1}, log alpha, log tau). Gamma(1, rate 0.1)
/// hyperpriors, N(0, 1/alpha) weight prior, Gaussian likelihood.
struct BlrGaussianTarget {
  BlrDataset data;
  std::shared_ptr<TargetDiagnostics> diagnostics = std::make_shared<TargetDiagnostics>();

  int dim() const { return static_cast<int>(data.X.cols()) + 2; }
  double log_posterior(const Vec& theta) const;
  Vec grad_log_posterior(const Vec& theta) const;
};

/// theta = (w, log tau) with a multivariate Student-t(2) prior on w whose
/// scale matrix is A^T A for a recorded standard-normal draw of A.
struct BlrHeavyTailTarget {
  BlrDataset data;
  Eigen::MatrixXd A;
  std::uint64_t a_seed = 0;
  std::shared_ptr<TargetDiagnostics> diagnostics = std::make_shared<TargetDiagnostics>();

  int dim() const { return static_cast<int>(data.X.cols()) + 1; }
  double log_posterior(const Vec& theta) const;
  Vec grad_log_posterior(const Vec& theta) const;

  /// Factorizes A^T A once; retries with consecutive seeds until it is
  /// positive definite.
  static BlrHeavyTailTarget create(BlrDataset data, std::uint64_t seed);

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double log_det_scale_ = 0.0;
};

/// theta = w with alpha and tau pinned; the posterior is exactly Gaussian,
/// which makes this the conjugate-oracle variant.
struct BlrFixedHyperTarget {
  BlrDataset data;
  double alpha = 1.0;
  double tau = 1.0;

  int dim() const { return static_cast<int>(data.X.cols()); }
  double log_posterior(const Vec& theta) const;
  Vec grad_log_posterior(const Vec& theta) const;
};

Target make_target(BlrGaussianTarget t);
Target make_target(BlrHeavyTailTarget t);
Target make_target(BlrFixedHyperTarget t);

/// log p(y | x, theta) for the Gaussian-likelihood regression models.
/// `tau_index` < 0 means tau is fixed and passed in `fixed_tau`.
double blr_point_loglik(const Eigen::RowVectorXd& x, double y, const Vec& theta,
                        int tau_index, double fixed_tau = 1.0);

/// Hyperparameter log-transform window; exp() of values in this range
/// cannot overflow and the clamp is recorded in the target diagnostics.
inline constexpr double kLogHyperClamp = 30.0;

}  // namespace fklboost

#endif  // FKLBOOST_TARGETS_HPP
