#include "fklboost/targets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fklboost {

namespace {

constexpr double kLogPi = 1.1447298858494002;
constexpr double kLogTwoPi = 1.8378770664093453;

// Gamma(shape 1, rate 0.1): log pdf = log(0.1) - 0.1 x.
constexpr double kGammaRate = 0.1;
const double kLogGammaRate = std::log(kGammaRate);

void check_input(const Vec& theta, int dim, const char* who) {
  if (static_cast<int>(theta.size()) != dim)
    throw numerical_error(std::string(who) + ": expected dimension " + std::to_string(dim) +
                          ", got " + std::to_string(theta.size()));
  if (!all_finite(theta)) throw numerical_error(std::string(who) + ": non-finite input");
}

double clamp_log_hyper(double xi, const std::shared_ptr<TargetDiagnostics>& diag) {
  if (xi > kLogHyperClamp || xi < -kLogHyperClamp) {
    if (diag) diag->clamp_events.fetch_add(1, std::memory_order_relaxed);
    return std::clamp(xi, -kLogHyperClamp, kLogHyperClamp);
  }
  return xi;
}

Eigen::VectorXd to_eigen(const Vec& v, int n) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), n);
}

}  // namespace

// ---------------------------------------------------------------------------
// Cauchy

double cauchy_log_density(const Vec& theta) {
  check_input(theta, 1, "cauchy_log_density");
  return -kLogPi - std::log1p(theta[0] * theta[0]);
}

Vec cauchy_grad_log_density(const Vec& theta) {
  check_input(theta, 1, "cauchy_grad_log_density");
  return {-2.0 * theta[0] / (1.0 + theta[0] * theta[0])};
}

Target make_cauchy_target() {
  Target t;
  t.dim = 1;
  t.log_density = [](const Vec& x) { return cauchy_log_density(x); };
  t.grad_log_density = [](const Vec& x) { return cauchy_grad_log_density(x); };
  return t;
}

// ---------------------------------------------------------------------------
// GMM-20

Gmm20Spec make_gmm20_spec(std::uint64_t seed) {
  Gmm20Spec spec;
  Rng rng(seed);
  for (int k = 0; k < 20; ++k) spec.means.push_back({rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)});
  // 20 means on a 10x10 box put typical neighbors 2-4 apart; std 0.7 keeps
  // the modes distinct (3-6 sigma) yet discoverable from adjacent modes.
  spec.scale = 0.7;
  spec.weights.assign(20, 1.0 / 20.0);
  return spec;
}

static void check_gmm20(const Gmm20Spec& spec) {
  if (spec.means.empty() || spec.weights.size() != spec.means.size())
    throw config_error("gmm20: means/weights size mismatch");
  if (!(spec.scale > 0.0)) throw config_error("gmm20: scale must be positive");
  double total = 0.0;
  for (double w : spec.weights) total += w;
  if (std::fabs(total - 1.0) > 1e-12) throw config_error("gmm20: weights must sum to 1");
}

double gmm20_log_density(const Vec& theta, const Gmm20Spec& spec) {
  check_input(theta, 2, "gmm20_log_density");
  check_gmm20(spec);
  const double var = spec.scale * spec.scale;
  Vec terms;
  terms.reserve(spec.means.size());
  for (std::size_t k = 0; k < spec.means.size(); ++k) {
    if (spec.weights[k] <= 0.0) continue;
    const double dx = theta[0] - spec.means[k][0];
    const double dy = theta[1] - spec.means[k][1];
    const double log_n = -kLogTwoPi - std::log(var) - 0.5 * (dx * dx + dy * dy) / var;
    terms.push_back(std::log(spec.weights[k]) + log_n);
  }
  return log_sum_exp(terms);
}

Vec gmm20_grad_log_density(const Vec& theta, const Gmm20Spec& spec) {
  check_input(theta, 2, "gmm20_grad_log_density");
  const double var = spec.scale * spec.scale;
  Vec logs(spec.means.size(), kNegInf);
  for (std::size_t k = 0; k < spec.means.size(); ++k) {
    if (spec.weights[k] <= 0.0) continue;
    const double dx = theta[0] - spec.means[k][0];
    const double dy = theta[1] - spec.means[k][1];
    logs[k] = std::log(spec.weights[k]) - kLogTwoPi - std::log(var) -
              0.5 * (dx * dx + dy * dy) / var;
  }
  const double lp = log_sum_exp(logs);
  Vec g(2, 0.0);
  for (std::size_t k = 0; k < spec.means.size(); ++k) {
    if (logs[k] == kNegInf) continue;
    const double resp = std::exp(logs[k] - lp);
    g[0] += resp * (spec.means[k][0] - theta[0]) / var;
    g[1] += resp * (spec.means[k][1] - theta[1]) / var;
  }
  return g;
}

Target make_gmm20_target(const Gmm20Spec& spec) {
  check_gmm20(spec);
  Target t;
  t.dim = 2;
  t.log_density = [spec](const Vec& x) { return gmm20_log_density(x, spec); };
  t.grad_log_density = [spec](const Vec& x) { return gmm20_grad_log_density(x, spec); };
  return t;
}

Vec gmm20_mean(const Gmm20Spec& spec) {
  Vec m(2, 0.0);
  for (std::size_t k = 0; k < spec.means.size(); ++k) {
    m[0] += spec.weights[k] * spec.means[k][0];
    m[1] += spec.weights[k] * spec.means[k][1];
  }
  return m;
}

Vec gmm20_cov_diag(const Gmm20Spec& spec) {
  const Vec m = gmm20_mean(spec);
  const double var = spec.scale * spec.scale;
  Vec cov(2, 0.0);
  for (std::size_t k = 0; k < spec.means.size(); ++k) {
    cov[0] += spec.weights[k] * (var + spec.means[k][0] * spec.means[k][0]);
    cov[1] += spec.weights[k] * (var + spec.means[k][1] * spec.means[k][1]);
  }
  cov[0] -= m[0] * m[0];
  cov[1] -= m[1] * m[1];
  return cov;
}

// ---------------------------------------------------------------------------
// CSV ingestion and standardization

RawDataset load_regression_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open dataset file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw config_error("dataset '" + path + "' is empty");
  RawDataset raw;
  {
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) raw.column_names.push_back(cell);
  }
  const std::size_t n_cols = raw.column_names.size();
  if (n_cols < 2)
    throw config_error("dataset '" + path + "' needs at least one feature column and a response");
  std::vector<Vec> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Vec row;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      try {
        std::size_t pos = 0;
        const double v = std::stod(cell, &pos);
        if (pos != cell.size() && cell.find_first_not_of(" \t\r", pos) != std::string::npos)
          throw std::invalid_argument(cell);
        if (!std::isfinite(v)) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception&) {
        throw config_error("dataset '" + path + "': bad value at row " + std::to_string(line_no) +
                           ", column " + std::to_string(col));
      }
    }
    if (row.size() != n_cols)
      throw config_error("dataset '" + path + "': row " + std::to_string(line_no) + " has " +
                         std::to_string(row.size()) + " columns, expected " +
                         std::to_string(n_cols));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw config_error("dataset '" + path + "' has no data rows");
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(n_cols) - 1;
  raw.features.resize(n, d);
  raw.y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) raw.features(i, j) = rows[i][j];
    raw.y(i) = rows[i][d];
  }
  return raw;
}

BlrDataset standardize(const RawDataset& raw, const std::vector<int>& stat_rows,
                       const std::vector<int>& keep_rows) {
  const int d = static_cast<int>(raw.features.cols());
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sd = Eigen::VectorXd::Ones(d);
  double y_mu = 0.0, y_sd = 1.0;
  if (!stat_rows.empty()) {
    const double n = static_cast<double>(stat_rows.size());
    for (int r : stat_rows) mu += raw.features.row(r).transpose();
    mu /= n;
    Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
    for (int r : stat_rows) {
      const Eigen::VectorXd diff = raw.features.row(r).transpose() - mu;
      var += diff.cwiseProduct(diff);
    }
    var /= n;
    for (int j = 0; j < d; ++j) sd(j) = var(j) > 0.0 ? std::sqrt(var(j)) : 1.0;
    for (int r : stat_rows) y_mu += raw.y(r);
    y_mu /= n;
    double y_var = 0.0;
    for (int r : stat_rows) y_var += (raw.y(r) - y_mu) * (raw.y(r) - y_mu);
    y_var /= n;
    y_sd = y_var > 0.0 ? std::sqrt(y_var) : 1.0;
  }
  BlrDataset out;
  const int n = static_cast<int>(keep_rows.size());
  out.X.resize(n, d + 1);
  out.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const int r = keep_rows[i];
    for (int j = 0; j < d; ++j) out.X(i, j) = (raw.features(r, j) - mu(j)) / sd(j);
    out.X(i, d) = 1.0;
    out.y(i) = (raw.y(r) - y_mu) / y_sd;
  }
  return out;
}

BlrDataset standardize_full(const RawDataset& raw) {
  std::vector<int> rows(raw.features.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return standardize(raw, rows, rows);
}

std::pair<BlrDataset, BlrDataset> make_train_test_split(const RawDataset& raw,
                                                        std::uint64_t seed,
                                                        double test_fraction) {
  const int n = static_cast<int>(raw.features.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  int n_test = static_cast<int>(std::lround(test_fraction * n));
  n_test = std::clamp(n_test, 1, n - 1);
  std::vector<int> test_rows(perm.begin(), perm.begin() + n_test);
  std::vector<int> train_rows(perm.begin() + n_test, perm.end());
  return {standardize(raw, train_rows, train_rows), standardize(raw, train_rows, test_rows)};
}

// ---------------------------------------------------------------------------
// BLR with Gamma hyperpriors

double BlrGaussianTarget::log_posterior(const Vec& theta) const {
  check_input(theta, dim(), "blr_log_posterior");
  const int d_w = static_cast<int>(data.X.cols());
  const Eigen::VectorXd w = to_eigen(theta, d_w);
  const double xi_a = clamp_log_hyper(theta[d_w], diagnostics);
  const double xi_t = clamp_log_hyper(theta[d_w + 1], diagnostics);
  const double alpha = std::exp(xi_a);
  const double tau = std::exp(xi_t);
  const int n = static_cast<int>(data.X.rows());

  double lp = 0.0;
  if (n > 0) {
    const Eigen::VectorXd resid = data.y - data.X * w;
    lp += 0.5 * n * (xi_t - kLogTwoPi) - 0.5 * tau * resid.squaredNorm();
  }
  lp += 0.5 * d_w * (xi_a - kLogTwoPi) - 0.5 * alpha * w.squaredNorm();
  lp += kLogGammaRate - kGammaRate * alpha;
  lp += kLogGammaRate - kGammaRate * tau;
  lp += xi_a + xi_t;  // Jacobians of the log transforms
  return lp;
}

Vec BlrGaussianTarget::grad_log_posterior(const Vec& theta) const {
  check_input(theta, dim(), "blr_log_posterior gradient");
  const int d_w = static_cast<int>(data.X.cols());
  const Eigen::VectorXd w = to_eigen(theta, d_w);
  const double xi_a_raw = theta[d_w];
  const double xi_t_raw = theta[d_w + 1];
  const double xi_a = clamp_log_hyper(xi_a_raw, diagnostics);
  const double xi_t = clamp_log_hyper(xi_t_raw, diagnostics);
  const double alpha = std::exp(xi_a);
  const double tau = std::exp(xi_t);
  const int n = static_cast<int>(data.X.rows());

  Vec g(dim(), 0.0);
  double ssr = 0.0;
  Eigen::VectorXd gw = -alpha * w;
  if (n > 0) {
    const Eigen::VectorXd resid = data.y - data.X * w;
    ssr = resid.squaredNorm();
    gw += tau * (data.X.transpose() * resid);
  }
  for (int j = 0; j < d_w; ++j) g[j] = gw(j);
  // d/d xi through alpha = exp(xi); zero when the clamp is active.
  if (xi_a == xi_a_raw)
    g[d_w] = 0.5 * d_w - 0.5 * alpha * w.squaredNorm() - kGammaRate * alpha + 1.0;
  if (xi_t == xi_t_raw) g[d_w + 1] = 0.5 * n - 0.5 * tau * ssr - kGammaRate * tau + 1.0;
  return g;
}

// ---------------------------------------------------------------------------
// BLR with multivariate Student-t(2) prior

BlrHeavyTailTarget BlrHeavyTailTarget::create(BlrDataset data, std::uint64_t seed) {
  const int d_w = static_cast<int>(data.X.cols());
  BlrHeavyTailTarget t;
  t.data = std::move(data);
  for (std::uint64_t s = seed;; ++s) {
    Rng rng(s);
    Eigen::MatrixXd a(d_w, d_w);
    for (int i = 0; i < d_w; ++i)
      for (int j = 0; j < d_w; ++j) a(i, j) = rng.normal();
    const Eigen::MatrixXd scale = a.transpose() * a;
    Eigen::LLT<Eigen::MatrixXd> llt(scale);
    if (llt.info() == Eigen::Success) {
      t.A = std::move(a);
      t.a_seed = s;
      t.llt_ = std::move(llt);
      t.log_det_scale_ = 0.0;
      for (int i = 0; i < d_w; ++i) t.log_det_scale_ += 2.0 * std::log(t.llt_.matrixLLT()(i, i));
      return t;
    }
  }
}

double BlrHeavyTailTarget::log_posterior(const Vec& theta) const {
  check_input(theta, dim(), "blr_heavy_log_posterior");
  const int d_w = static_cast<int>(data.X.cols());
  const Eigen::VectorXd w = to_eigen(theta, d_w);
  const double xi_t = clamp_log_hyper(theta[d_w], diagnostics);
  const double tau = std::exp(xi_t);
  const int n = static_cast<int>(data.X.rows());
  const double nu = 2.0;

  double lp = 0.0;
  if (n > 0) {
    const Eigen::VectorXd resid = data.y - data.X * w;
    lp += 0.5 * n * (xi_t - kLogTwoPi) - 0.5 * tau * resid.squaredNorm();
  }
  const Eigen::VectorXd siw = llt_.solve(w);
  const double quad = w.dot(siw);
  lp += std::lgamma(0.5 * (nu + d_w)) - std::lgamma(0.5 * nu) - 0.5 * d_w * std::log(nu * M_PI) -
        0.5 * log_det_scale_ - 0.5 * (nu + d_w) * std::log1p(quad / nu);
  lp += kLogGammaRate - kGammaRate * tau;
  lp += xi_t;
  return lp;
}

Vec BlrHeavyTailTarget::grad_log_posterior(const Vec& theta) const {
  check_input(theta, dim(), "blr_heavy_log_posterior gradient");
  const int d_w = static_cast<int>(data.X.cols());
  const Eigen::VectorXd w = to_eigen(theta, d_w);
  const double xi_t_raw = theta[d_w];
  const double xi_t = clamp_log_hyper(xi_t_raw, diagnostics);
  const double tau = std::exp(xi_t);
  const int n = static_cast<int>(data.X.rows());
  const double nu = 2.0;

  Vec g(dim(), 0.0);
  const Eigen::VectorXd siw = llt_.solve(w);
  const double quad = w.dot(siw);
  Eigen::VectorXd gw = -(nu + d_w) / (nu + quad) * siw;
  double ssr = 0.0;
  if (n > 0) {
    const Eigen::VectorXd resid = data.y - data.X * w;
    ssr = resid.squaredNorm();
    gw += tau * (data.X.transpose() * resid);
  }
  for (int j = 0; j < d_w; ++j) g[j] = gw(j);
  if (xi_t == xi_t_raw) g[d_w] = 0.5 * n - 0.5 * tau * ssr - kGammaRate * tau + 1.0;
  return g;
}

// ---------------------------------------------------------------------------
// Fixed-hyperparameter (conjugate) BLR

double BlrFixedHyperTarget::log_posterior(const Vec& theta) const {
  check_input(theta, dim(), "blr_fixed_log_posterior");
  const int d_w = static_cast<int>(data.X.cols());
  const Eigen::VectorXd w = to_eigen(theta, d_w);
  const int n = static_cast<int>(data.X.rows());
  double lp = 0.5 * d_w * (std::log(alpha) - kLogTwoPi) - 0.5 * alpha * w.squaredNorm();
  if (n > 0) {
    const Eigen::VectorXd resid = data.y - data.X * w;
    lp += 0.5 * n * (std::log(tau) - kLogTwoPi) - 0.5 * tau * resid.squaredNorm();
  }
  return lp;
}

Vec BlrFixedHyperTarget::grad_log_posterior(const Vec& theta) const {
  check_input(theta, dim(), "blr_fixed_log_posterior gradient");
  const int d_w = static_cast<int>(data.X.cols());
  const Eigen::VectorXd w = to_eigen(theta, d_w);
  Eigen::VectorXd gw = -alpha * w;
  if (data.X.rows() > 0) gw += tau * (data.X.transpose() * (data.y - data.X * w));
  Vec g(d_w);
  for (int j = 0; j < d_w; ++j) g[j] = gw(j);
  return g;
}

// ---------------------------------------------------------------------------

Target make_target(BlrGaussianTarget t) {
  Target out;
  out.dim = t.dim();
  out.diagnostics = t.diagnostics;
  auto shared = std::make_shared<const BlrGaussianTarget>(std::move(t));
  out.log_density = [shared](const Vec& x) { return shared->log_posterior(x); };
  out.grad_log_density = [shared](const Vec& x) { return shared->grad_log_posterior(x); };
  return out;
}

Target make_target(BlrHeavyTailTarget t) {
  Target out;
  out.dim = t.dim();
  out.diagnostics = t.diagnostics;
  auto shared = std::make_shared<const BlrHeavyTailTarget>(std::move(t));
  out.log_density = [shared](const Vec& x) { return shared->log_posterior(x); };
  out.grad_log_density = [shared](const Vec& x) { return shared->grad_log_posterior(x); };
  return out;
}

Target make_target(BlrFixedHyperTarget t) {
  Target out;
  out.dim = t.dim();
  auto shared = std::make_shared<const BlrFixedHyperTarget>(std::move(t));
  out.log_density = [shared](const Vec& x) { return shared->log_posterior(x); };
  out.grad_log_density = [shared](const Vec& x) { return shared->grad_log_posterior(x); };
  return out;
}

double blr_point_loglik(const Eigen::RowVectorXd& x, double y, const Vec& theta,
                        int tau_index, double fixed_tau) {
  const int d_w = static_cast<int>(x.size());
  double pred = 0.0;
  for (int j = 0; j < d_w; ++j) pred += x(j) * theta[j];
  double tau = fixed_tau;
  if (tau_index >= 0) {
    const double xi = std::clamp(theta[tau_index], -kLogHyperClamp, kLogHyperClamp);
    tau = std::exp(xi);
  }
  const double r = y - pred;
  return 0.5 * (std::log(tau) - kLogTwoPi) - 0.5 * tau * r * r;
}

}  // namespace fklboost
