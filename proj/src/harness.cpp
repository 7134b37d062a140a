#include "fklboost/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fklboost/snis.hpp"

namespace fklboost {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Oracles and metrics

double exact_fkl_quadrature_1d(const std::function<double(double)>& target_logp,
                               const MixtureProposal& q, double lo, double hi, std::size_t n) {
  if (q.dim() != 1) throw config_error("exact_fkl_quadrature_1d: proposal must be 1-D");
  if (n < 2 || !(hi > lo)) throw config_error("exact_fkl_quadrature_1d: bad grid");
  const double h = (hi - lo) / static_cast<double>(n - 1);
  double acc = 0.0;
  double q_mass = 0.0;
  Vec point(1);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = lo + h * static_cast<double>(i);
    point[0] = x;
    const double lp = target_logp(x);
    const double lq = mixture_log_pdf(q, point);
    const double p = std::exp(lp);
    const double w = (i == 0 || i + 1 == n) ? 0.5 : 1.0;
    acc += w * p * (lp - lq);
    q_mass += w * std::exp(lq);
  }
  q_mass *= h;
  if (1.0 - q_mass > 1e-4)
    throw numerical_error("exact_fkl_quadrature_1d: proposal mass outside grid exceeds 1e-4; "
                          "widen the grid");
  return acc * h;
}

double exact_fkl_mc(const std::function<Vec(Rng&)>& p_sampler,
                    const std::function<double(const Vec&)>& p_logpdf, const MixtureProposal& q,
                    std::size_t n, std::uint64_t seed) {
  if (n == 0) throw config_error("exact_fkl_mc: need at least one sample");
  Rng rng(seed);
  double acc = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const Vec x = p_sampler(rng);
    acc += p_logpdf(x) - mixture_log_pdf(q, x);
  }
  return acc / static_cast<double>(n);
}

double moment_mse(const MixtureProposal& q, const Target& target, const Vec& true_mean,
                  const Vec& true_cov_diag, std::size_t n, std::uint64_t seed) {
  WeightedBatch batch = sample(q, n, seed);
  batch.log_p.resize(n);
  for (std::size_t s = 0; s < n; ++s) batch.log_p[s] = target.log_density(batch.points[s]);
  batch.norm_weights = stable_normalized_weights(batch.log_p, batch.log_q);
  const int d = q.dim();
  Vec m(d, 0.0), second(d, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (int i = 0; i < d; ++i) {
      m[i] += batch.norm_weights[s] * batch.points[s][i];
      second[i] += batch.norm_weights[s] * batch.points[s][i] * batch.points[s][i];
    }
  double mse = 0.0;
  for (int i = 0; i < d; ++i) {
    const double var = second[i] - m[i] * m[i];
    mse += (m[i] - true_mean[i]) * (m[i] - true_mean[i]);
    mse += (var - true_cov_diag[i]) * (var - true_cov_diag[i]);
  }
  return mse;
}

Vec snis_posterior_mean(const MixtureProposal& q, const Target& target, std::size_t n,
                        std::uint64_t seed) {
  WeightedBatch batch = sample(q, n, seed);
  batch.log_p.resize(n);
  for (std::size_t s = 0; s < n; ++s) batch.log_p[s] = target.log_density(batch.points[s]);
  batch.norm_weights = stable_normalized_weights(batch.log_p, batch.log_q);
  Vec m(q.dim(), 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (int i = 0; i < q.dim(); ++i) m[i] += batch.norm_weights[s] * batch.points[s][i];
  return m;
}

double posterior_predictive_logprob(const Eigen::RowVectorXd& x, double y,
                                    const std::vector<Vec>& thetas, const Vec& weights,
                                    const BlrLoglik& model) {
  if (thetas.empty() || thetas.size() != weights.size())
    throw config_error("posterior_predictive_logprob: sample/weight size mismatch");
  Vec terms(thetas.size());
  for (std::size_t s = 0; s < thetas.size(); ++s)
    terms[s] = weights[s] > 0.0 ? std::log(weights[s]) + model(x, y, thetas[s]) : kNegInf;
  return log_sum_exp(terms);
}

double mean_predictive_logprob(const BlrDataset& test, const std::vector<Vec>& thetas,
                               const Vec& weights, const BlrLoglik& model) {
  const int n = static_cast<int>(test.X.rows());
  if (n == 0) throw config_error("mean_predictive_logprob: empty test set");
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    acc += posterior_predictive_logprob(test.X.row(i), test.y(i), thetas, weights, model);
  return acc / n;
}

ConjugateBlr conjugate_blr_posterior(const BlrDataset& data, double alpha, double tau) {
  const int d = static_cast<int>(data.X.cols());
  ConjugateBlr post;
  post.alpha = alpha;
  post.tau = tau;
  Eigen::MatrixXd precision = tau * (data.X.transpose() * data.X);
  precision += alpha * Eigen::MatrixXd::Identity(d, d);
  const Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success)
    throw numerical_error("conjugate_blr_posterior: precision not positive definite");
  post.cov = llt.solve(Eigen::MatrixXd::Identity(d, d));
  post.mean = tau * llt.solve(data.X.transpose() * data.y);
  return post;
}

double conjugate_predictive_logprob(const ConjugateBlr& post, const Eigen::RowVectorXd& x,
                                    double y) {
  const double mean = x * post.mean;
  const double var = 1.0 / post.tau + x * post.cov * x.transpose();
  const double r = y - mean;
  return -0.5 * std::log(var) - 0.5 * kLogTwoPi - 0.5 * r * r / var;
}

Vec residual_grid(const Target& target, const MixtureProposal& q, double lo, double hi,
                  int n_side) {
  Vec values;
  values.reserve(static_cast<std::size_t>(n_side) * n_side);
  const double h = (hi - lo) / (n_side - 1);
  Vec point(2);
  for (int i = 0; i < n_side; ++i) {
    point[1] = lo + h * i;
    for (int j = 0; j < n_side; ++j) {
      point[0] = lo + h * j;
      values.push_back(
          stabilized_log_residual(target.log_density(point), mixture_log_pdf(q, point)));
    }
  }
  return values;
}

// ---------------------------------------------------------------------------
// Experiment drivers

ExperimentResult aggregate(std::string method, Vec per_split) {
  ExperimentResult r;
  r.method = std::move(method);
  const std::size_t n = per_split.size();
  double mean = 0.0;
  for (double v : per_split) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  if (n > 1) {
    for (double v : per_split) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n - 1);
  }
  r.per_split = std::move(per_split);
  r.mean = mean;
  r.stderr_ = std::sqrt(var / static_cast<double>(n));
  return r;
}

std::vector<CurveRow> run_cauchy_experiment(const BoostConfig& base, int n_seeds,
                                            const std::vector<int>& ks) {
  if (ks.empty()) throw config_error("cauchy experiment: no boosting sizes requested");
  const Target target = make_cauchy_target();
  std::vector<CurveRow> rows;
  for (int s = 0; s < n_seeds; ++s) {
    for (const Divergence div : {Divergence::fkl, Divergence::rkl}) {
      BoostConfig cfg = base;
      cfg.k = *std::max_element(ks.begin(), ks.end());
      cfg.divergence = div;
      cfg.seed = derive_seed(base.seed, static_cast<std::uint64_t>(s));
      const std::string method = div == Divergence::fkl ? "fkl_vb" : "rkl_vb";
      // One run per (seed, method); the curve reads the per-iteration mixtures.
      boost(target, cfg, [&](int k, const MixtureProposal& proposal) {
        if (std::find(ks.begin(), ks.end(), k) == ks.end()) return;
        const double fkl = exact_fkl_quadrature_1d(
            [](double x) { return cauchy_log_density({x}); }, proposal);
        rows.push_back({method, cfg.seed, k, "quad_fkl", fkl});
      });
    }
  }
  return rows;
}

std::vector<CurveRow> run_gmm20_experiment(const BoostConfig& base, const Gmm20Spec& spec,
                                           int n_seeds, const std::vector<int>& ks,
                                           std::size_t eval_samples,
                                           std::map<int, Vec>* seed0_grids) {
  const Target target = make_gmm20_target(spec);
  const Vec true_mean = gmm20_mean(spec);
  const Vec true_cov = gmm20_cov_diag(spec);
  auto p_sampler = [&spec](Rng& rng) -> Vec {
    const std::size_t k = rng.categorical(spec.weights);
    return {spec.means[k][0] + spec.scale * rng.normal(),
            spec.means[k][1] + spec.scale * rng.normal()};
  };
  auto p_logpdf = [&spec](const Vec& x) { return gmm20_log_density(x, spec); };

  if (ks.empty()) throw config_error("gmm20 experiment: no boosting sizes requested");
  std::vector<CurveRow> rows;
  for (int s = 0; s < n_seeds; ++s) {
    BoostConfig cfg = base;
    cfg.k = *std::max_element(ks.begin(), ks.end());
    cfg.divergence = Divergence::fkl;
    cfg.seed = derive_seed(base.seed, static_cast<std::uint64_t>(s));
    boost(target, cfg, [&](int k, const MixtureProposal& proposal) {
      if (std::find(ks.begin(), ks.end(), k) == ks.end()) return;
      const std::uint64_t eval_seed = derive_seed(cfg.seed, 7000 + static_cast<std::uint64_t>(k));
      rows.push_back({"fkl_vb", cfg.seed, k, "exact_fkl",
                      exact_fkl_mc(p_sampler, p_logpdf, proposal, eval_samples, eval_seed)});
      rows.push_back({"fkl_vb", cfg.seed, k, "moment_mse",
                      moment_mse(proposal, target, true_mean, true_cov, eval_samples,
                                 derive_seed(eval_seed, 1))});
      Vec grid = residual_grid(target, proposal, -2.0, 12.0, 200);
      rows.push_back({"fkl_vb", cfg.seed, k, "max_stab_residual",
                      *std::max_element(grid.begin(), grid.end())});
      if (seed0_grids && s == 0) (*seed0_grids)[k] = std::move(grid);
    });
  }
  return rows;
}

namespace {

struct MethodSpec {
  bool is_hmc = false;
  Divergence divergence = Divergence::fkl;
  int k = 1;
};

MethodSpec parse_method(const std::string& name) {
  MethodSpec m;
  if (name == "hmc") {
    m.is_hmc = true;
    return m;
  }
  std::string rest;
  if (name.rfind("fkl_", 0) == 0) {
    m.divergence = Divergence::fkl;
    rest = name.substr(4);
  } else if (name.rfind("rkl_", 0) == 0) {
    m.divergence = Divergence::rkl;
    rest = name.substr(4);
  } else {
    throw config_error("unknown method '" + name + "'");
  }
  if (rest == "vi") {
    m.k = 1;
  } else if (rest.rfind("vb_", 0) == 0) {
    try {
      m.k = std::stoi(rest.substr(3));
    } catch (const std::exception&) {
      throw config_error("unknown method '" + name + "'");
    }
    if (m.k < 2) throw config_error("method '" + name + "' needs k >= 2");
  } else {
    throw config_error("unknown method '" + name + "'");
  }
  return m;
}

double run_blr_split(const RawDataset& raw, const BlrExperimentConfig& cfg,
                     const BoostConfig& boost_base, const HmcConfig& hmc_base,
                     const MethodSpec& method, int split) {
  const std::uint64_t split_seed = derive_seed(boost_base.seed, 500 + static_cast<std::uint64_t>(split));
  const auto [train, test] = make_train_test_split(raw, split_seed);
  const int d_w = static_cast<int>(train.X.cols());

  Target target;
  int tau_index = -1;
  if (cfg.prior == BlrPrior::gaussian) {
    target = make_target(BlrGaussianTarget{train});
    tau_index = d_w + 1;
  } else {
    target = make_target(BlrHeavyTailTarget::create(train, cfg.heavy_seed));
    tau_index = d_w;
  }
  BlrLoglik model = [tau_index](const Eigen::RowVectorXd& x, double y, const Vec& theta) {
    return blr_point_loglik(x, y, theta, tau_index);
  };

  if (method.is_hmc) {
    HmcConfig hmc_cfg = hmc_base;
    hmc_cfg.seed = derive_seed(split_seed, 61);
    const HmcResult res = hmc_sample(target, hmc_cfg);
    if (!cfg.hmc_dump_dir.empty()) {
      std::ostringstream csv;
      for (const Vec& s : res.samples) {
        for (std::size_t i = 0; i < s.size(); ++i) csv << (i ? "," : "") << fmt_double(s[i]);
        csv << "\n";
      }
      write_text_atomic(cfg.hmc_dump_dir + "/hmc_split" + std::to_string(split) + ".csv",
                        csv.str());
    }
    const Vec uniform(res.samples.size(), 1.0 / static_cast<double>(res.samples.size()));
    return mean_predictive_logprob(test, res.samples, uniform, model);
  }

  BoostConfig fit_cfg = boost_base;
  fit_cfg.k = method.k;
  fit_cfg.divergence = method.divergence;
  fit_cfg.seed = derive_seed(split_seed, 62);
  const auto [proposal, report] = boost(target, fit_cfg);

  WeightedBatch batch = sample(proposal, cfg.eval_samples, derive_seed(split_seed, 63));
  batch.log_p.resize(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s)
    batch.log_p[s] = target.log_density(batch.points[s]);
  batch.norm_weights = stable_normalized_weights(batch.log_p, batch.log_q);
  return mean_predictive_logprob(test, batch.points, batch.norm_weights, model);
}

}  // namespace

std::vector<ExperimentResult> run_blr_experiment(const RawDataset& raw,
                                                 const BlrExperimentConfig& cfg,
                                                 const BoostConfig& boost_base,
                                                 const HmcConfig& hmc_base,
                                                 std::vector<BlrSplitRow>* split_rows) {
  if (cfg.methods.empty()) throw config_error("blr experiment: no methods selected");
  if (cfg.n_splits < 1) throw config_error("blr experiment: n_splits must be >= 1");
  std::vector<MethodSpec> specs;
  for (const std::string& name : cfg.methods) specs.push_back(parse_method(name));

  std::vector<ExperimentResult> results;
  for (std::size_t mi = 0; mi < specs.size(); ++mi) {
    Vec per_split(cfg.n_splits, 0.0);
    const int jobs = std::max(1, cfg.jobs);
    if (jobs == 1) {
      for (int split = 0; split < cfg.n_splits; ++split)
        per_split[split] = run_blr_split(raw, cfg, boost_base, hmc_base, specs[mi], split);
    } else {
      // Splits are independent; each worker owns its seeds and result slot.
      std::vector<std::thread> pool;
      std::atomic<int> next{0};
      for (int w = 0; w < jobs; ++w)
        pool.emplace_back([&]() {
          for (;;) {
            const int split = next.fetch_add(1);
            if (split >= cfg.n_splits) return;
            per_split[split] = run_blr_split(raw, cfg, boost_base, hmc_base, specs[mi], split);
          }
        });
      for (std::thread& t : pool) t.join();
    }
    if (split_rows)
      for (int split = 0; split < cfg.n_splits; ++split)
        split_rows->push_back({cfg.methods[mi], split, "pred_log_prob", per_split[split]});
    results.push_back(aggregate(cfg.methods[mi], std::move(per_split)));
  }
  return results;
}

RawDataset make_synthetic_linear_dataset(int n, int d, double noise_sd, std::uint64_t seed) {
  Rng rng(seed);
  RawDataset raw;
  raw.features.resize(n, d);
  raw.y.resize(n);
  Vec w(d);
  for (int j = 0; j < d; ++j) w[j] = rng.normal();
  const double intercept = 0.5 * rng.normal();
  for (int i = 0; i < n; ++i) {
    double pred = intercept;
    for (int j = 0; j < d; ++j) {
      raw.features(i, j) = rng.normal();
      pred += raw.features(i, j) * w[j];
    }
    raw.y(i) = pred + noise_sd * rng.normal();
  }
  for (int j = 0; j < d; ++j) raw.column_names.push_back("x" + std::to_string(j));
  raw.column_names.push_back("y");
  return raw;
}

// ---------------------------------------------------------------------------
// Output helpers

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw config_error("cannot write to '" + tmp.string() + "'");
    out << content;
  }
  std::filesystem::rename(tmp, target);
}

std::string curve_rows_to_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream out;
  out << "k,seed,metric,value\n";
  for (const CurveRow& r : rows)
    out << r.k << "," << r.seed << "," << r.method << ":" << r.metric << ","
        << fmt_double(r.value) << "\n";
  return out.str();
}

std::string split_rows_to_csv(const std::vector<BlrSplitRow>& rows) {
  std::ostringstream out;
  out << "method,split,metric,value\n";
  for (const BlrSplitRow& r : rows)
    out << r.method << "," << r.split << "," << r.metric << "," << fmt_double(r.value) << "\n";
  return out.str();
}

std::string results_to_json(const std::vector<ExperimentResult>& results, int n_splits) {
  nlohmann::json j;
  for (const ExperimentResult& r : results) {
    j[r.method] = {{"mean", r.mean}, {"stderr", r.stderr_}, {"n_splits", n_splits}};
  }
  return j.dump(2);
}

}  // namespace fklboost
