#include "fklboost/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fklboost/boost.hpp"
#include "fklboost/harness.hpp"
#include "fklboost/hmc.hpp"
#include "fklboost/snis.hpp"
#include "fklboost/targets.hpp"

namespace fklboost {

namespace {

constexpr int kSchemaVersion = 1;

struct RunConfig {
  BoostConfig boost;
  HmcConfig hmc;
  std::optional<std::uint64_t> seed;
};

void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& scope) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw config_error("unknown config key '" + (scope.empty() ? key : scope + "." + key) + "'");
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw config_error(std::string("config key '") + key + "' has the wrong type");
    }
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config file '" + path + "': " + e.what());
  }
  reject_unknown_keys(j, {"schema_version", "seed", "boost", "hmc"}, "");
  if (!j.contains("schema_version"))
    throw config_error("config file '" + path + "' is missing 'schema_version'");
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    throw config_error("config file '" + path + "': unsupported schema_version");

  RunConfig cfg;
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("boost")) {
    const auto& b = j.at("boost");
    reject_unknown_keys(b,
                        {"k", "steps_per_component", "samples_per_batch", "lr_mean", "lr_scale",
                         "lr_gamma", "lr_weights", "init_sigma", "init_heuristic_steps",
                         "init_heuristic_lr", "rkl_warmstart_steps", "weight_search_steps",
                         "weight_search_rounds", "component_kind", "nu"},
                        "boost");
    read_key(b, "k", cfg.boost.k);
    read_key(b, "steps_per_component", cfg.boost.steps_per_component);
    read_key(b, "samples_per_batch", cfg.boost.samples_per_batch);
    read_key(b, "lr_mean", cfg.boost.lr_mean);
    read_key(b, "lr_scale", cfg.boost.lr_scale);
    read_key(b, "lr_gamma", cfg.boost.lr_gamma);
    read_key(b, "lr_weights", cfg.boost.lr_weights);
    read_key(b, "init_sigma", cfg.boost.init_sigma);
    read_key(b, "init_heuristic_steps", cfg.boost.init_heuristic_steps);
    read_key(b, "init_heuristic_lr", cfg.boost.init_heuristic_lr);
    read_key(b, "rkl_warmstart_steps", cfg.boost.rkl_warmstart_steps);
    read_key(b, "weight_search_steps", cfg.boost.weight_search_steps);
    read_key(b, "weight_search_rounds", cfg.boost.weight_search_rounds);
    if (b.contains("component_kind")) {
      const std::string kind = b.at("component_kind").get<std::string>();
      if (kind == "gaussian") {
        cfg.boost.component_kind = ComponentKind::gaussian;
      } else if (kind == "student_t") {
        cfg.boost.component_kind = ComponentKind::student_t;
      } else {
        throw config_error("config key 'boost.component_kind' must be gaussian or student_t");
      }
    }
    read_key(b, "nu", cfg.boost.nu);
  }
  if (j.contains("hmc")) {
    const auto& h = j.at("hmc");
    reject_unknown_keys(h,
                        {"step_size", "leapfrog_steps", "burn_in", "adapt_steps", "n_samples",
                         "n_chains", "target_accept", "init_sigma", "adapt"},
                        "hmc");
    read_key(h, "step_size", cfg.hmc.step_size);
    read_key(h, "leapfrog_steps", cfg.hmc.leapfrog_steps);
    read_key(h, "burn_in", cfg.hmc.burn_in);
    read_key(h, "adapt_steps", cfg.hmc.adapt_steps);
    read_key(h, "n_samples", cfg.hmc.n_samples);
    read_key(h, "n_chains", cfg.hmc.n_chains);
    read_key(h, "target_accept", cfg.hmc.target_accept);
    read_key(h, "init_sigma", cfg.hmc.init_sigma);
    read_key(h, "adapt", cfg.hmc.adapt);
  }
  return cfg;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed,
                           const std::optional<std::uint64_t>& config_seed) {
  if (flag_seed) return *flag_seed;
  if (config_seed) return *config_seed;
  if (const char* env = std::getenv("FKLBOOST_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw config_error("FKLBOOST_SEED is not a valid seed");
    }
  }
  return 1;
}

struct ParsedTarget {
  Target target;
  std::string name;
};

ParsedTarget parse_target(const std::string& spec) {
  ParsedTarget out;
  out.name = spec;
  if (spec == "cauchy") {
    out.target = make_cauchy_target();
  } else if (spec == "gmm20") {
    out.target = make_gmm20_target(make_gmm20_spec());
  } else if (spec.rfind("blr:", 0) == 0) {
    const RawDataset raw = load_regression_csv(spec.substr(4));
    out.target = make_target(BlrGaussianTarget{standardize_full(raw)});
  } else if (spec.rfind("blr-heavy:", 0) == 0) {
    const RawDataset raw = load_regression_csv(spec.substr(10));
    out.target = make_target(BlrHeavyTailTarget::create(standardize_full(raw), 1234));
  } else {
    throw config_error("unknown target '" + spec + "'");
  }
  return out;
}

int cmd_fit(const std::string& target_spec, const std::string& method, int k,
            const RunConfig& run, std::uint64_t seed, const std::string& out_prefix) {
  BoostConfig cfg = run.boost;
  cfg.seed = seed;
  if (method == "rkl-vi") {
    cfg.divergence = Divergence::rkl;
    cfg.k = 1;
  } else if (method == "fkl-vi") {
    cfg.divergence = Divergence::fkl;
    cfg.k = 1;
  } else if (method == "rkl-vb") {
    cfg.divergence = Divergence::rkl;
    cfg.k = k;
  } else if (method == "fkl-vb") {
    cfg.divergence = Divergence::fkl;
    cfg.k = k;
  } else {
    throw config_error("unknown method '" + method + "'");
  }
  if ((method == "rkl-vi" || method == "fkl-vi") && k != 1)
    throw config_error("--k must be 1 for VI methods");

  const ParsedTarget parsed = parse_target(target_spec);
  const auto [proposal, report] = boost(parsed.target, cfg);
  write_text_atomic(out_prefix + ".proposal.json", proposal_to_json(proposal));
  write_text_atomic(out_prefix + ".report.json", report_to_json(report));
  std::cout << "wrote " << out_prefix << ".proposal.json and " << out_prefix << ".report.json\n";
  return 0;
}

int cmd_estimate(const std::string& proposal_path, const std::string& target_spec,
                 std::size_t n_samples, std::uint64_t seed, const std::string& out_path) {
  std::ifstream in(proposal_path);
  if (!in) throw config_error("cannot open proposal file '" + proposal_path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const MixtureProposal proposal = proposal_from_json(buf.str());

  Target target;
  if (target_spec == "self") {
    target.dim = proposal.dim();
    target.log_density = [proposal](const Vec& x) { return mixture_log_pdf(proposal, x); };
    target.grad_log_density = [proposal](const Vec& x) {
      return mixture_grad_log_pdf(proposal, x);
    };
  } else {
    target = parse_target(target_spec).target;
  }
  if (target.dim != proposal.dim())
    throw config_error("proposal dimension " + std::to_string(proposal.dim()) +
                       " does not match target dimension " + std::to_string(target.dim));

  WeightedBatch batch = sample(proposal, n_samples, seed);
  batch.log_p.resize(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s)
    batch.log_p[s] = target.log_density(batch.points[s]);
  batch.norm_weights = stable_normalized_weights(batch.log_p, batch.log_q);
  const FklEstimate est = snis_fkl(batch);

  const int d = proposal.dim();
  Vec mean(d, 0.0), second(d, 0.0);
  for (std::size_t s = 0; s < batch.size(); ++s)
    for (int i = 0; i < d; ++i) {
      mean[i] += batch.norm_weights[s] * batch.points[s][i];
      second[i] += batch.norm_weights[s] * batch.points[s][i] * batch.points[s][i];
    }
  Vec var(d);
  for (int i = 0; i < d; ++i) var[i] = second[i] - mean[i] * mean[i];

  nlohmann::json j;
  j["mean"] = mean;
  j["var_diag"] = var;
  j["ess"] = est.ess;
  j["snis_fkl"] = est.value;
  const std::string text = j.dump(2);
  std::cout << text << "\n";
  if (!out_path.empty()) write_text_atomic(out_path, text);
  return 0;
}

/// Desk-scale settings for the simulation suites, within the tuning ranges
/// the regression experiments use. A --config file replaces them wholesale.
BoostConfig simulation_defaults(BoostConfig cfg) {
  cfg.steps_per_component = 800;
  cfg.samples_per_batch = 2000;
  cfg.lr_mean = 0.05;
  cfg.lr_scale = 0.05;
  cfg.lr_gamma = 0.05;
  cfg.lr_weights = 0.1;
  cfg.init_sigma = 1.0;
  cfg.rkl_warmstart_steps = 400;
  return cfg;
}

int cmd_experiment(const std::string& name, const RunConfig& run, bool have_config,
                   std::uint64_t seed, int n_seeds, int k_max, const std::string& data_path,
                   int n_splits, const std::string& prior, const std::string& methods_csv,
                   std::size_t eval_samples, int jobs, const std::string& out_prefix,
                   const std::string& dump_dir) {
  BoostConfig boost_cfg = run.boost;
  if (!have_config && (name == "cauchy" || name == "gmm20"))
    boost_cfg = simulation_defaults(boost_cfg);
  boost_cfg.seed = seed;
  HmcConfig hmc_cfg = run.hmc;
  hmc_cfg.seed = seed;

  if (name == "cauchy") {
    std::vector<int> ks(k_max);
    for (int i = 0; i < k_max; ++i) ks[i] = i + 1;
    const auto rows = run_cauchy_experiment(boost_cfg, n_seeds, ks);
    write_text_atomic(out_prefix + ".curve.csv", curve_rows_to_csv(rows));
    std::cout << "wrote " << out_prefix << ".curve.csv\n";
    return 0;
  }
  if (name == "gmm20") {
    std::vector<int> ks(k_max);
    for (int i = 0; i < k_max; ++i) ks[i] = i + 1;
    std::map<int, Vec> grids;
    const auto rows = run_gmm20_experiment(boost_cfg, make_gmm20_spec(), n_seeds, ks,
                                           eval_samples, &grids);
    write_text_atomic(out_prefix + ".curve.csv", curve_rows_to_csv(rows));
    for (const auto& [k, grid] : grids) {
      std::ostringstream csv;
      csv << "x,y,stab_log_residual\n";
      const int side = 200;
      const double h = 14.0 / (side - 1);
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
          char buf[96];
          std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.10g\n", -2.0 + h * j, -2.0 + h * i,
                        grid[static_cast<std::size_t>(i) * side + j]);
          csv << buf;
        }
      write_text_atomic(out_prefix + ".residual_k" + std::to_string(k) + ".csv", csv.str());
    }
    std::cout << "wrote " << out_prefix << ".curve.csv and residual grids\n";
    return 0;
  }
  if (name == "blr") {
    if (data_path.empty()) throw config_error("experiment blr requires --data");
    const RawDataset raw = load_regression_csv(data_path);
    BlrExperimentConfig cfg;
    cfg.prior = prior == "heavy" ? BlrPrior::heavy : BlrPrior::gaussian;
    if (prior != "heavy" && prior != "gaussian")
      throw config_error("--prior must be gaussian or heavy");
    cfg.n_splits = n_splits;
    cfg.eval_samples = eval_samples;
    cfg.jobs = jobs;
    cfg.hmc_dump_dir = dump_dir;
    std::stringstream ss(methods_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) cfg.methods.push_back(item);
    std::vector<BlrSplitRow> split_rows;
    const auto results = run_blr_experiment(raw, cfg, boost_cfg, hmc_cfg, &split_rows);
    write_text_atomic(out_prefix + ".results.csv", split_rows_to_csv(split_rows));
    write_text_atomic(out_prefix + ".aggregate.json", results_to_json(results, cfg.n_splits));
    std::cout << "wrote " << out_prefix << ".results.csv and " << out_prefix
              << ".aggregate.json\n";
    return 0;
  }
  throw config_error("unknown experiment '" + name + "'");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"forward-KL variational boosting for importance sampling proposals"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON run config (schema_version 1)");

  // fit
  auto* fit = app.add_subcommand("fit", "fit a proposal to a built-in or CSV target");
  std::string fit_target, fit_method = "fkl-vb", fit_out = "fit";
  int fit_k = 3;
  std::optional<std::uint64_t> fit_seed;
  fit->add_option("--target", fit_target, "cauchy | gmm20 | blr:<csv> | blr-heavy:<csv>")
      ->required();
  fit->add_option("--method", fit_method, "rkl-vi | fkl-vi | rkl-vb | fkl-vb");
  fit->add_option("--k", fit_k, "number of boosting components");
  fit->add_option("--seed", fit_seed, "RNG seed");
  fit->add_option("--out", fit_out, "output path prefix");

  // experiment
  auto* exp = app.add_subcommand("experiment", "run a reproduction experiment suite");
  std::string exp_name, exp_data, exp_prior = "gaussian", exp_out = "experiment";
  std::string exp_methods = "hmc,rkl_vi,rkl_vb_2,rkl_vb_3,fkl_vi,fkl_vb_2,fkl_vb_3";
  std::string exp_dump_dir;
  int exp_seeds = 10, exp_k = 3, exp_splits = 20, exp_jobs = 1;
  std::size_t exp_eval_samples = 6000;
  std::optional<std::uint64_t> exp_seed;
  exp->add_option("--name", exp_name, "cauchy | gmm20 | blr")->required();
  exp->add_option("--seeds", exp_seeds, "number of replicate seeds (cauchy/gmm20)");
  exp->add_option("--k", exp_k, "largest boosting size");
  exp->add_option("--data", exp_data, "dataset CSV (blr)");
  exp->add_option("--splits", exp_splits, "train/test splits (blr)");
  exp->add_option("--prior", exp_prior, "gaussian | heavy (blr)");
  exp->add_option("--methods", exp_methods, "comma-separated method list (blr)");
  exp->add_option("--eval-samples", exp_eval_samples, "posterior samples per evaluation");
  exp->add_option("--jobs", exp_jobs, "worker threads across splits");
  exp->add_option("--seed", exp_seed, "RNG seed");
  exp->add_option("--out", exp_out, "output path prefix");
  exp->add_option("--dump-samples", exp_dump_dir, "directory for HMC draw CSVs (blr)");

  // estimate
  auto* est = app.add_subcommand("estimate", "SNIS moment estimates under a saved proposal");
  std::string est_proposal, est_target, est_out;
  std::size_t est_samples = 1000;
  std::optional<std::uint64_t> est_seed;
  est->add_option("--proposal", est_proposal, "proposal JSON path")->required();
  est->add_option("--target", est_target, "target spec, or 'self' for a self-test")->required();
  est->add_option("--samples", est_samples, "number of draws");
  est->add_option("--seed", est_seed, "RNG seed");
  est->add_option("--out", est_out, "also write the JSON result here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig run;
    if (!config_path.empty()) run = load_run_config(config_path);
    if (fit->parsed()) {
      const std::uint64_t seed = resolve_seed(fit_seed, run.seed);
      return cmd_fit(fit_target, fit_method, fit_k, run, seed, fit_out);
    }
    if (exp->parsed()) {
      const std::uint64_t seed = resolve_seed(exp_seed, run.seed);
      return cmd_experiment(exp_name, run, !config_path.empty(), seed, exp_seeds, exp_k,
                            exp_data, exp_splits, exp_prior, exp_methods, exp_eval_samples,
                            exp_jobs, exp_out, exp_dump_dir);
    }
    if (est->parsed()) {
      const std::uint64_t seed = resolve_seed(est_seed, run.seed);
      return cmd_estimate(est_proposal, est_target, est_samples, seed, est_out);
    }
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const numerical_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace fklboost
