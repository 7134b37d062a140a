#include "fklboost/boost.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <json.hpp>

#include "fklboost/snis.hpp"

namespace fklboost {

namespace {

double floored(double s) { return std::max(std::fabs(s), kScaleFloor); }

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void require(bool ok, const char* field) {
  if (!ok) throw config_error(std::string("boost config: invalid value for '") + field + "'");
}

Component initial_component(int dim, ComponentKind kind, double nu, double sigma,
                            std::uint64_t seed) {
  Rng rng(seed);
  Component c;
  c.kind = kind;
  c.nu = nu;
  c.mean.assign(dim, 0.0);
  c.root_scale.resize(dim);
  for (int i = 0; i < dim; ++i) c.root_scale[i] = sigma * rng.normal();
  return c;
}

/// Fill log_p and normalized weights for a batch whose points/log_q are set.
void complete_batch(WeightedBatch& batch, const Target& target) {
  const std::size_t n = batch.size();
  batch.log_p.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    batch.log_p[s] = target.log_density(batch.points[s]);
    if (!std::isfinite(batch.log_p[s]))
      throw numerical_error("boost: target log-density non-finite at a batch point");
  }
  batch.norm_weights = stable_normalized_weights(batch.log_p, batch.log_q);
}

FklEstimate diagnostic_fkl(const Target& target, const MixtureProposal& q, int n,
                           std::uint64_t seed) {
  WeightedBatch batch = sample(q, static_cast<std::size_t>(n), seed);
  complete_batch(batch, target);
  return snis_fkl(batch);
}

/// Shared ADAM loop for the single-component VI fits. When a forward-KL
/// refinement phase runs, the refined parameters must beat the warm start on
/// a fresh self-sampled estimate or the warm start is kept: near a sharply
/// concentrated optimum the through-the-weights gradient noise makes fixed-lr
/// ADAM diffuse at the learning-rate scale instead of parking.
Component run_vi(const Target& target, const BoostConfig& cfg, Component c, int rkl_steps,
                 int fkl_steps, std::uint64_t seed) {
  AdamState mean_st = make_adam(c.mean, cfg.lr_mean);
  AdamState scale_st = make_adam(c.root_scale, cfg.lr_scale);
  const std::size_t n = static_cast<std::size_t>(cfg.samples_per_batch);
  const int total = rkl_steps + fkl_steps;
  Component warm = c;
  for (int step = 0; step < total; ++step) {
    const auto noise = draw_component_noise(c.kind, c.nu, n, target.dim,
                                            derive_seed(seed, 1000 + static_cast<std::uint64_t>(step)));
    const bool rkl_phase = step < rkl_steps;
    const auto [obj, grad] = rkl_phase ? rkl_objective_and_grad(target, c, noise)
                                       : selfsample_fkl_grad(target, c, noise);
    if (!std::isfinite(obj))
      throw numerical_error("vi fit: non-finite objective at step " + std::to_string(step));
    mean_st = adam_step(std::move(mean_st), grad.d_mean);
    scale_st = adam_step(std::move(scale_st), grad.d_root_scale);
    c.mean = mean_st.params;
    c.root_scale = scale_st.params;
    if (step + 1 == rkl_steps) warm = c;
  }
  if (fkl_steps > 0 && rkl_steps > 0) {
    const auto eval_noise =
        draw_component_noise(c.kind, c.nu, n, target.dim, derive_seed(seed, 777));
    const double refined = selfsample_fkl_grad(target, c, eval_noise).first;
    const double warm_value = selfsample_fkl_grad(target, warm, eval_noise).first;
    if (!(refined < warm_value)) return warm;
  }
  return c;
}

}  // namespace

void BoostConfig::validate() const {
  require(k >= 1, "k");
  require(steps_per_component >= 1, "steps_per_component");
  require(samples_per_batch >= 1, "samples_per_batch");
  require(lr_mean > 0.0, "lr_mean");
  require(lr_scale > 0.0, "lr_scale");
  require(lr_gamma > 0.0, "lr_gamma");
  require(lr_weights > 0.0, "lr_weights");
  require(init_sigma > 0.0, "init_sigma");
  require(init_heuristic_steps >= 1, "init_heuristic_steps");
  require(init_heuristic_lr > 0.0, "init_heuristic_lr");
  require(rkl_warmstart_steps >= 0, "rkl_warmstart_steps");
  require(weight_search_steps >= 1, "weight_search_steps");
  require(weight_search_rounds >= 1, "weight_search_rounds");
  require(component_kind == ComponentKind::gaussian || nu > 0.0, "nu");
}

Component fit_rkl_vi(const Target& target, const BoostConfig& cfg) {
  cfg.validate();
  Component c = initial_component(target.dim, cfg.component_kind, cfg.nu, cfg.init_sigma,
                                  derive_seed(cfg.seed, 11));
  return run_vi(target, cfg, std::move(c), cfg.steps_per_component, 0, derive_seed(cfg.seed, 12));
}

Component fit_fkl_vi(const Target& target, const BoostConfig& cfg) {
  cfg.validate();
  Component c = initial_component(target.dim, cfg.component_kind, cfg.nu, cfg.init_sigma,
                                  derive_seed(cfg.seed, 11));
  return run_vi(target, cfg, std::move(c), cfg.rkl_warmstart_steps, cfg.steps_per_component,
                derive_seed(cfg.seed, 12));
}

namespace {

constexpr double kResidualLogEps = -10.0;

/// Gradient of the stabilized residual log(p + eps) - log(q + eps). The raw
/// residual has no maximum when q's tail is thinner than p's (it keeps
/// growing into the tail), while the eps floor parks the maximum at the
/// uncovered target mode: the q pull switches off where q << eps and the p
/// pull switches off where p << eps.
Vec stabilized_residual_grad(const Target& target, const MixtureProposal& q_prev, const Vec& x) {
  const double lp = target.log_density(x);
  const double lq = mixture_log_pdf(q_prev, x);
  const double wp = sigmoid(lp - kResidualLogEps);  // p / (p + eps)
  const double wq = sigmoid(lq - kResidualLogEps);
  Vec g = target.grad_log_density(x);
  const Vec gq = mixture_grad_log_pdf(q_prev, x);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = wp * g[i] - wq * gq[i];
  return g;
}

}  // namespace

Vec init_new_component(const Target& target, const MixtureProposal& q_prev,
                       const BoostConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 21));
  const int max_restarts = 5;
  Vec best;
  double best_value = kNegInf;
  for (int attempt = 0; attempt < max_restarts; ++attempt) {
    const std::size_t k = rng.categorical(q_prev.weights);
    Vec x = sample_component(q_prev.components[k], rng);
    // ADAM-damped ascent keeps the step size O(lr) across target scales.
    AdamState st = make_adam(x, cfg.init_heuristic_lr);
    bool diverged = false;
    for (int step = 0; step < cfg.init_heuristic_steps; ++step) {
      Vec g = stabilized_residual_grad(target, q_prev, st.params);
      if (!all_finite(g)) {
        diverged = true;
        break;
      }
      double norm = 0.0;
      for (double gi : g) norm += gi * gi;
      if (norm < 1e-16) break;  // flat residual (e.g. q_prev already matches p)
      for (double& gi : g) gi = -gi;  // minimize the negated residual
      st = adam_step(std::move(st), g);
    }
    if (diverged || !all_finite(st.params)) continue;
    const double lp = target.log_density(st.params);
    if (!std::isfinite(lp)) continue;
    const double value = stabilized_log_residual(lp, mixture_log_pdf(q_prev, st.params));
    // Keep the best endpoint across restarts; trajectories started on the
    // covered side can stall on the flat far-tail plateau where the
    // stabilized residual is ~0.
    if (value > best_value) {
      best_value = value;
      best = st.params;
    }
  }
  if (!best.empty()) return best;
  // Every restart diverged; fall back to a plain draw from q_prev.
  const std::size_t k = rng.categorical(q_prev.weights);
  return sample_component(q_prev.components[k], rng);
}

std::pair<Component, double> fit_fkl_component(const Target& target,
                                               const MixtureProposal& q_prev,
                                               const BoostConfig& cfg, std::uint64_t seed,
                                               IterationRecord* record) {
  cfg.validate();
  WeightedBatch batch =
      sample(q_prev, static_cast<std::size_t>(cfg.samples_per_batch), derive_seed(seed, 31));
  complete_batch(batch, target);
  const double batch_ess = ess(batch.norm_weights);
  const double baseline = snis_fkl(batch).value;  // objective at gamma = 0

  Component f;
  f.kind = cfg.component_kind;
  f.nu = cfg.nu;
  f.mean = init_new_component(target, q_prev, cfg, derive_seed(seed, 32));
  {
    Rng rng(derive_seed(seed, 33));
    f.root_scale.resize(target.dim);
    for (int i = 0; i < target.dim; ++i) f.root_scale[i] = cfg.init_sigma * rng.normal();
  }
  double gamma_logit = 0.0;

  AdamState mean_st = make_adam(f.mean, cfg.lr_mean);
  AdamState scale_st = make_adam(f.root_scale, cfg.lr_scale);
  AdamState gamma_st = make_adam({gamma_logit}, cfg.lr_gamma);

  for (int step = 0; step < cfg.steps_per_component; ++step) {
    const GradientBundle grad = boost_objective_grad(batch, f, gamma_logit);
    mean_st = adam_step(std::move(mean_st), grad.d_mean);
    scale_st = adam_step(std::move(scale_st), grad.d_root_scale);
    gamma_st = adam_step(std::move(gamma_st), {grad.d_gamma_logit});
    f.mean = mean_st.params;
    f.root_scale = scale_st.params;
    gamma_logit = gamma_st.params[0];
    if (step % 50 == 0 || step + 1 == cfg.steps_per_component) {
      const double obj = snis_boost_objective(batch, f, sigmoid(gamma_logit));
      if (!std::isfinite(obj))
        throw numerical_error("fit_fkl_component: non-finite objective at step " +
                              std::to_string(step));
    }
  }
  // Accept the fitted pair only if it also lowers the objective on a fresh
  // batch; components that merely overfit the training draws (SNIS spikes)
  // do not generalize and enter with negligible weight instead.
  WeightedBatch val =
      sample(q_prev, static_cast<std::size_t>(cfg.samples_per_batch), derive_seed(seed, 34));
  complete_batch(val, target);
  const double val_baseline = snis_fkl(val).value;
  double gamma = sigmoid(gamma_logit);
  const double val_obj = snis_boost_objective(val, f, gamma);
  if (!(val_obj < val_baseline)) gamma = 1e-6;
  if (record) {
    record->objective_before = val_baseline;
    record->objective_after = std::min(val_obj, val_baseline);
    record->batch_ess = batch_ess;
    record->low_ess_warning = batch_ess < 2.0;
  }
  return {f, gamma};
}

std::pair<Component, double> fit_rkl_component(const Target& target,
                                               const MixtureProposal& q_prev,
                                               const BoostConfig& cfg, std::uint64_t seed,
                                               IterationRecord* record) {
  cfg.validate();

  // Reverse-KL boosting: mode-seeking fit of the new component against the
  // target, started from the residual mode so an uncovered mode attracts it.
  // Fitting against the remainder p/q_prev instead is unbounded below
  // whenever q_prev has thinner tails than p, so the plain target objective
  // is used and the mixture weight is left to the fully-corrective search.
  Component f;
  f.kind = cfg.component_kind;
  f.nu = cfg.nu;
  f.mean = init_new_component(target, q_prev, cfg, derive_seed(seed, 32));
  {
    Rng rng(derive_seed(seed, 33));
    f.root_scale.resize(target.dim);
    for (int i = 0; i < target.dim; ++i) f.root_scale[i] = cfg.init_sigma * rng.normal();
  }

  AdamState mean_st = make_adam(f.mean, cfg.lr_mean);
  AdamState scale_st = make_adam(f.root_scale, cfg.lr_scale);
  double first_obj = 0.0;
  double last_obj = 0.0;
  for (int step = 0; step < cfg.steps_per_component; ++step) {
    const auto noise =
        draw_component_noise(f.kind, f.nu, static_cast<std::size_t>(cfg.samples_per_batch),
                             target.dim, derive_seed(seed, 4000 + static_cast<std::uint64_t>(step)));
    const auto [obj, grad] = rkl_objective_and_grad(target, f, noise);
    if (!std::isfinite(obj))
      throw numerical_error("fit_rkl_component: non-finite objective at step " +
                            std::to_string(step));
    if (step == 0) first_obj = obj;
    last_obj = obj;
    mean_st = adam_step(std::move(mean_st), grad.d_mean);
    scale_st = adam_step(std::move(scale_st), grad.d_root_scale);
    f.mean = mean_st.params;
    f.root_scale = scale_st.params;
  }
  if (record) {
    record->objective_before = first_obj;
    record->objective_after = last_obj;
  }
  return {f, 0.5};
}

namespace {

MixtureProposal fully_corrective_fkl(const Target& target, const MixtureProposal& q,
                                     const BoostConfig& cfg, std::uint64_t seed, Vec* trace) {
  WeightedBatch batch =
      sample(q, static_cast<std::size_t>(cfg.samples_per_batch), derive_seed(seed, 41));
  complete_batch(batch, target);
  const std::size_t n = batch.size();
  const std::size_t kc = q.size();

  // Component log-densities are fixed across the search; only lambda moves.
  std::vector<Vec> comp_logpdf(n, Vec(kc));
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < kc; ++k)
      comp_logpdf[s][k] = component_log_pdf(q.components[k], batch.points[s]);

  auto eval = [&](const Vec& lambda, Vec& log_qs, Vec& w) {
    log_qs.resize(n);
    Vec terms(kc);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < kc; ++k)
        terms[k] = lambda[k] > 0.0 ? std::log(lambda[k]) + comp_logpdf[s][k] : kNegInf;
      log_qs[s] = log_sum_exp(terms);
    }
    w = stable_normalized_weights(batch.log_p, log_qs);
    double obj = 0.0;
    for (std::size_t s = 0; s < n; ++s) obj += w[s] * (batch.log_p[s] - log_qs[s]);
    return obj;
  };

  Vec lambda = q.weights;
  Vec log_qs, w;
  double obj = eval(lambda, log_qs, w);
  if (trace) trace->push_back(obj);
  double lr = cfg.lr_weights;
  for (int step = 0; step < cfg.weight_search_steps && lr > 1e-12; ++step) {
    Vec grad(kc, 0.0);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t k = 0; k < kc; ++k)
        grad[k] -= w[s] * std::exp(comp_logpdf[s][k] - log_qs[s]);
    bool accepted = false;
    while (lr > 1e-12) {
      Vec cand(kc);
      for (std::size_t k = 0; k < kc; ++k) cand[k] = lambda[k] - lr * grad[k];
      cand = project_simplex(cand);
      Vec cand_log_qs, cand_w;
      const double cand_obj = eval(cand, cand_log_qs, cand_w);
      if (cand_obj <= obj) {
        lambda = std::move(cand);
        log_qs = std::move(cand_log_qs);
        w = std::move(cand_w);
        obj = cand_obj;
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;
    if (trace) trace->push_back(obj);
  }
  MixtureProposal out = q;
  out.weights = lambda;
  validate_proposal(out);
  return out;
}

MixtureProposal fully_corrective_rkl(const Target& target, const MixtureProposal& q,
                                     const BoostConfig& cfg, std::uint64_t seed, Vec* trace) {
  const std::size_t kc = q.size();
  const std::size_t n = static_cast<std::size_t>(cfg.samples_per_batch);
  Rng rng(derive_seed(seed, 42));

  // One set of draws per component, reused across the whole search.
  std::vector<std::vector<Vec>> points(kc);
  std::vector<Vec> log_p(kc, Vec(n));
  std::vector<std::vector<Vec>> comp_logpdf(kc);  // [k][s][j]
  for (std::size_t k = 0; k < kc; ++k) {
    points[k].reserve(n);
    comp_logpdf[k].assign(n, Vec(kc));
    for (std::size_t s = 0; s < n; ++s) {
      Vec x = sample_component(q.components[k], rng);
      log_p[k][s] = target.log_density(x);
      for (std::size_t j = 0; j < kc; ++j)
        comp_logpdf[k][s][j] = component_log_pdf(q.components[j], x);
      points[k].push_back(std::move(x));
    }
  }

  // Per-component means of log q_lambda - log p; the stratified objective is
  // sum_k lambda_k m_k and the simplex gradient is m itself.
  auto means = [&](const Vec& lambda) {
    Vec m(kc, 0.0);
    Vec terms(kc);
    for (std::size_t k = 0; k < kc; ++k) {
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t j = 0; j < kc; ++j)
          terms[j] = lambda[j] > 0.0 ? std::log(lambda[j]) + comp_logpdf[k][s][j] : kNegInf;
        m[k] += log_sum_exp(terms) - log_p[k][s];
      }
      m[k] /= static_cast<double>(n);
    }
    return m;
  };

  Vec lambda = q.weights;
  Vec m = means(lambda);
  double obj = dot(lambda, m);
  if (trace) trace->push_back(obj);
  double lr = cfg.lr_weights;
  for (int step = 0; step < cfg.weight_search_steps && lr > 1e-12; ++step) {
    bool accepted = false;
    while (lr > 1e-12) {
      Vec cand(kc);
      for (std::size_t k = 0; k < kc; ++k) cand[k] = lambda[k] - lr * m[k];
      cand = project_simplex(cand);
      const Vec cand_m = means(cand);
      const double cand_obj = dot(cand, cand_m);
      if (cand_obj <= obj) {
        lambda = std::move(cand);
        m = cand_m;
        obj = cand_obj;
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;
    if (trace) trace->push_back(obj);
  }
  MixtureProposal out = q;
  out.weights = lambda;
  validate_proposal(out);
  return out;
}

}  // namespace

MixtureProposal fully_corrective_weights(const Target& target, const MixtureProposal& q,
                                         const BoostConfig& cfg, std::uint64_t seed,
                                         Vec* trace) {
  if (q.size() < 2) throw config_error("fully_corrective_weights: need at least 2 components");
  // The SNIS objective evaluated on a batch from q_lambda0 is biased toward
  // lambda0 itself; re-drawing from the updated mixture each round makes the
  // fixed point the true minimizer. The recorded trace is the final round's.
  MixtureProposal out = q;
  for (int round = 0; round < cfg.weight_search_rounds; ++round) {
    Vec* round_trace = round + 1 == cfg.weight_search_rounds ? trace : nullptr;
    const std::uint64_t round_seed = derive_seed(seed, 300 + static_cast<std::uint64_t>(round));
    out = cfg.divergence == Divergence::fkl
              ? fully_corrective_fkl(target, out, cfg, round_seed, round_trace)
              : fully_corrective_rkl(target, out, cfg, round_seed, round_trace);
  }
  return out;
}

std::pair<MixtureProposal, FitReport> boost(const Target& target, const BoostConfig& cfg,
                                            const BoostObserver& on_iteration) {
  cfg.validate();
  FitReport report;
  const int diag_n = cfg.samples_per_batch;

  double t0 = now_ms();
  Component first = cfg.k == 1 && cfg.divergence == Divergence::fkl ? fit_fkl_vi(target, cfg)
                                                                    : fit_rkl_vi(target, cfg);
  MixtureProposal proposal = single_component_proposal(std::move(first));
  validate_proposal(proposal);
  {
    IterationRecord rec;
    rec.iteration = 1;
    const FklEstimate est = diagnostic_fkl(target, proposal, diag_n, derive_seed(cfg.seed, 91));
    rec.snis_fkl = est.value;
    rec.ess = est.ess;
    rec.gamma = 1.0;
    rec.weights = proposal.weights;
    rec.wallclock_ms = now_ms() - t0;
    report.iterations.push_back(std::move(rec));
  }
  if (on_iteration) on_iteration(1, proposal);

  for (int iter = 2; iter <= cfg.k; ++iter) {
    t0 = now_ms();
    IterationRecord rec;
    rec.iteration = iter;
    const std::uint64_t iter_seed = derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(iter));
    auto [f, gamma] = cfg.divergence == Divergence::fkl
                          ? fit_fkl_component(target, proposal, cfg, iter_seed, &rec)
                          : fit_rkl_component(target, proposal, cfg, iter_seed, &rec);
    gamma = std::clamp(gamma, 1e-9, 1.0 - 1e-9);
    proposal = add_component(proposal, f, gamma);
    proposal = fully_corrective_weights(target, proposal, cfg, derive_seed(iter_seed, 7));
    validate_proposal(proposal);
    const FklEstimate est =
        diagnostic_fkl(target, proposal, diag_n, derive_seed(cfg.seed, 900 + iter));
    rec.snis_fkl = est.value;
    rec.ess = est.ess;
    rec.gamma = gamma;
    rec.weights = proposal.weights;
    rec.wallclock_ms = now_ms() - t0;
    report.iterations.push_back(std::move(rec));
    if (on_iteration) on_iteration(iter, proposal);
  }
  return {proposal, report};
}

std::string report_to_json(const FitReport& report) {
  nlohmann::json j;
  j["iterations"] = nlohmann::json::array();
  for (const IterationRecord& rec : report.iterations) {
    nlohmann::json jr;
    jr["iteration"] = rec.iteration;
    jr["snis_fkl"] = rec.snis_fkl;
    if (rec.exact_fkl) jr["exact_fkl"] = *rec.exact_fkl;
    jr["ess"] = rec.ess;
    jr["gamma"] = rec.gamma;
    jr["weights"] = rec.weights;
    jr["objective_before"] = rec.objective_before;
    jr["objective_after"] = rec.objective_after;
    jr["batch_ess"] = rec.batch_ess;
    jr["low_ess_warning"] = rec.low_ess_warning;
    jr["wallclock_ms"] = rec.wallclock_ms;
    j["iterations"].push_back(std::move(jr));
  }
  return j.dump(2);
}

}  // namespace fklboost
