#include "fklboost/mixture.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace fklboost {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;

double floored(double s) { return std::max(std::fabs(s), kScaleFloor); }

/// Normalizer of a univariate standard student-t with nu dof.
double t_log_norm(double nu) {
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI);
}

}  // namespace

double component_log_pdf(const Component& c, const Vec& x) {
  if (x.size() != c.mean.size())
    throw numerical_error("component_log_pdf: dimension mismatch");
  const int d = c.dim();
  double acc = 0.0;
  if (c.kind == ComponentKind::gaussian) {
    for (int i = 0; i < d; ++i) {
      const double sd = floored(c.root_scale[i]);
      const double z = (x[i] - c.mean[i]) / sd;
      acc += -0.5 * kLogTwoPi - std::log(sd) - 0.5 * z * z;
    }
  } else {
    const double ln = t_log_norm(c.nu);
    for (int i = 0; i < d; ++i) {
      const double sd = floored(c.root_scale[i]);
      const double z = (x[i] - c.mean[i]) / sd;
      acc += ln - std::log(sd) - 0.5 * (c.nu + 1.0) * std::log1p(z * z / c.nu);
    }
  }
  return acc;
}

Vec component_grad_log_pdf(const Component& c, const Vec& x) {
  const int d = c.dim();
  Vec g(d);
  for (int i = 0; i < d; ++i) {
    const double sd = floored(c.root_scale[i]);
    const double z = (x[i] - c.mean[i]) / sd;
    if (c.kind == ComponentKind::gaussian) {
      g[i] = -z / sd;
    } else {
      g[i] = -(c.nu + 1.0) * z / (sd * (c.nu + z * z));
    }
  }
  return g;
}

void accumulate_component_param_grad(const Component& c, const Vec& x, double coeff,
                                     Vec& d_mean, Vec& d_root_scale) {
  const int d = c.dim();
  for (int i = 0; i < d; ++i) {
    // Differentiate w.r.t. the signed root scale: the pdf depends on s^2, so
    // d/ds log f is odd in s and the same expression works for either sign.
    const double s = c.root_scale[i];
    const double sd = floored(s);
    const double ssign = s < 0.0 ? -1.0 : 1.0;
    const double z = (x[i] - c.mean[i]) / sd;
    if (c.kind == ComponentKind::gaussian) {
      d_mean[i] += coeff * z / sd;
      d_root_scale[i] += coeff * ssign * (z * z - 1.0) / sd;
    } else {
      const double w = (c.nu + 1.0) / (c.nu + z * z);
      d_mean[i] += coeff * w * z / sd;
      d_root_scale[i] += coeff * ssign * (w * z * z - 1.0) / sd;
    }
  }
}

double mixture_log_pdf(const MixtureProposal& q, const Vec& x) {
  Vec terms;
  terms.reserve(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q.weights[k] <= 0.0) continue;
    terms.push_back(std::log(q.weights[k]) + component_log_pdf(q.components[k], x));
  }
  return log_sum_exp(terms);
}

Vec mixture_grad_log_pdf(const MixtureProposal& q, const Vec& x) {
  const int d = q.dim();
  Vec logs(q.size(), kNegInf);
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q.weights[k] <= 0.0) continue;
    logs[k] = std::log(q.weights[k]) + component_log_pdf(q.components[k], x);
  }
  const double lq = log_sum_exp(logs);
  Vec g(d, 0.0);
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (logs[k] == kNegInf) continue;
    const double resp = std::exp(logs[k] - lq);
    const Vec gk = component_grad_log_pdf(q.components[k], x);
    for (int i = 0; i < d; ++i) g[i] += resp * gk[i];
  }
  return g;
}

Vec sample_component(const Component& c, Rng& rng) {
  const int d = c.dim();
  Vec x(d);
  for (int i = 0; i < d; ++i) {
    const double e = c.kind == ComponentKind::gaussian ? rng.normal() : rng.student_t(c.nu);
    x[i] = c.mean[i] + floored(c.root_scale[i]) * e;
  }
  return x;
}

WeightedBatch sample(const MixtureProposal& q, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw config_error("sample: need at least one draw");
  validate_proposal(q);
  Rng rng(seed);
  WeightedBatch batch;
  batch.seed = seed;
  batch.points.reserve(n);
  batch.log_q.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t k = rng.categorical(q.weights);
    Vec x = sample_component(q.components[k], rng);
    batch.log_q.push_back(mixture_log_pdf(q, x));
    batch.points.push_back(std::move(x));
  }
  return batch;
}

MixtureProposal add_component(const MixtureProposal& q, const Component& f, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw config_error("add_component: gamma must lie in (0, 1)");
  if (f.dim() != q.dim())
    throw config_error("add_component: component dimension mismatch");
  MixtureProposal out = q;
  for (double& w : out.weights) w *= 1.0 - gamma;
  out.components.push_back(f);
  out.weights.push_back(gamma);
  double total = 0.0;
  for (double w : out.weights) total += w;
  for (double& w : out.weights) w /= total;
  return out;
}

void validate_proposal(const MixtureProposal& q) {
  if (q.components.empty()) throw numerical_error("proposal has no components");
  if (q.weights.size() != q.components.size())
    throw numerical_error("proposal weight/component count mismatch");
  const int d = q.dim();
  double total = 0.0;
  for (double w : q.weights) {
    if (!(w >= 0.0)) throw numerical_error("proposal weight is negative or NaN");
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-12) throw numerical_error("proposal weights do not sum to 1");
  for (const Component& c : q.components) {
    if (c.dim() != d || c.root_scale.size() != c.mean.size())
      throw numerical_error("proposal component dimensions disagree");
    if (!all_finite(c.mean) || !all_finite(c.root_scale))
      throw numerical_error("proposal component has non-finite parameters");
  }
}

Vec mixture_mean(const MixtureProposal& q) {
  const int d = q.dim();
  Vec m(d, 0.0);
  for (std::size_t k = 0; k < q.size(); ++k)
    for (int i = 0; i < d; ++i) m[i] += q.weights[k] * q.components[k].mean[i];
  return m;
}

Vec mixture_cov_diag(const MixtureProposal& q) {
  const int d = q.dim();
  const Vec m = mixture_mean(q);
  Vec second(d, 0.0);
  for (std::size_t k = 0; k < q.size(); ++k) {
    const Component& c = q.components[k];
    for (int i = 0; i < d; ++i) {
      const double sd = floored(c.root_scale[i]);
      double var = sd * sd;
      if (c.kind == ComponentKind::student_t)
        var *= c.nu > 2.0 ? c.nu / (c.nu - 2.0) : std::numeric_limits<double>::infinity();
      second[i] += q.weights[k] * (var + c.mean[i] * c.mean[i]);
    }
  }
  Vec cov(d);
  for (int i = 0; i < d; ++i) cov[i] = second[i] - m[i] * m[i];
  return cov;
}

std::string proposal_to_json(const MixtureProposal& q) {
  nlohmann::json j;
  j["dim"] = q.dim();
  j["weights"] = q.weights;
  j["components"] = nlohmann::json::array();
  for (const Component& c : q.components) {
    nlohmann::json jc;
    jc["kind"] = c.kind == ComponentKind::gaussian ? "gaussian" : "student_t";
    if (c.kind == ComponentKind::student_t) jc["nu"] = c.nu;
    jc["mean"] = c.mean;
    jc["root_scale"] = c.root_scale;
    j["components"].push_back(std::move(jc));
  }
  return j.dump(2);
}

MixtureProposal proposal_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("proposal JSON parse failure: ") + e.what());
  }
  MixtureProposal q;
  try {
    q.weights = j.at("weights").get<Vec>();
    for (const auto& jc : j.at("components")) {
      Component c;
      const std::string kind = jc.at("kind").get<std::string>();
      if (kind == "gaussian") {
        c.kind = ComponentKind::gaussian;
      } else if (kind == "student_t") {
        c.kind = ComponentKind::student_t;
        c.nu = jc.at("nu").get<double>();
      } else {
        throw config_error("proposal JSON: unknown component kind '" + kind + "'");
      }
      c.mean = jc.at("mean").get<Vec>();
      c.root_scale = jc.at("root_scale").get<Vec>();
      q.components.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("proposal JSON missing field: ") + e.what());
  }
  validate_proposal(q);
  return q;
}

MixtureProposal single_component_proposal(Component c) {
  MixtureProposal q;
  q.components.push_back(std::move(c));
  q.weights = {1.0};
  return q;
}

}  // namespace fklboost
