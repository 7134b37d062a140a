#ifndef FKLBOOST_MIXTURE_HPP
#define FKLBOOST_MIXTURE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "fklboost/common.hpp"

namespace fklboost {

enum class ComponentKind { gaussian, student_t };

/// Scale floor applied at evaluation and sampling time; parameters are
/// stored unfloored so gradients stay well defined.
inline constexpr double kScaleFloor = 1e-8;

/// Diagonal-covariance mixture component. `root_scale[d]` parameterizes the
/// per-dimension standard deviation as |root_scale[d]|.
struct Component {
  ComponentKind kind = ComponentKind::gaussian;
  double nu = 0.0;  // degrees of freedom, student_t only
  Vec mean;
  Vec root_scale;

  int dim() const { return static_cast<int>(mean.size()); }
};

struct MixtureProposal {
  std::vector<Component> components;
  Vec weights;

  int dim() const { return components.empty() ? 0 : components.front().dim(); }
  std::size_t size() const { return components.size(); }
};

/// Samples from a proposal together with cached log-densities. `log_q` is
/// filled by sample(); `log_p` and `norm_weights` are filled by the caller.
struct WeightedBatch {
  std::vector<Vec> points;
  Vec log_q;
  Vec log_p;
  Vec norm_weights;
  std::uint64_t seed = 0;

  std::size_t size() const { return points.size(); }
};

double component_log_pdf(const Component& c, const Vec& x);

/// d log f / d x.
Vec component_grad_log_pdf(const Component& c, const Vec& x);

/// Parameter-space gradient of log f(x) with respect to mean and root_scale,
/// accumulated into d_mean / d_root_scale with multiplier `coeff`.
void accumulate_component_param_grad(const Component& c, const Vec& x, double coeff,
                                     Vec& d_mean, Vec& d_root_scale);

double mixture_log_pdf(const MixtureProposal& q, const Vec& x);
Vec mixture_grad_log_pdf(const MixtureProposal& q, const Vec& x);

/// Draw a single point from component `c`.
Vec sample_component(const Component& c, Rng& rng);

/// Draw n points; fills points + log_q, records the seed.
WeightedBatch sample(const MixtureProposal& q, std::size_t n, std::uint64_t seed);

/// Append component f with weight gamma, rescaling old weights by 1 - gamma.
MixtureProposal add_component(const MixtureProposal& q, const Component& f, double gamma);

/// Throws numerical_error if simplex/dimension/finiteness invariants fail.
void validate_proposal(const MixtureProposal& q);

/// Closed-form first moment and diagonal covariance of the mixture.
Vec mixture_mean(const MixtureProposal& q);
Vec mixture_cov_diag(const MixtureProposal& q);

/// JSON round-trip at full double precision.
std::string proposal_to_json(const MixtureProposal& q);
MixtureProposal proposal_from_json(const std::string& text);

MixtureProposal single_component_proposal(Component c);

}  // namespace fklboost

#endif  // FKLBOOST_MIXTURE_HPP
