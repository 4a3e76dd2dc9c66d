#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cpe/graph.hpp"
#include "cpe/prior.hpp"
#include "cpe/rng.hpp"
#include "cpe/sampleset.hpp"

namespace cpe {

/// An observed data set and, when known, the parameter that produced it.
struct Observation {
  std::string task;
  Vector theta;  // empty when the observation is fixed rather than simulated
  Vector x;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static Observation from_json(const nlohmann::json& doc);
};

/// A benchmark model. Parameters use the natural layout: parameter nodes of
/// dag() in insertion order, flattened.
class Task {
 public:
  virtual ~Task() = default;

  virtual std::string name() const = 0;
  virtual Dag dag() const = 0;
  int theta_dim() const { return dag().parameter_dim(); }
  int data_dim() const { return dag().data_dim(); }

  virtual Vector prior_sample(Rng& rng) const = 0;
  virtual double prior_logpdf(const Vector& theta) const = 0;
  /// Zero outside the support.
  virtual Vector prior_logpdf_grad(const Vector& theta) const = 0;
  virtual Vector simulate(const Vector& theta, Rng& rng) const = 0;
  virtual double log_likelihood(const Vector& theta, const Vector& x) const = 0;
  /// Typical per-dimension prior spread; sets the reference sampler's width.
  virtual Vector prior_scale() const = 0;

  /// Draws theta* from the prior and simulates x, unless the model fixes x.
  virtual Observation generate_observation(std::uint64_t seed) const;

  PriorModel prior() const;
};

std::vector<std::string> task_names();
/// Throws LookupError for an unknown name.
std::unique_ptr<Task> make_task(const std::string& name);

struct GaussianPosterior {
  Vector mean;
  Matrix cov;
};

/// Conjugate posterior of the linear Gaussian task; ConfigError otherwise.
GaussianPosterior analytic_posterior(const Task& task, const Vector& x_obs);

struct ReferenceConfig {
  int chains = 4;
  int samples = 5000;  // iterations per chain, warmup included
  int warmup = 2500;
  int thin = 2;
  int max_restarts = 1000;
  double width_factor = 2.0;  // slice width = factor * prior scale

  void validate() const;
};

/// Hit-and-run slice sampler on prior * likelihood. Attaches per-dimension
/// rank-normalized split R-hat and a warning when any exceeds 1.05.
SampleSet slice_sample_reference(const Task& task, const Vector& x_obs, const ReferenceConfig& config,
                                 std::uint64_t seed);

/// Rank-normalized split R-hat (max of bulk and folded) of draws[chain](iter, dim).
Vector split_rhat(const std::vector<Matrix>& chains);

}  // namespace cpe
