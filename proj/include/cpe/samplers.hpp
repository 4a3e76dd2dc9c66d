#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cpe/cpeflow.hpp"
#include "cpe/dcpeflow.hpp"
#include "cpe/prior.hpp"
#include "cpe/sampleset.hpp"

namespace cpe {

/// A batched time-dependent field: t has one entry per column of theta.
using BatchField = std::function<Matrix(const RowVector& t, const Matrix& theta)>;

struct Integration {
  Matrix theta;             // final states, one column per trajectory
  std::vector<bool> ok;     // false for discarded trajectories
  long evaluations = 0;     // field evaluations (columns)
};

/// theta <- theta + v(k / T, theta) / T for k = 0 .. T-1.
Integration euler_integrate(const BatchField& field, const Matrix& theta0, int steps);

struct Rk45Config {
  double rtol = 1e-5;
  double atol = 1e-6;
  double min_step = 1e-12;
  long max_steps = 100000;
};

/// Dormand-Prince 5(4) from t = 0 to 1 with a step size per trajectory.
Integration rk45_integrate(const BatchField& field, const Matrix& theta0, const Rk45Config& config);

/// Drops rows whose prior log density is -inf; proposed counts every row.
SampleSet rejection_filter(const Matrix& candidates, const PriorModel& prior);

/// Maps base draws (columns) to candidates; ok marks usable columns.
using Proposal = std::function<Matrix(const Matrix& base, std::vector<bool>& ok)>;

/// Proposes in rounds until n candidates survive the prior-support filter or
/// 10 n proposals were spent (NumericError). Trajectory j starts from a
/// prior draw on substream j of `seed`.
SampleSet sample_until(const PriorModel& prior, const Proposal& proposal, long n, std::uint64_t seed,
                       long chunk = 4096);

SampleSet euler_sample(const BatchField& field, const PriorModel& prior, long n, int steps, std::uint64_t seed);
SampleSet rk45_sample(const BatchField& field, const PriorModel& prior, long n, const Rk45Config& config,
                      std::uint64_t seed);

/// The trained field in natural, unstandardized coordinates at fixed x_obs.
BatchField cpe_field(const VectorFieldNet& net, const Vector& x_obs);

/// Prior draws pushed through the inverse of the discrete flow.
SampleSet discrete_sample(const DiscreteFlowNet& net, const PriorModel& prior, const Vector& x_obs, long n,
                          std::uint64_t seed);

}  // namespace cpe
