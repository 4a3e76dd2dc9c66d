#pragma once

#include <functional>

#include "cpe/graph.hpp"
#include "cpe/rng.hpp"
#include "cpe/types.hpp"

namespace cpe {

class Standardizer;

/// A prior over a d-dimensional parameter vector. Tasks expose theirs in the
/// natural layout; flows see a standardized, flow-layout copy.
struct PriorModel {
  int dim = 0;
  std::function<Vector(Rng&)> sample;
  std::function<double(const Vector&)> logpdf;       // -inf outside the support
  std::function<Vector(const Vector&)> logpdf_grad;  // optional

  /// Column-wise log density of a (dim x n) matrix.
  RowVector logpdf_cols(const Matrix& theta) const;
};

/// The prior seen in flow layout after standardization, u = (theta - m) / s.
/// Includes the log|s| Jacobian so the density stays normalized.
PriorModel standardized_prior(const PriorModel& prior, const ParamLayout& layout, const Standardizer& standardizer);

}  // namespace cpe
