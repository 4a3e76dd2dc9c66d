#include "cpe/prior.hpp"

#include "cpe/error.hpp"
#include "cpe/standardize.hpp"

namespace cpe {

RowVector PriorModel::logpdf_cols(const Matrix& theta) const {
  RowVector out(theta.cols());
  for (Eigen::Index j = 0; j < theta.cols(); ++j) out[j] = logpdf(theta.col(j));
  return out;
}

PriorModel standardized_prior(const PriorModel& prior, const ParamLayout& layout, const Standardizer& standardizer) {
  if (prior.dim != layout.dim()) throw StructuralError("prior and layout dimensions differ");
  const Vector mean = standardizer.theta_mean();
  const Vector scale = standardizer.theta_scale();
  const double log_scale = standardizer.log_scale_sum();
  PriorModel out;
  out.dim = prior.dim;
  out.sample = [prior, layout, mean, scale](Rng& rng) {
    return Vector(((layout.to_flow(prior.sample(rng)) - mean).array() / scale.array()).matrix());
  };
  out.logpdf = [prior, layout, mean, scale, log_scale](const Vector& u) {
    const Vector theta = layout.to_natural(Vector((u.array() * scale.array()).matrix() + mean));
    return prior.logpdf(theta) + log_scale;
  };
  if (prior.logpdf_grad) {
    out.logpdf_grad = [prior, layout, mean, scale](const Vector& u) {
      const Vector theta = layout.to_natural(Vector((u.array() * scale.array()).matrix() + mean));
      return Vector((layout.to_flow(prior.logpdf_grad(theta)).array() * scale.array()).matrix());
    };
  }
  return out;
}

}  // namespace cpe
