#pragma once

#include "cpe/netblocks.hpp"

namespace cpe {

/// Per-dimension affine standardization of theta (flow layout) and x. The
/// statistics are frozen parameters so they travel with checkpoints.
class Standardizer {
 public:
  Standardizer() = default;
  Standardizer(int theta_dim, int data_dim);  // identity transform

  /// Fits mean and std on (dim x N) column samples; std is floored at 1e-8.
  void fit(const Matrix& theta, const Matrix& x);

  Matrix theta_to_std(const Matrix& theta) const;
  Matrix theta_from_std(const Matrix& u) const;
  Matrix x_to_std(const Matrix& x) const;
  Matrix x_from_std(const Matrix& u) const;

  const Vector theta_mean() const { return theta_mean_.value.col(0); }
  const Vector theta_scale() const { return theta_scale_.value.col(0); }
  const Vector x_mean() const { return x_mean_.value.col(0); }
  const Vector x_scale() const { return x_scale_.value.col(0); }
  /// log|d theta / d u| of theta_from_std.
  double log_scale_sum() const;

  void collect(ParameterList& out);

 private:
  Parameter theta_mean_, theta_scale_, x_mean_, x_scale_;
};

}  // namespace cpe
