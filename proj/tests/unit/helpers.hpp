#pragma once

#include <cmath>
#include <functional>

#include "cpe/graph.hpp"
#include "cpe/netblocks.hpp"
#include "cpe/rng.hpp"

namespace cpe::testing {

// Prior program with theta1 -> theta2, theta2 -> x, theta3 -> x.
inline Dag fig1_prior() {
  return Dag({{"theta1", NodeRole::parameter, 1},
              {"theta2", NodeRole::parameter, 1},
              {"theta3", NodeRole::parameter, 1},
              {"x", NodeRole::data, 1}},
             {{"theta1", "theta2"}, {"theta2", "x"}, {"theta3", "x"}});
}

// Chain theta1 -> theta2 -> x.
inline Dag chain_prior() {
  return Dag({{"theta1", NodeRole::parameter, 1}, {"theta2", NodeRole::parameter, 1}, {"x", NodeRole::data, 1}},
             {{"theta1", "theta2"}, {"theta2", "x"}});
}

inline Dag single_prior(int dim = 1, int data_dim = 1) {
  return Dag({{"theta", NodeRole::parameter, dim}, {"x", NodeRole::data, data_dim}}, {{"theta", "x"}});
}

// Central-difference Jacobian of f: R^d -> R^m.
inline Matrix numeric_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& at, double step = 1e-6) {
  const Vector f0 = f(at);
  Matrix jac(f0.size(), at.size());
  for (Eigen::Index j = 0; j < at.size(); ++j) {
    Vector up = at, down = at;
    up[j] += step;
    down[j] -= step;
    jac.col(j) = (f(up) - f(down)) / (2.0 * step);
  }
  return jac;
}

inline double relative_error(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

// Randomizes every trainable parameter, including biases, on a modest scale.
inline void randomize(const ParameterList& params, Rng& rng, double scale = 0.5) {
  for (auto* p : params) {
    if (!p->trainable) continue;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.reshaped()(i) = scale * rng.normal();
  }
}

}  // namespace cpe::testing
