#pragma once

#include <cstdint>

#include <json.hpp>

#include "cpe/graph.hpp"
#include "cpe/netblocks.hpp"
#include "cpe/standardize.hpp"

namespace cpe {

/// Architecture settings shared by both flow variants.
struct CpeConfig {
  StackConfig stack;
  EmbedderConfig embed;
  ConditioningScope scope = ConditioningScope::data_parents;

  nlohmann::json to_json() const;
  static CpeConfig from_json(const nlohmann::json& doc);
};

/// Graph-derived structure of a flow: prior and posterior programs, the
/// topological order, the dependency mask and the layout permutation.
struct FlowStructure {
  Dag prior;
  Dag posterior;
  TopologicalOrder order;
  DependencyMask mask;
  ParamLayout layout;

  static FlowStructure from_prior(const Dag& prior, ConditioningScope scope);
  /// Same, but with an explicit (validated) parameter order.
  static FlowStructure from_prior(const Dag& prior, const TopologicalOrder& order, ConditioningScope scope);
};

/// The continuous-time vector field v_t(theta, x) = gamma theta + (1 - gamma) lambda_t(theta, x).
/// Inputs are (features x batch) in flow layout and standardized units.
class VectorFieldNet {
 public:
  struct Cache {
    Matrix theta;
    ConditionEmbedder::Cache embed;
    BlockStack::Cache stack;
    Matrix lambda;
  };

  VectorFieldNet() = default;
  VectorFieldNet(const FlowStructure& structure, const CpeConfig& config, std::uint64_t seed);
  VectorFieldNet(const Dag& prior, const CpeConfig& config, std::uint64_t seed);
  VectorFieldNet(const VectorFieldNet&) = default;
  VectorFieldNet& operator=(const VectorFieldNet&) = default;

  const FlowStructure& structure() const { return structure_; }
  const CpeConfig& config() const { return config_; }
  int theta_dim() const { return structure_.mask.dim(); }
  int data_dim() const { return embedder_.data_dim(); }

  Matrix forward(const RowVector& t, const Matrix& theta, const Matrix& x, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients for upstream gradient dv.
  void backward(const Cache& cache, const RowVector& t, const Matrix& x, const Matrix& dv);

  /// Every parameter, frozen buffers included, in a fixed order.
  ParameterList parameters();

  ConvexGate& gate() { return gate_; }
  const ConvexGate& gate() const { return gate_; }
  BlockStack& stack() { return stack_; }
  const BlockStack& stack() const { return stack_; }
  ConditionEmbedder& embedder() { return embedder_; }
  Standardizer& standardizer() { return standardizer_; }
  const Standardizer& standardizer() const { return standardizer_; }

 private:
  FlowStructure structure_;
  CpeConfig config_;
  ConditionEmbedder embedder_;
  BlockStack stack_;
  ConvexGate gate_;
  Standardizer standardizer_;
};

/// Single-point evaluation. Throws NumericError on non-finite input.
Vector vector_field(const VectorFieldNet& net, double t, const Vector& theta, const Vector& x);

/// (i, j) is true iff |d v_i / d theta_j| > threshold by central differences.
BoolMatrix jacobian_pattern(const VectorFieldNet& net, double t, const Vector& theta, const Vector& x,
                            double threshold = 1e-8, double step = 1e-6);

/// t * theta1 + (1 - t) * theta0.
Vector interpolate(const Vector& theta0, const Vector& theta1, double t);
/// Column-wise interpolation with per-column times.
Matrix interpolate(const Matrix& theta0, const Matrix& theta1, const RowVector& t);

}  // namespace cpe
