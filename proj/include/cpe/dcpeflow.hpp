#pragma once

#include <cstdint>
#include <vector>

#include "cpe/cpeflow.hpp"
#include "cpe/prior.hpp"

namespace cpe {

/// log(A * B) from log A and log B: out_ij = log sum_k exp(A_ik + B_kj).
Matrix log_matmul(const Matrix& log_a, const Matrix& log_b);

/// Default architecture of the discrete variant (exp on diagonal blocks).
CpeConfig discrete_defaults();

/// Time-free invertible flow N(theta, x) = gamma theta + (1 - gamma) lambda(theta, x).
/// N maps posterior draws to the base space; sampling inverts it. Inputs are
/// (features x batch) in flow layout and standardized units.
class DiscreteFlowNet {
 public:
  struct Cache {
    Matrix theta;
    ConditionEmbedder::Cache embed;
    BlockStack::Cache stack;
    Matrix lambda;
    std::vector<Matrix> log_deriv;  // R_k: log d h_k / d theta_own, per unit
    Matrix log_jac;                 // log d lambda_i / d theta_i  (dim x batch)
    Matrix log_diag;                // log d N_i / d theta_i       (dim x batch)
  };

  DiscreteFlowNet() = default;
  DiscreteFlowNet(const FlowStructure& structure, const CpeConfig& config, std::uint64_t seed);
  DiscreteFlowNet(const Dag& prior, const CpeConfig& config, std::uint64_t seed);

  const FlowStructure& structure() const { return structure_; }
  const CpeConfig& config() const { return config_; }
  int theta_dim() const { return structure_.mask.dim(); }
  int data_dim() const { return embedder_.data_dim(); }

  /// Returns N(theta, x); writes log|det dN/dtheta| per column when asked.
  Matrix forward(const Matrix& theta, const Matrix& x, RowVector* logdet = nullptr, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients for upstream gradients of the output and the log-determinant.
  void backward(const Cache& cache, const Matrix& x, const Matrix& dz, const RowVector& dlogdet);

  /// Solves N(theta, x) = z column by column with bisection, dimension by
  /// dimension in flow order. ok[j] is false where bracketing failed.
  Matrix invert_batch(const Matrix& z, const Matrix& x, std::vector<bool>& ok, double tol = 1e-10) const;

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

/// Single-point forward map and log-determinant.
std::pair<Vector, double> forward_logdet(const DiscreteFlowNet& net, const Vector& theta, const Vector& x);

/// Throws InversionError when the bracket cannot be found within +-1e6.
Vector invert(const DiscreteFlowNet& net, const Vector& z, const Vector& x, double tol = 1e-10);

/// Mean of -[log base(N(theta, x)) + log|det dN/dtheta|] over columns.
/// `base` lives in the network's coordinates. With accumulate set, parameter
/// gradients are added (requires base.logpdf_grad).
double ml_loss(DiscreteFlowNet& net, const Matrix& theta, const Matrix& x, const PriorModel& base,
               bool accumulate = false);

}  // namespace cpe
