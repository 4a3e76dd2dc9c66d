#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cpe/graph.hpp"
#include "cpe/rng.hpp"
#include "cpe/types.hpp"

namespace cpe {

/// A named tensor with its gradient accumulator. An optional mask marks
/// entries that must stay exactly zero; non-trainable parameters (frozen
/// buffers) are serialized but never updated.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  BoolMatrix mask;  // empty means every entry is free
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name_, Matrix value_, bool trainable_ = true)
      : name(std::move(name_)),
        value(std::move(value_)),
        grad(Matrix::Zero(value.rows(), value.cols())),
        trainable(trainable_) {}

  void zero_grad() { grad.setZero(); }
  void apply_mask();
};

using ParameterList = std::vector<Parameter*>;

// Batched tensors are (features x batch): one column per sample.

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng);

  int in() const { return static_cast<int>(weight.value.cols()); }
  int out() const { return static_cast<int>(weight.value.rows()); }

  Matrix forward(const Matrix& x) const;
  /// Accumulates parameter gradients and returns d(loss)/d(x).
  Matrix backward(const Matrix& x, const Matrix& dy);
  void collect(ParameterList& out);

  Parameter weight;
  Parameter bias;
};

/// Random Fourier features of a scalar time: [sin(2 pi f t); cos(2 pi f t)].
class FourierEmbedding {
 public:
  FourierEmbedding() = default;
  FourierEmbedding(int features, double scale, Rng& rng);

  int dim() const { return 2 * static_cast<int>(frequencies.value.rows()); }
  Matrix forward(const RowVector& t) const;
  Vector operator()(double t) const;
  void collect(ParameterList& out);

  Parameter frequencies;  // frozen
};

enum class DiagTransform { identity, exp };
enum class Activation { identity, tanh };

/// Masked block-linear map on (dim * d_in) -> (dim * d_out) units. Block
/// (i, j) of size d_out x d_in exists iff dim_mask(i, j). Only allowed blocks
/// are stored, so masked entries are structurally zero and receive no
/// gradient. Diagonal blocks pass through `diag` before use; optional
/// low-rank off-diagonal blocks are outer products xi * zeta^T.
class BlockLinear {
 public:
  struct Block {
    int row = 0;
    int col = 0;
    bool diagonal = false;
    bool low_rank = false;
    Parameter weight;  // full blocks
    Parameter xi;      // low-rank factors
    Parameter zeta;
  };

  BlockLinear() = default;
  BlockLinear(const std::string& name, const BoolMatrix& dim_mask, int d_in, int d_out, DiagTransform diag,
              bool low_rank, Rng& rng);

  int dims() const { return dims_; }
  int d_in() const { return d_in_; }
  int d_out() const { return d_out_; }
  DiagTransform diag_transform() const { return diag_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::vector<Block>& blocks() { return blocks_; }

  /// mask(B) h + b with the diagonal transform applied.
  Matrix affine(const Matrix& h) const;
  Matrix backward(const Matrix& h, const Matrix& da);

  Matrix effective_block(const Block& block) const;
  /// Full (dim*d_out x dim*d_in) weight, masked entries zero.
  Matrix dense_raw() const;
  Matrix dense_effective() const;
  /// Imports a dense raw weight; entries outside allowed blocks are ignored.
  void set_dense_raw(const Matrix& dense);
  BoolMatrix unit_mask() const;

  void collect(ParameterList& out);

  Parameter bias;

 private:
  int dims_ = 0;
  int d_in_ = 1;
  int d_out_ = 1;
  DiagTransform diag_ = DiagTransform::identity;
  std::vector<Block> blocks_;
};

/// act(mask(B) h + b).
Matrix block_forward(const BlockLinear& layer, const Matrix& h, Activation act);

struct EmbedderConfig {
  int fourier_features = 64;
  double fourier_scale = 1.0;
  int time_width = 64;
  int data_width = 128;
};

/// Time branch (Fourier features -> Linear -> tanh -> Linear), data branch
/// (Linear -> tanh -> Linear), then concat and tanh. The time branch is
/// absent for the discrete flow.
class ConditionEmbedder {
 public:
  struct Cache {
    Matrix fourier;
    Matrix time_hidden;
    Matrix time_out;
    Matrix data_hidden;
    Matrix data_out;
    Matrix c;
  };

  ConditionEmbedder() = default;
  ConditionEmbedder(int data_dim, bool use_time, const EmbedderConfig& config, Rng& rng);

  bool uses_time() const { return use_time_; }
  int data_dim() const { return data_dim_; }
  int output_dim() const;

  /// t may be null when the embedder has no time branch.
  Matrix forward(const RowVector* t, const Matrix& x, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const Matrix& x, const Matrix& dc);
  void collect(ParameterList& out);

 private:
  bool use_time_ = true;
  int data_dim_ = 0;
  FourierEmbedding fourier_;
  Linear time1_, time2_, data1_, data2_;
};

Vector fourier_features(const FourierEmbedding& embedding, double t);
Vector embed_condition(const ConditionEmbedder& embedder, double t, const Vector& x);

/// h' = h + P(c) on the units of the target dimensions, with P linear + bias.
class Conditioner {
 public:
  Conditioner() = default;
  Conditioner(const std::string& name, int c_dim, std::vector<int> target_dims, int units_per_dim, Rng& rng);

  const std::vector<int>& target_dims() const { return targets_; }
  void apply(Matrix& h, const Matrix& c) const;
  /// Accumulates into the projection and returns d(loss)/d(c).
  Matrix backward(const Matrix& c, const Matrix& dh);
  void collect(ParameterList& out);

  Linear projection;

 private:
  std::vector<int> targets_;
  int units_ = 1;
};

Matrix apply_conditioning(const Conditioner& conditioner, const Matrix& h, const Matrix& c);

/// gamma = sigmoid(raw) in (0, 1); combine = gamma * theta + (1 - gamma) * lambda.
class ConvexGate {
 public:
  ConvexGate() : raw("gate", Matrix::Zero(1, 1)) {}

  double gamma() const;
  Matrix combine(const Matrix& theta, const Matrix& lambda) const;
  /// Accumulates d(loss)/d(raw) for upstream gradient dv.
  void backward(const Matrix& theta, const Matrix& lambda, const Matrix& dv);
  void collect(ParameterList& out) { out.push_back(&raw); }

  Parameter raw;
};

Vector convex_combine(const ConvexGate& gate, const Vector& theta, const Vector& lambda);

struct StackConfig {
  int hidden_layers = 3;  // tanh layers of `width` units per dimension
  int width = 64;
  DiagTransform diag = DiagTransform::identity;
  bool low_rank = false;
  bool condition_all_layers = false;
};

/// The masked block stack lambda: hidden_layers + 1 block transforms with
/// block sizes 1 -> width -> ... -> width -> 1, tanh between them and a
/// linear last transform. Conditioning is added to the pre-activation of the
/// first transform (or of every hidden transform).
class BlockStack {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input of each transform
    std::vector<Matrix> pre;     // pre-activation of each transform
  };
  struct Grad {
    Matrix dtheta;
    Matrix dc;
  };

  BlockStack() = default;
  BlockStack(const std::string& name, const DependencyMask& mask, int c_dim, const StackConfig& config, Rng& rng);

  int layer_count() const { return static_cast<int>(layers_.size()); }
  const BlockLinear& layer(int k) const { return layers_[k]; }
  BlockLinear& layer(int k) { return layers_[k]; }
  Activation activation(int k) const { return k + 1 < layer_count() ? Activation::tanh : Activation::identity; }
  bool conditioned(int k) const;
  const Conditioner& conditioner(int k) const;
  Conditioner& conditioner(int k);

  Matrix forward(const Matrix& theta, const Matrix& c, Cache* cache = nullptr) const;
  /// extra_dpre optionally adds gradient directly on each pre-activation.
  Grad backward(const Cache& cache, const Matrix& c, const Matrix& dout,
                const std::vector<Matrix>* extra_dpre = nullptr);
  void collect(ParameterList& out);

 private:
  std::vector<BlockLinear> layers_;
  std::vector<Conditioner> conditioners_;  // conditioners_[k] acts on layer k
  std::vector<bool> conditioned_;
};

// -- gradient contract ------------------------------------------------------

std::size_t parameter_count(const ParameterList& params);
Vector flatten_values(const ParameterList& params);
Vector flatten_grads(const ParameterList& params);
void assign_values(const ParameterList& params, const Vector& flat);
void zero_grads(const ParameterList& params);

/// A loss that accumulates its gradient into the parameters' grad fields.
using Objective = std::function<double()>;

/// Zeroes gradients, evaluates the objective and returns the flattened
/// gradient. Throws NumericError for a non-finite loss or gradient.
Vector gradient(const Objective& objective, const ParameterList& params);

/// Central finite differences of a value-only loss.
Vector finite_difference_gradient(const std::function<double()>& loss, const ParameterList& params,
                                  double step = 1e-5);

ParameterList trainable(const ParameterList& params);

}  // namespace cpe
