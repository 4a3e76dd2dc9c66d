#include "cpe/netblocks.hpp"

#include <cmath>
#include <numbers>

#include "cpe/error.hpp"

namespace cpe {

namespace {

Matrix uniform_matrix(int rows, int cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

Matrix tanh_of(const Matrix& a) { return a.array().tanh().matrix(); }

// d tanh(a) / da expressed through y = tanh(a).
Matrix tanh_grad(const Matrix& y, const Matrix& dy) { return (dy.array() * (1.0 - y.array().square())).matrix(); }

}  // namespace

void Parameter::apply_mask() {
  if (mask.size() == 0) return;
  for (Eigen::Index j = 0; j < value.cols(); ++j)
    for (Eigen::Index i = 0; i < value.rows(); ++i)
      if (!mask(i, j)) value(i, j) = 0.0;
}

// -- Linear -----------------------------------------------------------------

Linear::Linear(const std::string& name, int in, int out, Rng& rng)
    : weight(name + ".weight", uniform_matrix(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      bias(name + ".bias", Matrix::Zero(out, 1)) {}

Matrix Linear::forward(const Matrix& x) const {
  if (x.rows() != in()) throw StructuralError(weight.name + ": input has " + std::to_string(x.rows()) +
                                              " rows, expected " + std::to_string(in()));
  Matrix y = weight.value * x;
  y.colwise() += bias.value.col(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  weight.grad.noalias() += dy * x.transpose();
  bias.grad.col(0) += dy.rowwise().sum();
  return weight.value.transpose() * dy;
}

void Linear::collect(ParameterList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// -- Fourier features -------------------------------------------------------

FourierEmbedding::FourierEmbedding(int features, double scale, Rng& rng) {
  if (features < 2 || features % 2 != 0) throw StructuralError("Fourier feature count must be even and >= 2");
  Matrix f(features / 2, 1);
  for (int i = 0; i < features / 2; ++i) f(i, 0) = scale * rng.normal();
  frequencies = Parameter("fourier.frequencies", std::move(f), /*trainable=*/false);
}

Matrix FourierEmbedding::forward(const RowVector& t) const {
  const Eigen::Index half = frequencies.value.rows();
  Matrix angle = (2.0 * std::numbers::pi) * frequencies.value.col(0) * t;
  Matrix out(2 * half, t.size());
  out.topRows(half) = angle.array().sin().matrix();
  out.bottomRows(half) = angle.array().cos().matrix();
  return out;
}

Vector FourierEmbedding::operator()(double t) const {
  RowVector tt(1);
  tt(0) = t;
  return forward(tt).col(0);
}

void FourierEmbedding::collect(ParameterList& out) { out.push_back(&frequencies); }

Vector fourier_features(const FourierEmbedding& embedding, double t) { return embedding(t); }

// -- BlockLinear ------------------------------------------------------------

BlockLinear::BlockLinear(const std::string& name, const BoolMatrix& dim_mask, int d_in, int d_out,
                         DiagTransform diag, bool low_rank, Rng& rng)
    : bias(name + ".bias", Matrix::Zero(static_cast<Eigen::Index>(dim_mask.rows()) * d_out, 1)),
      dims_(static_cast<int>(dim_mask.rows())),
      d_in_(d_in),
      d_out_(d_out),
      diag_(diag) {
  if (dim_mask.rows() != dim_mask.cols()) throw StructuralError("dimension mask must be square");
  if (d_in < 1 || d_out < 1) throw StructuralError("block sizes must be positive");
  for (int i = 0; i < dims_; ++i) {
    if (!dim_mask(i, i)) throw StructuralError("dimension mask needs a true diagonal");
    int allowed = 0;
    for (int j = 0; j < dims_; ++j) {
      if (dim_mask(i, j) && j > i) throw StructuralError("dimension mask must be lower-triangular");
      if (dim_mask(i, j)) ++allowed;
    }
    const double fan_in = static_cast<double>(allowed * d_in);
    const double bound = 1.0 / std::sqrt(fan_in);
    for (int j = 0; j <= i; ++j) {
      if (!dim_mask(i, j)) continue;
      Block block;
      block.row = i;
      block.col = j;
      block.diagonal = i == j;
      block.low_rank = low_rank && !block.diagonal;
      const std::string tag = name + ".B[" + std::to_string(i) + "," + std::to_string(j) + "]";
      if (block.low_rank) {
        // Factor bound keeps the product entries on the full-block scale.
        const double factor_bound = std::sqrt(bound);
        block.xi = Parameter(tag + ".xi", uniform_matrix(d_out, 1, factor_bound, rng));
        block.zeta = Parameter(tag + ".zeta", uniform_matrix(d_in, 1, factor_bound, rng));
      } else {
        Matrix w = uniform_matrix(d_out, d_in, bound, rng);
        // exp-transformed blocks start near an effective scale of 1/sqrt(fan_in).
        if (block.diagonal && diag == DiagTransform::exp) w.array() += std::log(bound);
        block.weight = Parameter(tag, std::move(w));
      }
      blocks_.push_back(std::move(block));
    }
  }
}

Matrix BlockLinear::effective_block(const Block& block) const {
  if (block.low_rank) return block.xi.value * block.zeta.value.transpose();
  if (block.diagonal && diag_ == DiagTransform::exp) return block.weight.value.array().exp().matrix();
  return block.weight.value;
}

Matrix BlockLinear::affine(const Matrix& h) const {
  if (h.rows() != static_cast<Eigen::Index>(dims_) * d_in_)
    throw StructuralError(bias.name + ": input has " + std::to_string(h.rows()) + " rows, expected " +
                          std::to_string(dims_ * d_in_));
  Matrix a(static_cast<Eigen::Index>(dims_) * d_out_, h.cols());
  for (int i = 0; i < dims_; ++i) a.middleRows(i * d_out_, d_out_).colwise() = bias.value.col(0).segment(i * d_out_, d_out_);
  for (const auto& block : blocks_) {
    if (block.diagonal && diag_ == DiagTransform::identity) {
      a.middleRows(block.row * d_out_, d_out_).noalias() += block.weight.value * h.middleRows(block.col * d_in_, d_in_);
    } else {
      a.middleRows(block.row * d_out_, d_out_).noalias() += effective_block(block) * h.middleRows(block.col * d_in_, d_in_);
    }
  }
  return a;
}

Matrix BlockLinear::backward(const Matrix& h, const Matrix& da) {
  Matrix dh = Matrix::Zero(h.rows(), h.cols());
  bias.grad.col(0) += da.rowwise().sum();
  for (auto& block : blocks_) {
    const auto da_i = da.middleRows(block.row * d_out_, d_out_);
    const auto h_j = h.middleRows(block.col * d_in_, d_in_);
    const Matrix w = effective_block(block);
    Matrix dw = da_i * h_j.transpose();
    if (block.low_rank) {
      block.xi.grad.noalias() += dw * block.zeta.value;
      block.zeta.grad.noalias() += dw.transpose() * block.xi.value;
    } else if (block.diagonal && diag_ == DiagTransform::exp) {
      block.weight.grad.array() += dw.array() * w.array();
    } else {
      block.weight.grad += dw;
    }
    dh.middleRows(block.col * d_in_, d_in_).noalias() += w.transpose() * da_i;
  }
  return dh;
}

Matrix BlockLinear::dense_raw() const {
  Matrix dense = Matrix::Zero(static_cast<Eigen::Index>(dims_) * d_out_, static_cast<Eigen::Index>(dims_) * d_in_);
  for (const auto& block : blocks_) {
    dense.block(block.row * d_out_, block.col * d_in_, d_out_, d_in_) =
        block.low_rank ? Matrix(block.xi.value * block.zeta.value.transpose()) : block.weight.value;
  }
  return dense;
}

Matrix BlockLinear::dense_effective() const {
  Matrix dense = Matrix::Zero(static_cast<Eigen::Index>(dims_) * d_out_, static_cast<Eigen::Index>(dims_) * d_in_);
  for (const auto& block : blocks_) dense.block(block.row * d_out_, block.col * d_in_, d_out_, d_in_) = effective_block(block);
  return dense;
}

void BlockLinear::set_dense_raw(const Matrix& dense) {
  if (dense.rows() != static_cast<Eigen::Index>(dims_) * d_out_ || dense.cols() != static_cast<Eigen::Index>(dims_) * d_in_)
    throw StructuralError("dense weight has the wrong shape");
  for (auto& block : blocks_) {
    if (block.low_rank) throw StructuralError("cannot import a dense weight into a low-rank block");
    block.weight.value = dense.block(block.row * d_out_, block.col * d_in_, d_out_, d_in_);
  }
}

BoolMatrix BlockLinear::unit_mask() const {
  BoolMatrix mask = BoolMatrix::Constant(static_cast<Eigen::Index>(dims_) * d_out_, static_cast<Eigen::Index>(dims_) * d_in_, false);
  for (const auto& block : blocks_) mask.block(block.row * d_out_, block.col * d_in_, d_out_, d_in_).setConstant(true);
  return mask;
}

void BlockLinear::collect(ParameterList& out) {
  for (auto& block : blocks_) {
    if (block.low_rank) {
      out.push_back(&block.xi);
      out.push_back(&block.zeta);
    } else {
      out.push_back(&block.weight);
    }
  }
  out.push_back(&bias);
}

Matrix block_forward(const BlockLinear& layer, const Matrix& h, Activation act) {
  Matrix a = layer.affine(h);
  return act == Activation::tanh ? tanh_of(a) : a;
}

// -- ConditionEmbedder ------------------------------------------------------

ConditionEmbedder::ConditionEmbedder(int data_dim, bool use_time, const EmbedderConfig& config, Rng& rng)
    : use_time_(use_time), data_dim_(data_dim) {
  if (data_dim < 1) throw StructuralError("data dimension must be positive");
  if (use_time_) {
    fourier_ = FourierEmbedding(config.fourier_features, config.fourier_scale, rng);
    time1_ = Linear("embed.time1", fourier_.dim(), config.time_width, rng);
    time2_ = Linear("embed.time2", config.time_width, config.time_width, rng);
  }
  data1_ = Linear("embed.data1", data_dim, config.data_width, rng);
  data2_ = Linear("embed.data2", config.data_width, config.data_width, rng);
}

int ConditionEmbedder::output_dim() const { return (use_time_ ? time2_.out() : 0) + data2_.out(); }

Matrix ConditionEmbedder::forward(const RowVector* t, const Matrix& x, Cache* cache) const {
  if (x.rows() != data_dim_)
    throw StructuralError("data has " + std::to_string(x.rows()) + " rows, expected " + std::to_string(data_dim_));
  if (use_time_ && (t == nullptr || t->size() != x.cols()))
    throw StructuralError("time input must have one entry per data column");
  Cache local;
  Cache& c = cache ? *cache : local;
  const Eigen::Index time_rows = use_time_ ? time2_.out() : 0;
  Matrix joint(time_rows + data2_.out(), x.cols());
  if (use_time_) {
    c.fourier = fourier_.forward(*t);
    c.time_hidden = tanh_of(time1_.forward(c.fourier));
    c.time_out = time2_.forward(c.time_hidden);
    joint.topRows(time_rows) = c.time_out;
  }
  c.data_hidden = tanh_of(data1_.forward(x));
  c.data_out = data2_.forward(c.data_hidden);
  joint.bottomRows(data2_.out()) = c.data_out;
  c.c = tanh_of(joint);
  return c.c;
}

void ConditionEmbedder::backward(const Cache& cache, const Matrix& x, const Matrix& dc) {
  const Matrix djoint = tanh_grad(cache.c, dc);
  const Eigen::Index time_rows = use_time_ ? time2_.out() : 0;
  if (use_time_) {
    Matrix dh = time2_.backward(cache.time_hidden, djoint.topRows(time_rows));
    time1_.backward(cache.fourier, tanh_grad(cache.time_hidden, dh));
  }
  Matrix dh = data2_.backward(cache.data_hidden, djoint.bottomRows(data2_.out()));
  data1_.backward(x, tanh_grad(cache.data_hidden, dh));
}

void ConditionEmbedder::collect(ParameterList& out) {
  if (use_time_) {
    fourier_.collect(out);
    time1_.collect(out);
    time2_.collect(out);
  }
  data1_.collect(out);
  data2_.collect(out);
}

Vector embed_condition(const ConditionEmbedder& embedder, double t, const Vector& x) {
  RowVector tt(1);
  tt(0) = t;
  return embedder.forward(embedder.uses_time() ? &tt : nullptr, x).col(0);
}

// -- Conditioner ------------------------------------------------------------

Conditioner::Conditioner(const std::string& name, int c_dim, std::vector<int> target_dims, int units_per_dim, Rng& rng)
    : targets_(std::move(target_dims)), units_(units_per_dim) {
  projection = Linear(name, c_dim, std::max<int>(1, static_cast<int>(targets_.size())) * units_, rng);
}

void Conditioner::apply(Matrix& h, const Matrix& c) const {
  if (targets_.empty()) return;
  const Matrix shift = projection.forward(c);
  for (std::size_t k = 0; k < targets_.size(); ++k)
    h.middleRows(static_cast<Eigen::Index>(targets_[k]) * units_, units_) += shift.middleRows(k * units_, units_);
}

Matrix Conditioner::backward(const Matrix& c, const Matrix& dh) {
  if (targets_.empty()) return Matrix::Zero(c.rows(), c.cols());
  Matrix dshift(static_cast<Eigen::Index>(targets_.size()) * units_, dh.cols());
  for (std::size_t k = 0; k < targets_.size(); ++k)
    dshift.middleRows(k * units_, units_) = dh.middleRows(static_cast<Eigen::Index>(targets_[k]) * units_, units_);
  return projection.backward(c, dshift);
}

void Conditioner::collect(ParameterList& out) {
  if (!targets_.empty()) projection.collect(out);
}

Matrix apply_conditioning(const Conditioner& conditioner, const Matrix& h, const Matrix& c) {
  Matrix out = h;
  conditioner.apply(out, c);
  return out;
}

// -- ConvexGate -------------------------------------------------------------

double ConvexGate::gamma() const { return 1.0 / (1.0 + std::exp(-raw.value(0, 0))); }

Matrix ConvexGate::combine(const Matrix& theta, const Matrix& lambda) const {
  const double g = gamma();
  return g * theta + (1.0 - g) * lambda;
}

void ConvexGate::backward(const Matrix& theta, const Matrix& lambda, const Matrix& dv) {
  const double g = gamma();
  raw.grad(0, 0) += ((theta - lambda).array() * dv.array()).sum() * g * (1.0 - g);
}

Vector convex_combine(const ConvexGate& gate, const Vector& theta, const Vector& lambda) {
  if (theta.size() != lambda.size()) throw StructuralError("convex_combine: length mismatch");
  return gate.combine(theta, lambda);
}

// -- BlockStack -------------------------------------------------------------

BlockStack::BlockStack(const std::string& name, const DependencyMask& mask, int c_dim, const StackConfig& config,
                       Rng& rng) {
  if (config.hidden_layers < 0) throw ConfigError("hidden_layers must be >= 0");
  if (config.width < 1) throw ConfigError("block width must be >= 1");
  const int transforms = config.hidden_layers + 1;
  for (int k = 0; k < transforms; ++k) {
    const int d_in = k == 0 ? 1 : config.width;
    const int d_out = k + 1 == transforms ? 1 : config.width;
    layers_.emplace_back(name + ".f" + std::to_string(k + 1), mask.dim_mask, d_in, d_out, config.diag,
                         config.low_rank, rng);
  }
  const auto targets = mask.target_dims();
  conditioners_.resize(transforms);
  conditioned_.assign(transforms, false);
  for (int k = 0; k < transforms; ++k) {
    const bool hidden = k + 1 < transforms || transforms == 1;
    if (k == 0 || (config.condition_all_layers && hidden)) {
      conditioned_[k] = true;
      conditioners_[k] = Conditioner(name + ".cond" + std::to_string(k + 1), c_dim, targets, layers_[k].d_out(), rng);
    }
  }
}

bool BlockStack::conditioned(int k) const { return conditioned_[k]; }
const Conditioner& BlockStack::conditioner(int k) const { return conditioners_[k]; }
Conditioner& BlockStack::conditioner(int k) { return conditioners_[k]; }

Matrix BlockStack::forward(const Matrix& theta, const Matrix& c, Cache* cache) const {
  Matrix h = theta;
  if (cache) {
    cache->inputs.resize(layers_.size());
    cache->pre.resize(layers_.size());
  }
  for (int k = 0; k < layer_count(); ++k) {
    Matrix a = layers_[k].affine(h);
    if (conditioned_[k]) conditioners_[k].apply(a, c);
    Matrix next = activation(k) == Activation::tanh ? tanh_of(a) : a;
    if (cache) {
      cache->inputs[k] = std::move(h);
      cache->pre[k] = std::move(a);
    }
    h = std::move(next);
  }
  return h;
}

BlockStack::Grad BlockStack::backward(const Cache& cache, const Matrix& c, const Matrix& dout,
                                      const std::vector<Matrix>* extra_dpre) {
  Grad grad;
  grad.dc = Matrix::Zero(c.rows(), c.cols());
  Matrix dpre = dout;
  for (int k = layer_count() - 1; k >= 0; --k) {
    if (extra_dpre && (*extra_dpre)[k].size() > 0) dpre += (*extra_dpre)[k];
    if (conditioned_[k]) grad.dc += conditioners_[k].backward(c, dpre);
    Matrix dh = layers_[k].backward(cache.inputs[k], dpre);
    if (k == 0) {
      grad.dtheta = std::move(dh);
    } else {
      // inputs[k] = tanh(pre[k - 1])
      dpre = tanh_grad(cache.inputs[k], dh);
    }
  }
  return grad;
}

void BlockStack::collect(ParameterList& out) {
  for (int k = 0; k < layer_count(); ++k) {
    layers_[k].collect(out);
    if (conditioned_[k]) conditioners_[k].collect(out);
  }
}

// -- gradient contract ------------------------------------------------------

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

Vector flatten_values(const ParameterList& params) {
  Vector flat(static_cast<Eigen::Index>(parameter_count(params)));
  Eigen::Index offset = 0;
  for (const auto* p : params) {
    flat.segment(offset, p->value.size()) = p->value.reshaped();
    offset += p->value.size();
  }
  return flat;
}

Vector flatten_grads(const ParameterList& params) {
  Vector flat(static_cast<Eigen::Index>(parameter_count(params)));
  Eigen::Index offset = 0;
  for (const auto* p : params) {
    flat.segment(offset, p->grad.size()) = p->grad.reshaped();
    offset += p->grad.size();
  }
  return flat;
}

void assign_values(const ParameterList& params, const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count(params)))
    throw StructuralError("flat parameter vector has the wrong length");
  Eigen::Index offset = 0;
  for (auto* p : params) {
    p->value.reshaped() = flat.segment(offset, p->value.size());
    offset += p->value.size();
  }
}

void zero_grads(const ParameterList& params) {
  for (auto* p : params) p->zero_grad();
}

Vector gradient(const Objective& objective, const ParameterList& params) {
  zero_grads(params);
  const double loss = objective();
  if (!std::isfinite(loss)) throw NumericError("loss is not finite");
  Vector g = flatten_grads(params);
  if (!g.allFinite()) throw NumericError("gradient is not finite");
  return g;
}

Vector finite_difference_gradient(const std::function<double()>& loss, const ParameterList& params, double step) {
  Vector g(static_cast<Eigen::Index>(parameter_count(params)));
  Eigen::Index k = 0;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i, ++k) {
      double& v = p->value.reshaped()(i);
      const double saved = v;
      v = saved + step;
      const double up = loss();
      v = saved - step;
      const double down = loss();
      v = saved;
      g[k] = (up - down) / (2.0 * step);
    }
  }
  return g;
}

ParameterList trainable(const ParameterList& params) {
  ParameterList out;
  for (auto* p : params)
    if (p->trainable) out.push_back(p);
  return out;
}

}  // namespace cpe
