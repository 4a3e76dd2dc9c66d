#include "cpe/dcpeflow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cpe/error.hpp"

namespace cpe {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(1 - tanh(a)^2) without cancellation.
Matrix log_sech2(const Matrix& a) {
  return a.unaryExpr([](double v) {
    const double m = std::abs(v);
    return 2.0 * (std::log(2.0) - m - std::log1p(std::exp(-2.0 * m)));
  });
}

double logaddexp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

double exact_logsumexp(const Matrix& log_a, const Matrix& log_b, Eigen::Index i, Eigen::Index j) {
  double m = kNegInf;
  for (Eigen::Index k = 0; k < log_a.cols(); ++k) m = std::max(m, log_a(i, k) + log_b(k, j));
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (Eigen::Index k = 0; k < log_a.cols(); ++k) s += std::exp(log_a(i, k) + log_b(k, j) - m);
  return m + std::log(s);
}

}  // namespace

Matrix log_matmul(const Matrix& log_a, const Matrix& log_b) {
  if (log_a.cols() != log_b.rows()) throw StructuralError("log_matmul: inner dimensions differ");
  // Shift rows of A and columns of B by their maxima, multiply, shift back.
  const Vector row_max = log_a.rowwise().maxCoeff();
  const RowVector col_max = log_b.colwise().maxCoeff();
  auto safe = [](double m) { return std::isfinite(m) ? m : 0.0; };
  const Vector ra = row_max.unaryExpr(safe);
  const RowVector cb = col_max.unaryExpr(safe);
  const Matrix ea = (log_a.colwise() - ra).array().exp().matrix();
  const Matrix eb = (log_b.rowwise() - cb).array().exp().matrix();
  const Matrix prod = ea * eb;
  Matrix out(log_a.rows(), log_b.cols());
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double p = prod(i, j);
      // The shifted product loses precision when the two maxima sit on
      // different inner indices; fall back to the exact contraction.
      if (p > 1e-200 && std::isfinite(p)) {
        out(i, j) = std::log(p) + ra[i] + cb[j];
      } else {
        out(i, j) = exact_logsumexp(log_a, log_b, i, j);
      }
    }
  }
  return out;
}

CpeConfig discrete_defaults() {
  CpeConfig c;
  c.stack.diag = DiagTransform::exp;
  return c;
}

DiscreteFlowNet::DiscreteFlowNet(const FlowStructure& structure, const CpeConfig& config, std::uint64_t seed)
    : structure_(structure), config_(config) {
  if (config_.stack.diag != DiagTransform::exp)
    throw ConfigError("the discrete flow needs a strictly positive diagonal transform");
  Rng rng(seed);
  const int d_x = structure_.prior.data_dim();
  embedder_ = ConditionEmbedder(d_x, /*use_time=*/false, config_.embed, rng);
  stack_ = BlockStack("stack", structure_.mask, embedder_.output_dim(), config_.stack, rng);
  standardizer_ = Standardizer(structure_.mask.dim(), d_x);
}

DiscreteFlowNet::DiscreteFlowNet(const Dag& prior, const CpeConfig& config, std::uint64_t seed)
    : DiscreteFlowNet(FlowStructure::from_prior(prior, config.scope), config, seed) {}

Matrix DiscreteFlowNet::forward(const Matrix& theta, const Matrix& x, RowVector* logdet, Cache* cache) const {
  if (theta.rows() != theta_dim())
    throw StructuralError("theta has " + std::to_string(theta.rows()) + " rows, expected " +
                          std::to_string(theta_dim()));
  if (theta.cols() != x.cols()) throw StructuralError("theta and x batch sizes differ");
  Cache local;
  Cache& cc = cache ? *cache : local;
  const Matrix c = embedder_.forward(nullptr, x, &cc.embed);
  const bool need_logdet = logdet != nullptr || cache != nullptr;
  Matrix lambda = stack_.forward(theta, c, need_logdet ? &cc.stack : nullptr);
  Matrix z = gate_.combine(theta, lambda);
  if (need_logdet) {
    const int dims = theta_dim();
    const Eigen::Index batch = theta.cols();
    const int layers = stack_.layer_count();
    cc.log_deriv.assign(layers, Matrix());
    Matrix previous = Matrix::Zero(dims, batch);  // d theta_i / d theta_i = 1
    for (int k = 0; k < layers; ++k) {
      const BlockLinear& layer = stack_.layer(k);
      const int d_in = layer.d_in();
      const int d_out = layer.d_out();
      Matrix r(static_cast<Eigen::Index>(dims) * d_out, batch);
      for (const auto& block : layer.blocks()) {
        if (!block.diagonal) continue;
        const int i = block.row;
        r.middleRows(i * d_out, d_out) = log_matmul(block.weight.value, previous.middleRows(i * d_in, d_in));
      }
      if (stack_.activation(k) == Activation::tanh) r += log_sech2(cc.stack.pre[k]);
      previous = r;
      cc.log_deriv[k] = std::move(r);
    }
    cc.log_jac = previous;
    const double g = gate_.gamma();
    const double log_g = std::log(g);
    const double log_1mg = std::log1p(-g);
    cc.log_diag = cc.log_jac.unaryExpr([&](double l) { return logaddexp(log_g, log_1mg + l); });
    if (!cc.log_diag.allFinite()) throw NumericError("non-finite log-determinant");
    if (logdet) *logdet = cc.log_diag.colwise().sum();
  }
  if (cache) {
    cc.theta = theta;
    cc.lambda = std::move(lambda);
  }
  return z;
}

void DiscreteFlowNet::backward(const Cache& cache, const Matrix& x, const Matrix& dz, const RowVector& dlogdet) {
  const int dims = theta_dim();
  const Eigen::Index batch = cache.theta.cols();
  const int layers = stack_.layer_count();
  const double g = gate_.gamma();
  const double log_1mg = std::log1p(-g);

  // Gate: through the output and through every log-diagonal term.
  gate_.backward(cache.theta, cache.lambda, dz);
  const Matrix& L = cache.log_jac;
  const Matrix& D = cache.log_diag;
  const Matrix dD_dgamma = ((-D).array().exp() - (L - D).array().exp()).matrix();
  gate_.raw.grad(0, 0) += (dD_dgamma.array().rowwise() * dlogdet.array()).sum() * g * (1.0 - g);

  // G_i = d loss / d L_i.
  const Matrix G = ((((L - D).array() + log_1mg).exp()).rowwise() * dlogdet.array()).matrix();

  // Left log-vectors run from the output back; extra pre-activation
  // gradients carry the dependence of the tanh slopes on the parameters.
  std::vector<Matrix> extra(layers);
  Matrix left = Matrix::Zero(dims, batch);  // log d J / d h_H
  for (int k = layers - 1; k >= 0; --k) {
    BlockLinear& layer = stack_.layer(k);
    const int d_in = layer.d_in();
    const int d_out = layer.d_out();
    const bool hidden = stack_.activation(k) == Activation::tanh;
    const Matrix log_s = hidden ? log_sech2(cache.stack.pre[k]) : Matrix::Zero(left.rows(), batch);
    const Matrix t = left + log_s;
    const Matrix* r_prev = k > 0 ? &cache.log_deriv[k - 1] : nullptr;
    if (hidden) {
      extra[k].resize(static_cast<Eigen::Index>(dims) * d_out, batch);
      const Matrix tanh_a = cache.stack.pre[k].array().tanh().matrix();
      for (int i = 0; i < dims; ++i) {
        auto rows = extra[k].middleRows(i * d_out, d_out);
        const Matrix e = ((left.middleRows(i * d_out, d_out) + cache.log_deriv[k].middleRows(i * d_out, d_out))
                              .rowwise() -
                          L.row(i))
                             .array()
                             .exp()
                             .matrix();
        rows = (e.array() * (-2.0 * tanh_a.middleRows(i * d_out, d_out).array())).matrix();
        rows = (rows.array().rowwise() * G.row(i).array()).matrix();
      }
    }
    Matrix next_left(static_cast<Eigen::Index>(dims) * d_in, batch);
    for (auto& block : layer.blocks()) {
      if (!block.diagonal) continue;
      const int i = block.row;
      const Matrix t_i = t.middleRows(i * d_out, d_out);
      const Matrix r_i = r_prev ? Matrix(r_prev->middleRows(i * d_in, d_in)) : Matrix::Zero(d_in, batch);
      const RowVector shift = r_i.colwise().maxCoeff();
      const Matrix A = (((t_i.rowwise() + (shift - L.row(i))).array().exp()).rowwise() * G.row(i).array()).matrix();
      const Matrix Bq = (r_i.rowwise() - shift).array().exp().matrix();
      block.weight.grad.array() += (A * Bq.transpose()).array() * block.weight.value.array().exp();
      if (k > 0) next_left.middleRows(i * d_in, d_in) = log_matmul(block.weight.value.transpose(), t_i);
    }
    left = std::move(next_left);
  }

  const double scale = 1.0 - g;
  const auto grad = stack_.backward(cache.stack, cache.embed.c, scale * dz, &extra);
  embedder_.backward(cache.embed, x, grad.dc);
}

Matrix DiscreteFlowNet::invert_batch(const Matrix& z, const Matrix& x, std::vector<bool>& ok, double tol) const {
  const int dims = theta_dim();
  const Eigen::Index batch = z.cols();
  if (z.rows() != dims) throw StructuralError("invert: z has the wrong dimension");
  ok.assign(batch, true);
  Matrix theta = Matrix::Zero(dims, batch);
  constexpr double kStart = 10.0;
  constexpr double kCap = 1e6;
  for (int i = 0; i < dims; ++i) {
    RowVector lo = RowVector::Constant(batch, -kStart);
    RowVector hi = RowVector::Constant(batch, kStart);
    auto eval = [&](const RowVector& v) {
      theta.row(i) = v;
      return RowVector(forward(theta, x).row(i));
    };
    // Expand the bracket geometrically until it contains the target.
    for (;;) {
      const RowVector f_lo = eval(lo);
      const RowVector f_hi = eval(hi);
      bool done = true;
      for (Eigen::Index j = 0; j < batch; ++j) {
        if (!ok[j]) continue;
        if (!std::isfinite(f_lo[j]) || !std::isfinite(f_hi[j])) {
          ok[j] = false;
          continue;
        }
        if (f_lo[j] > z(i, j)) {
          lo[j] *= 2.0;
          done = false;
        }
        if (f_hi[j] < z(i, j)) {
          hi[j] *= 2.0;
          done = false;
        }
        if (std::abs(lo[j]) > kCap || std::abs(hi[j]) > kCap) ok[j] = false;
      }
      if (done) break;
      bool any = false;
      for (Eigen::Index j = 0; j < batch; ++j) any = any || (ok[j] && (lo[j] < -kStart || hi[j] > kStart));
      if (!any) break;
    }
    // Bisection until the bracket is a few ulps wide (absolute near zero).
    auto open = [&](const RowVector& mid, Eigen::Index j) {
      const double width = hi[j] - lo[j];
      const double scale = std::max({1.0, std::abs(lo[j]), std::abs(hi[j])});
      return ok[j] && width > 4.0 * std::numeric_limits<double>::epsilon() * scale && mid[j] > lo[j] &&
             mid[j] < hi[j];
    };
    for (int iter = 0; iter < 200; ++iter) {
      RowVector mid = 0.5 * (lo + hi);
      bool active = false;
      for (Eigen::Index j = 0; j < batch; ++j) active = active || open(mid, j);
      if (!active) break;
      const RowVector f = eval(mid);
      for (Eigen::Index j = 0; j < batch; ++j) {
        if (!open(mid, j)) continue;
        if (f[j] < z(i, j)) lo[j] = mid[j];
        else hi[j] = mid[j];
      }
    }
    const RowVector f_lo = eval(lo);
    const RowVector f_hi = eval(hi);
    RowVector best(batch);
    for (Eigen::Index j = 0; j < batch; ++j) {
      const double e_lo = std::abs(f_lo[j] - z(i, j));
      const double e_hi = std::abs(f_hi[j] - z(i, j));
      best[j] = e_lo <= e_hi ? lo[j] : hi[j];
      if (ok[j] && std::min(e_lo, e_hi) > tol * (1.0 + std::abs(z(i, j)))) ok[j] = false;
    }
    theta.row(i) = best;
  }
  return theta;
}

ParameterList DiscreteFlowNet::parameters() {
  ParameterList out;
  embedder_.collect(out);
  stack_.collect(out);
  gate_.collect(out);
  standardizer_.collect(out);
  return out;
}

std::pair<Vector, double> forward_logdet(const DiscreteFlowNet& net, const Vector& theta, const Vector& x) {
  RowVector logdet;
  Vector z = net.forward(theta, x, &logdet).col(0);
  if (!z.allFinite()) throw NumericError("forward: non-finite output");
  return {std::move(z), logdet[0]};
}

Vector invert(const DiscreteFlowNet& net, const Vector& z, const Vector& x, double tol) {
  std::vector<bool> ok;
  Vector theta = net.invert_batch(z, x, ok, tol).col(0);
  if (!ok[0]) throw InversionError("bisection could not bracket or resolve the root within +-1e6");
  return theta;
}

double ml_loss(DiscreteFlowNet& net, const Matrix& theta, const Matrix& x, const PriorModel& base, bool accumulate) {
  if (theta.cols() == 0) throw DataError("ml_loss: empty batch");
  const double n = static_cast<double>(theta.cols());
  DiscreteFlowNet::Cache cache;
  RowVector logdet;
  const Matrix z = net.forward(theta, x, &logdet, accumulate ? &cache : nullptr);
  double total = 0.0;
  Matrix dz;
  if (accumulate) {
    if (!base.logpdf_grad) throw ConfigError("ml_loss: base density has no gradient");
    dz.resize(z.rows(), z.cols());
  }
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double lp = base.logpdf(z.col(j));
    total -= lp + logdet[j];
    if (accumulate) dz.col(j) = -base.logpdf_grad(z.col(j)) / n;
  }
  const double loss = total / n;
  if (!std::isfinite(loss)) throw NumericError("ml_loss: non-finite loss (sample outside the base support?)");
  if (accumulate) net.backward(cache, x, dz, RowVector::Constant(z.cols(), -1.0 / n));
  return loss;
}

}  // namespace cpe
