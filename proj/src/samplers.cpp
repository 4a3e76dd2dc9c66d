#include "cpe/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cpe/error.hpp"

namespace cpe {

namespace {

constexpr double kProposalCap = 10.0;

// Dormand-Prince 5(4).
constexpr double C[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double A[6][6] = {
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr double E[7] = {-71.0 / 57600, 0.0, 71.0 / 16695, -71.0 / 1920, 17253.0 / 339200, -22.0 / 525, 1.0 / 40};

RowVector rms_cols(const Matrix& m) { return (m.colwise().squaredNorm() / static_cast<double>(m.rows())).cwiseSqrt(); }

}  // namespace

Integration euler_integrate(const BatchField& field, const Matrix& theta0, int steps) {
  if (steps < 1) throw ConfigError("Euler needs at least one step");
  Integration out;
  out.theta = theta0;
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const RowVector t = RowVector::Constant(theta0.cols(), static_cast<double>(k) / steps);
    out.theta += dt * field(t, out.theta);
    out.evaluations += theta0.cols();
  }
  out.ok.resize(theta0.cols());
  for (Eigen::Index j = 0; j < theta0.cols(); ++j) out.ok[j] = out.theta.col(j).allFinite();
  return out;
}

Integration rk45_integrate(const BatchField& field, const Matrix& theta0, const Rk45Config& config) {
  const Eigen::Index d = theta0.rows();
  const Eigen::Index n = theta0.cols();
  Integration out;
  out.theta = theta0;
  out.ok.assign(n, true);
  if (n == 0) return out;

  RowVector t = RowVector::Zero(n);
  Matrix f = field(t, out.theta);
  out.evaluations += n;

  // Initial step per trajectory, following the usual two-evaluation heuristic.
  RowVector h(n);
  {
    const Matrix scale = (config.atol + config.rtol * out.theta.array().abs()).matrix();
    const RowVector d0 = rms_cols((out.theta.array() / scale.array()).matrix());
    const RowVector d1 = rms_cols((f.array() / scale.array()).matrix());
    RowVector h0(n);
    for (Eigen::Index j = 0; j < n; ++j) h0[j] = (d0[j] < 1e-5 || d1[j] < 1e-5) ? 1e-6 : 0.01 * d0[j] / d1[j];
    h0 = h0.cwiseMin(1.0);
    const Matrix y1 = out.theta + (f.array().rowwise() * h0.array()).matrix();
    const Matrix f1 = field(h0, y1);
    out.evaluations += n;
    const RowVector d2 = (rms_cols(((f1 - f).array() / scale.array()).matrix()).array() / h0.array()).matrix();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double m = std::max(d1[j], d2[j]);
      const double h1 = m <= 1e-15 ? std::max(1e-6, h0[j] * 1e-3) : std::pow(0.01 / m, 1.0 / 5.0);
      h[j] = std::min({100.0 * h0[j], h1, 1.0});
    }
  }

  std::vector<bool> active(n, true);
  std::vector<long> steps(n, 0);
  for (Eigen::Index j = 0; j < n; ++j)
    if (!out.theta.col(j).allFinite() || !f.col(j).allFinite()) active[j] = out.ok[j] = false;

  for (;;) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (active[j]) idx.push_back(j);
    if (idx.empty()) break;
    const Eigen::Index m = static_cast<Eigen::Index>(idx.size());
    const Matrix y = out.theta(Eigen::all, idx);
    const RowVector tt = t(idx);
    const RowVector hh = h(idx);
    Matrix k[7];
    k[0] = f(Eigen::all, idx);
    for (int s = 1; s < 7; ++s) {
      Matrix incr = Matrix::Zero(d, m);
      for (int q = 0; q < s; ++q)
        if (A[s - 1][q] != 0.0) incr += A[s - 1][q] * k[q];
      const Matrix ys = y + (incr.array().rowwise() * hh.array()).matrix();
      k[s] = field(tt + C[s] * hh, ys);
      out.evaluations += m;
    }
    Matrix y_new = y;
    {
      Matrix incr = Matrix::Zero(d, m);
      for (int q = 0; q < 6; ++q) incr += A[5][q] * k[q];
      y_new += (incr.array().rowwise() * hh.array()).matrix();
    }
    Matrix err = Matrix::Zero(d, m);
    for (int q = 0; q < 7; ++q) err += E[q] * k[q];
    err = (err.array().rowwise() * hh.array()).matrix();
    const Matrix scale = (config.atol + config.rtol * y.array().abs().max(y_new.array().abs())).matrix();
    const RowVector err_norm = rms_cols((err.array() / scale.array()).matrix());

    for (Eigen::Index a = 0; a < m; ++a) {
      const Eigen::Index j = idx[a];
      if (++steps[j] > config.max_steps || !std::isfinite(err_norm[a]) || !y_new.col(a).allFinite()) {
        active[j] = out.ok[j] = false;
        continue;
      }
      double factor;
      if (err_norm[a] < 1.0) {
        out.theta.col(j) = y_new.col(a);
        f.col(j) = k[6].col(a);
        t[j] = (1.0 - t[j] <= hh[a]) ? 1.0 : t[j] + hh[a];
        factor = err_norm[a] == 0.0 ? 10.0 : std::min(10.0, 0.9 * std::pow(err_norm[a], -0.2));
        if (t[j] >= 1.0) {
          active[j] = false;
          continue;
        }
      } else {
        factor = std::max(0.2, 0.9 * std::pow(err_norm[a], -0.2));
      }
      h[j] = std::min(hh[a] * factor, 1.0 - t[j]);
      if (h[j] < config.min_step) active[j] = out.ok[j] = false;
    }
  }
  return out;
}

SampleSet rejection_filter(const Matrix& candidates, const PriorModel& prior) {
  SampleSet out;
  out.proposed = candidates.rows();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
    const Vector row = candidates.row(i).transpose();
    if (row.allFinite() && prior.logpdf(row) > -std::numeric_limits<double>::infinity()) keep.push_back(i);
  }
  out.samples = candidates(keep, Eigen::all);
  out.accepted = static_cast<long>(keep.size());
  return out;
}

SampleSet sample_until(const PriorModel& prior, const Proposal& proposal, long n, std::uint64_t seed, long chunk) {
  if (n < 1) throw ConfigError("need at least one sample");
  const long cap = static_cast<long>(kProposalCap * static_cast<double>(n));
  const Rng root(seed);
  std::vector<Vector> kept;
  long proposed = 0;
  while (static_cast<long>(kept.size()) < n) {
    if (proposed >= cap)
      throw NumericError("only " + std::to_string(kept.size()) + " of " + std::to_string(n) +
                         " samples accepted within " + std::to_string(cap) + " proposals");
    const long remaining = n - static_cast<long>(kept.size());
    const double rate = proposed > 0 ? std::max(0.1, static_cast<double>(kept.size()) / proposed) : 1.0;
    const long batch = std::min({chunk, cap - proposed, static_cast<long>(std::ceil(remaining / rate))});
    Matrix base(prior.dim, batch);
    for (long j = 0; j < batch; ++j) {
      Rng rng = root.substream(static_cast<std::uint64_t>(proposed + j));
      base.col(j) = prior.sample(rng);
    }
    std::vector<bool> ok;
    const Matrix result = proposal(base, ok);
    for (long j = 0; j < batch; ++j) {
      ++proposed;
      const Vector col = result.col(j);
      if (ok[j] && col.allFinite() && prior.logpdf(col) > -std::numeric_limits<double>::infinity()) {
        kept.push_back(col);
        // Proposals after the n-th acceptance are never counted.
        if (static_cast<long>(kept.size()) == n) break;
      }
    }
  }
  SampleSet out;
  out.samples.resize(n, prior.dim);
  for (long i = 0; i < n; ++i) out.samples.row(i) = kept[i].transpose();
  out.accepted = n;
  out.proposed = proposed;
  out.seed = seed;
  return out;
}

SampleSet euler_sample(const BatchField& field, const PriorModel& prior, long n, int steps, std::uint64_t seed) {
  SampleSet out = sample_until(
      prior,
      [&](const Matrix& base, std::vector<bool>& ok) {
        Integration r = euler_integrate(field, base, steps);
        ok = std::move(r.ok);
        return std::move(r.theta);
      },
      n, seed);
  out.solver = "euler";
  out.diagnostics["steps"] = steps;
  return out;
}

SampleSet rk45_sample(const BatchField& field, const PriorModel& prior, long n, const Rk45Config& config,
                      std::uint64_t seed) {
  long evaluations = 0;
  SampleSet out = sample_until(
      prior,
      [&](const Matrix& base, std::vector<bool>& ok) {
        Integration r = rk45_integrate(field, base, config);
        evaluations += r.evaluations;
        ok = std::move(r.ok);
        return std::move(r.theta);
      },
      n, seed);
  out.solver = "rk45";
  out.diagnostics["rtol"] = config.rtol;
  out.diagnostics["atol"] = config.atol;
  out.diagnostics["field_evaluations"] = evaluations;
  return out;
}

BatchField cpe_field(const VectorFieldNet& net, const Vector& x_obs) {
  if (x_obs.size() != net.data_dim()) throw StructuralError("x_obs has the wrong dimension");
  const Standardizer& st = net.standardizer();
  const Vector x_std = st.x_to_std(x_obs);
  const Vector scale = st.theta_scale();
  const ParamLayout& layout = net.structure().layout;
  return [&net, &st, &layout, x_std, scale](const RowVector& t, const Matrix& theta) {
    const Matrix u = st.theta_to_std(layout.rows_to_flow(theta));
    const Matrix v = net.forward(t, u, x_std.replicate(1, theta.cols()));
    return layout.rows_to_natural((v.array().colwise() * scale.array()).matrix());
  };
}

SampleSet discrete_sample(const DiscreteFlowNet& net, const PriorModel& prior, const Vector& x_obs, long n,
                          std::uint64_t seed) {
  if (x_obs.size() != net.data_dim()) throw StructuralError("x_obs has the wrong dimension");
  const Standardizer& st = net.standardizer();
  const ParamLayout& layout = net.structure().layout;
  const Vector x_std = st.x_to_std(x_obs);
  SampleSet out = sample_until(
      prior,
      [&](const Matrix& base, std::vector<bool>& ok) {
        const Matrix z = st.theta_to_std(layout.rows_to_flow(base));
        const Matrix u = net.invert_batch(z, x_std.replicate(1, base.cols()), ok);
        return layout.rows_to_natural(st.theta_from_std(u));
      },
      n, seed);
  out.solver = "bisection";
  return out;
}

}  // namespace cpe
