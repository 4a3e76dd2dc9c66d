#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/distributions/normal.hpp>

#include "cpe/error.hpp"
#include "cpe/tasks.hpp"

namespace cpe {

nlohmann::json SampleSet::metadata() const {
  return {{"task", task},
          {"method", method},
          {"solver", solver},
          {"seed", seed},
          {"n", size()},
          {"dim", dim()},
          {"accepted", accepted},
          {"proposed", proposed},
          {"acceptance_rate", acceptance_rate()},
          {"diagnostics", diagnostics}};
}

void ReferenceConfig::validate() const {
  if (chains < 1) throw ConfigError("reference: chains must be >= 1");
  if (thin < 1) throw ConfigError("reference: thin must be >= 1");
  if (warmup < 0 || warmup >= samples) throw ConfigError("reference: need 0 <= warmup < samples");
  if (!(width_factor > 0.0)) throw ConfigError("reference: width_factor must be positive");
}

namespace {

double variance(const Vector& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

// Classic R-hat over equally long chains stored as columns.
double basic_rhat(const Matrix& chains) {
  const double n = static_cast<double>(chains.rows());
  const Eigen::Index m = chains.cols();
  Vector means(m), vars(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    means[j] = chains.col(j).mean();
    vars[j] = variance(chains.col(j));
  }
  const double w = vars.mean();
  const double b = n * variance(means);
  if (!(w > 0.0)) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

// Pooled ranks mapped through the normal quantile, average ranks for ties.
Matrix rank_normalize(const Matrix& chains) {
  const Eigen::Index total = chains.size();
  std::vector<Eigen::Index> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  const double* data = chains.data();
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return data[a] < data[b]; });
  Matrix out(chains.rows(), chains.cols());
  double* o = out.data();
  const boost::math::normal_distribution<double> normal;
  Eigen::Index i = 0;
  while (i < total) {
    Eigen::Index j = i;
    while (j + 1 < total && data[idx[j + 1]] == data[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double z = boost::math::quantile(normal, (rank - 0.375) / (static_cast<double>(total) + 0.25));
    for (Eigen::Index k = i; k <= j; ++k) o[idx[k]] = z;
    i = j + 1;
  }
  return out;
}

}  // namespace

Vector split_rhat(const std::vector<Matrix>& chains) {
  if (chains.empty()) throw DataError("split_rhat: no chains");
  const Eigen::Index n = chains.front().rows();
  const Eigen::Index d = chains.front().cols();
  if (n < 4) throw DataError("split_rhat: chains too short");
  const Eigen::Index half = n / 2;
  Vector out(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    Matrix split(half, 2 * static_cast<Eigen::Index>(chains.size()));
    for (std::size_t c = 0; c < chains.size(); ++c) {
      split.col(2 * c) = chains[c].col(k).head(half);
      split.col(2 * c + 1) = chains[c].col(k).segment(n - half, half);
    }
    const double bulk = basic_rhat(rank_normalize(split));
    std::vector<double> flat(split.data(), split.data() + split.size());
    std::nth_element(flat.begin(), flat.begin() + flat.size() / 2, flat.end());
    const double median = flat[flat.size() / 2];
    const double tail = basic_rhat(rank_normalize((split.array() - median).abs().matrix()));
    out[k] = std::max(bulk, tail);
  }
  return out;
}

SampleSet slice_sample_reference(const Task& task, const Vector& x_obs, const ReferenceConfig& config,
                                 std::uint64_t seed) {
  config.validate();
  if (x_obs.size() != task.data_dim()) throw StructuralError("x_obs has the wrong dimension");
  const int d = task.theta_dim();
  const Vector width = config.width_factor * task.prior_scale();
  auto log_target = [&](const Vector& theta) {
    const double lp = task.prior_logpdf(theta);
    if (lp == -std::numeric_limits<double>::infinity()) return lp;
    const double ll = task.log_likelihood(theta, x_obs);
    return std::isnan(ll) ? -std::numeric_limits<double>::infinity() : lp + ll;
  };

  const int kept_per_chain = (config.samples - config.warmup + config.thin - 1) / config.thin;
  std::vector<Matrix> draws(config.chains, Matrix(kept_per_chain, d));
  long evaluations = 0;
  for (int c = 0; c < config.chains; ++c) {
    Rng rng = Rng(seed).substream(static_cast<std::uint64_t>(c));
    Vector theta;
    double logp = -std::numeric_limits<double>::infinity();
    for (int attempt = 0; attempt <= config.max_restarts && !std::isfinite(logp); ++attempt) {
      theta = task.prior_sample(rng);
      logp = log_target(theta);
    }
    if (!std::isfinite(logp)) throw NumericError("reference: no start point with positive density");

    std::exponential_distribution<double> expo(1.0);
    int kept = 0;
    for (int it = 0; it < config.samples; ++it) {
      // One hit-and-run slice update along a random direction.
      Vector dir = rng.normal_vector(d);
      dir /= dir.norm();
      dir = dir.cwiseProduct(width);
      const double level = logp - expo(rng.engine());
      double lo = -rng.uniform();
      double hi = lo + 1.0;
      for (int s = 0; s < 100 && log_target(theta + lo * dir) > level; ++s, ++evaluations) lo -= 1.0;
      for (int s = 0; s < 100 && log_target(theta + hi * dir) > level; ++s, ++evaluations) hi += 1.0;
      for (int s = 0;; ++s) {
        if (s > 200) throw NumericError("reference: slice shrinkage did not terminate");
        const double step = rng.uniform(lo, hi);
        const Vector proposal = theta + step * dir;
        const double lp = log_target(proposal);
        ++evaluations;
        if (lp > level) {
          theta = proposal;
          logp = lp;
          break;
        }
        if (step < 0.0) lo = step;
        else hi = step;
      }
      if (it >= config.warmup && (it - config.warmup) % config.thin == 0) draws[c].row(kept++) = theta.transpose();
    }
  }

  SampleSet out;
  out.task = task.name();
  out.method = "reference";
  out.solver = "slice";
  out.seed = seed;
  out.samples.resize(static_cast<Eigen::Index>(kept_per_chain) * config.chains, d);
  for (int c = 0; c < config.chains; ++c) out.samples.middleRows(c * kept_per_chain, kept_per_chain) = draws[c];
  out.accepted = out.proposed = out.size();
  out.diagnostics["chains"] = config.chains;
  out.diagnostics["samples_per_chain"] = config.samples;
  out.diagnostics["warmup"] = config.warmup;
  out.diagnostics["thin"] = config.thin;
  out.diagnostics["density_evaluations"] = evaluations;
  if (config.chains >= 2 && kept_per_chain >= 4) {
    const Vector rhat = split_rhat(draws);
    out.diagnostics["rhat"] = std::vector<double>(rhat.data(), rhat.data() + rhat.size());
    if ((rhat.array() > 1.05).any())
      out.diagnostics["warning"] = "split R-hat above 1.05; chains may not have mixed";
  }
  return out;
}

}  // namespace cpe
