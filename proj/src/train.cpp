#include "cpe/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cpe/error.hpp"

namespace cpe {

namespace {

constexpr std::uint64_t kSplitStream = 0x5b11;
constexpr std::uint64_t kValidationStream = 0x7a11;
constexpr std::uint64_t kEpochStream = 0xe90c;
constexpr int kMaxResample = 1000;
constexpr Eigen::Index kEvalChunk = 2048;

struct Prepared {
  Matrix train_theta, train_x, val_theta, val_x;  // standardized, columns, flow layout
};

// Seeded split, standardizer fit on the training part only.
Prepared prepare(const Dataset& data, const FlowStructure& structure, Standardizer& standardizer,
                 const TrainConfig& config) {
  const long n = data.size();
  if (n < 10) throw DataError("training needs at least 10 simulations, got " + std::to_string(n));
  if (data.theta.cols() != structure.layout.dim() || data.x.cols() != structure.prior.data_dim())
    throw DataError("dataset dimensions do not match the task");
  std::vector<long> perm(n);
  for (long i = 0; i < n; ++i) perm[i] = i;
  Rng rng = Rng(config.seed).substream(kSplitStream);
  for (long i = n - 1; i > 0; --i) std::swap(perm[i], perm[static_cast<long>(rng.uniform() * (i + 1)) % (i + 1)]);
  const long n_val = std::max(1L, static_cast<long>(std::lround(config.validation_fraction * n)));
  const std::vector<long> val(perm.begin(), perm.begin() + n_val);
  std::vector<long> tr(perm.begin() + n_val, perm.end());
  std::sort(tr.begin(), tr.end());

  const Matrix theta_flow = structure.layout.rows_to_flow(data.theta.transpose());
  const Matrix x_cols = data.x.transpose();
  Prepared p;
  const Matrix train_theta = theta_flow(Eigen::all, tr);
  const Matrix train_x = x_cols(Eigen::all, tr);
  standardizer.fit(train_theta, train_x);
  p.train_theta = standardizer.theta_to_std(train_theta);
  p.train_x = standardizer.x_to_std(train_x);
  p.val_theta = standardizer.theta_to_std(theta_flow(Eigen::all, val));
  p.val_x = standardizer.x_to_std(x_cols(Eigen::all, val));
  return p;
}

}  // namespace

Dataset simulate_dataset(const Task& task, long n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("simulate_dataset: N must be >= 1");
  Dataset data;
  data.task = task.name();
  data.seed = seed;
  data.theta.resize(n, task.theta_dim());
  data.x.resize(n, task.data_dim());
  const Rng root(seed);
  for (long i = 0; i < n; ++i) {
    Rng rng = root.substream(static_cast<std::uint64_t>(i));
    for (int attempt = 0;; ++attempt) {
      if (attempt > kMaxResample) throw NumericError("simulator kept returning non-finite output");
      const Vector theta = task.prior_sample(rng);
      const Vector x = task.simulate(theta, rng);
      if (theta.allFinite() && x.allFinite()) {
        data.theta.row(i) = theta.transpose();
        data.x.row(i) = x.transpose();
        break;
      }
      ++data.resampled;
    }
  }
  return data;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in (0, 1)");
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"beta1", beta1},         {"beta2", beta2},
          {"epsilon", epsilon},             {"batch_size", batch_size}, {"max_epochs", max_epochs},
          {"validation_fraction", validation_fraction}, {"patience", patience}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
  TrainConfig c;
  try {
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.epsilon = doc.value("epsilon", c.epsilon);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.max_epochs = doc.value("max_epochs", c.max_epochs);
    c.validation_fraction = doc.value("validation_fraction", c.validation_fraction);
    c.patience = doc.value("patience", c.patience);
    c.seed = doc.value("seed", c.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad training config: ") + ex.what());
  }
  c.validate();
  return c;
}

void optimizer_step(const ParameterList& params, AdamState& state, const TrainConfig& config) {
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto* p : params) {
      state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
      throw StructuralError("gradient shape differs for " + p.name);
    state.m[k] = config.beta1 * state.m[k] + (1.0 - config.beta1) * p.grad;
    state.v[k] = config.beta2 * state.v[k] + (1.0 - config.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= config.learning_rate * (state.m[k].array() / c1) /
                       ((state.v[k].array() / c2).sqrt() + config.epsilon);
    p.apply_mask();
  }
}

TrainHistory train_loop(TrainProblem& problem, const TrainConfig& config) {
  config.validate();
  if (problem.train_size < 1) throw DataError("empty training split");
  const ParameterList params = trainable(problem.params);
  TrainHistory history;
  Vector best = flatten_values(params);
  try {
    history.initial_val_loss = problem.validation_loss();
  } catch (const NumericError&) {
    history.initial_val_loss = std::numeric_limits<double>::quiet_NaN();
  }
  history.best_val_loss = history.initial_val_loss;
  if (!std::isfinite(history.initial_val_loss)) {
    history.diverged = true;
    history.message = "initial validation loss is not finite";
    return history;
  }
  AdamState state;
  std::vector<long> order(problem.train_size);
  for (long i = 0; i < problem.train_size; ++i) order[i] = i;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng rng = Rng(config.seed).substream(kEpochStream + static_cast<std::uint64_t>(epoch));
    for (long i = problem.train_size - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<long>(rng.uniform() * (i + 1)) % (i + 1)]);
    double total = 0.0;
    try {
      for (long start = 0; start < problem.train_size; start += config.batch_size) {
        const long end = std::min<long>(problem.train_size, start + config.batch_size);
        const std::vector<long> rows(order.begin() + start, order.begin() + end);
        zero_grads(params);
        const double loss = problem.batch_loss(rows, rng);
        if (!std::isfinite(loss)) throw NumericError("training loss is not finite");
        for (const auto* p : params)
          if (!p->grad.allFinite()) throw NumericError("gradient of " + p->name + " is not finite");
        total += loss * static_cast<double>(end - start);
        optimizer_step(params, state, config);
      }
      const double val = problem.validation_loss();
      if (!std::isfinite(val)) throw NumericError("validation loss is not finite");
      history.epochs.push_back({epoch, total / static_cast<double>(problem.train_size), val});
      if (val < history.best_val_loss) {
        history.best_val_loss = val;
        history.best_epoch = epoch;
        best = flatten_values(params);
      } else if (epoch - history.best_epoch >= config.patience) {
        break;
      }
    } catch (const NumericError& ex) {
      history.diverged = true;
      history.message = std::string("epoch ") + std::to_string(epoch) + ": " + ex.what();
      break;
    }
  }
  assign_values(params, best);
  return history;
}

RectifiedNoise draw_rectified_noise(const PriorModel& base, long n, Rng& rng) {
  RectifiedNoise noise;
  noise.t.resize(n);
  noise.theta0.resize(base.dim, n);
  for (long j = 0; j < n; ++j) {
    noise.t[j] = rng.uniform();
    noise.theta0.col(j) = base.sample(rng);
  }
  return noise;
}

double rectified_loss(VectorFieldNet& net, const Matrix& theta1, const Matrix& x, const RectifiedNoise& noise,
                      bool accumulate) {
  const Eigen::Index n = theta1.cols();
  if (n == 0) throw DataError("rectified_loss: empty batch");
  if (noise.theta0.rows() != theta1.rows() || noise.theta0.cols() != n || noise.t.size() != n)
    throw StructuralError("rectified_loss: noise does not match the batch");
  const Matrix theta_t = interpolate(noise.theta0, theta1, noise.t);
  VectorFieldNet::Cache cache;
  const Matrix v = net.forward(noise.t, theta_t, x, accumulate ? &cache : nullptr);
  const Matrix residual = (theta1 - noise.theta0) - v;
  const double loss = residual.squaredNorm() / static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericError("rectified_loss: non-finite loss");
  if (accumulate) net.backward(cache, noise.t, x, (-2.0 / static_cast<double>(n)) * residual);
  return loss;
}

double rectified_loss(VectorFieldNet& net, const Matrix& theta1, const Matrix& x, const PriorModel& base, Rng& rng,
                      bool accumulate) {
  return rectified_loss(net, theta1, x, draw_rectified_noise(base, theta1.cols(), rng), accumulate);
}

TrainHistory train(VectorFieldNet& net, const Dataset& data, const Task& task, const TrainConfig& config) {
  config.validate();
  const Prepared p = prepare(data, net.structure(), net.standardizer(), config);
  const PriorModel task_prior = task.prior();
  const PriorModel base = standardized_prior(task_prior, net.structure().layout, net.standardizer());

  Rng vrng = Rng(config.seed).substream(kValidationStream);
  const RectifiedNoise val_noise = draw_rectified_noise(base, p.val_theta.cols(), vrng);

  TrainProblem problem;
  problem.params = net.parameters();
  problem.train_size = p.train_theta.cols();
  problem.batch_loss = [&](const std::vector<long>& rows, Rng& rng) {
    const Matrix theta1 = p.train_theta(Eigen::all, rows);
    const Matrix x = p.train_x(Eigen::all, rows);
    return rectified_loss(net, theta1, x, base, rng, true);
  };
  problem.validation_loss = [&]() {
    double total = 0.0;
    const Eigen::Index n = p.val_theta.cols();
    for (Eigen::Index s = 0; s < n; s += kEvalChunk) {
      const Eigen::Index m = std::min(kEvalChunk, n - s);
      RectifiedNoise chunk{val_noise.t.segment(s, m), val_noise.theta0.middleCols(s, m)};
      total += rectified_loss(net, p.val_theta.middleCols(s, m), p.val_x.middleCols(s, m), chunk) * m;
    }
    return total / static_cast<double>(n);
  };
  return train_loop(problem, config);
}

TrainHistory train(DiscreteFlowNet& net, const Dataset& data, const Task& task, const TrainConfig& config) {
  config.validate();
  const Prepared p = prepare(data, net.structure(), net.standardizer(), config);
  const PriorModel task_prior = task.prior();
  const PriorModel base = standardized_prior(task_prior, net.structure().layout, net.standardizer());

  TrainProblem problem;
  problem.params = net.parameters();
  problem.train_size = p.train_theta.cols();
  problem.batch_loss = [&](const std::vector<long>& rows, Rng&) {
    const Matrix theta = p.train_theta(Eigen::all, rows);
    const Matrix x = p.train_x(Eigen::all, rows);
    return ml_loss(net, theta, x, base, true);
  };
  problem.validation_loss = [&]() {
    double total = 0.0;
    const Eigen::Index n = p.val_theta.cols();
    for (Eigen::Index s = 0; s < n; s += kEvalChunk) {
      const Eigen::Index m = std::min(kEvalChunk, n - s);
      total += ml_loss(net, p.val_theta.middleCols(s, m), p.val_x.middleCols(s, m), base) * m;
    }
    return total / static_cast<double>(n);
  };
  return train_loop(problem, config);
}

}  // namespace cpe
