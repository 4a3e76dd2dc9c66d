#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpe/cpeflow.hpp"
#include "cpe/dcpeflow.hpp"
#include "cpe/tasks.hpp"

namespace cpe {

/// Simulated pairs, one row per draw, parameters in the natural layout.
struct Dataset {
  Matrix theta;  // N x d_theta
  Matrix x;      // N x d_x
  std::string task;
  std::uint64_t seed = 0;
  long resampled = 0;  // rows redrawn after a non-finite simulation

  long size() const { return static_cast<long>(theta.rows()); }
};

/// Row i uses its own substream, so any prefix of a larger dataset matches.
Dataset simulate_dataset(const Task& task, long n, std::uint64_t seed);

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 128;
  int max_epochs = 2000;
  double validation_fraction = 0.1;
  int patience = 100;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& doc);
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

/// One Adam update from the gradients stored in the parameters. Frozen
/// parameters are skipped and masks are re-applied after the update.
void optimizer_step(const ParameterList& params, AdamState& state, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  double initial_val_loss = 0.0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 means the initial parameters
  double best_val_loss = 0.0;
  bool diverged = false;
  std::string message;
};

/// What the generic loop needs: a minibatch objective that accumulates into
/// the parameters and a deterministic validation loss.
struct TrainProblem {
  ParameterList params;
  long train_size = 0;
  std::function<double(const std::vector<long>& rows, Rng& rng)> batch_loss;
  std::function<double()> validation_loss;
};

/// Adam with shuffled minibatches, early stopping on the validation loss and
/// best-checkpoint restore. A non-finite loss stops training and restores the
/// best parameters; the history is marked diverged.
TrainHistory train_loop(TrainProblem& problem, const TrainConfig& config);

/// Flow-matching noise for a batch: times and base draws, standardized.
struct RectifiedNoise {
  RowVector t;
  Matrix theta0;
};

RectifiedNoise draw_rectified_noise(const PriorModel& base, long n, Rng& rng);

/// Mean over columns of |(theta1 - theta0) - v_t(theta_t, x)|^2. Inputs are
/// standardized and in flow layout; gradients accumulate when asked.
double rectified_loss(VectorFieldNet& net, const Matrix& theta1, const Matrix& x, const RectifiedNoise& noise,
                      bool accumulate = false);
double rectified_loss(VectorFieldNet& net, const Matrix& theta1, const Matrix& x, const PriorModel& base, Rng& rng,
                      bool accumulate = false);

/// Fits the standardizer on the training split and trains in place.
TrainHistory train(VectorFieldNet& net, const Dataset& data, const Task& task, const TrainConfig& config);
TrainHistory train(DiscreteFlowNet& net, const Dataset& data, const Task& task, const TrainConfig& config);

}  // namespace cpe
