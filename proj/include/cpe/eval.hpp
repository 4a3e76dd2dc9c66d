#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpe/sampleset.hpp"
#include "cpe/types.hpp"

namespace cpe {

struct C2stConfig {
  int hidden_layers = 2;
  int width = 64;
  int folds = 5;
  int epochs = 200;
  int patience = 20;
  double learning_rate = 1e-4;
  int batch_size = 128;
  double validation_fraction = 0.1;
  long min_samples = 500;
};

/// Cross-validated accuracy of an MLP telling the rows of a from the rows of
/// b, folded to max(acc, 1 - acc). Classes are balanced by subsampling and
/// inputs are standardized with the pooled statistics.
double c2st(const Matrix& a, const Matrix& b, const C2stConfig& config, std::uint64_t seed);
double c2st(const SampleSet& a, const SampleSet& b, const C2stConfig& config, std::uint64_t seed);

struct MomentReport {
  double mean_error = 0.0;  // |mean(a) - mean(b)|_2
  double cov_error = 0.0;   // |cov(a) - cov(b)|_F
};

MomentReport moment_report(const Matrix& a, const Matrix& b);

/// Inertia of the best 1-cluster fit over the best 2-means fit (k-means++,
/// Lloyd iterations, several restarts). Large values indicate two clusters.
double two_cluster_ratio(const Matrix& samples, std::uint64_t seed, int restarts = 5);
inline bool has_two_clusters(const Matrix& samples, std::uint64_t seed) {
  return two_cluster_ratio(samples, seed) > 1.5;
}

struct EvalReport {
  std::string task;
  std::string method;
  long n_train = 0;
  std::uint64_t train_seed = 0;
  std::uint64_t sample_seed = 0;
  double c2st = 0.0;
  double mean_error = 0.0;
  double cov_error = 0.0;
  double acceptance_rate = 0.0;

  static std::vector<std::string> columns();
  std::vector<std::string> row() const;
  nlohmann::json to_json() const;
};

}  // namespace cpe
