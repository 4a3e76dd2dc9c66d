#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpe/cpeflow.hpp"
#include "cpe/eval.hpp"
#include "cpe/samplers.hpp"
#include "cpe/tasks.hpp"
#include "cpe/train.hpp"

namespace cpe {

namespace fs = std::filesystem;

/// Everything a pipeline run needs. Every field has a default; a JSON file
/// overrides defaults and command-line flags override the file.
struct RunConfig {
  std::string task = "linear_gaussian";
  long n_train = 10000;
  std::string variant = "continuous";  // or "discrete"
  std::string solver = "euler";        // or "rk45"; ignored by the discrete variant
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir;  // empty: $CPE_OUTPUT_ROOT, then ./cpe_runs
  long n_samples = 10000;
  int euler_steps = 20;
  std::string reference_method = "auto";  // "auto" uses the analytic posterior when one exists
  bool force = false;                     // retrain/resimulate even if outputs exist
  bool quiet = false;

  CpeConfig model;
  TrainConfig train;
  Rk45Config rk45;
  ReferenceConfig reference;
  C2stConfig c2st;

  // Grid for the benchmark command; empty lists mean {task} and {n_train}.
  std::vector<std::string> grid_tasks;
  std::vector<long> grid_n_train;
  std::vector<std::string> grid_variants;

  void validate() const;
  /// Full config; output_dir, force and quiet are left out of hashes.
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& doc);
};

/// Reads the optional file, merges `overrides` on top and parses the result.
RunConfig load_config(const std::optional<fs::path>& file, const nlohmann::json& overrides);

/// Seeds for the stages of one run, all derived from the run seed.
struct RunSeeds {
  std::uint64_t data;
  std::uint64_t train;
  std::uint64_t observation;
  std::uint64_t sample;
  std::uint64_t reference;
  std::uint64_t eval;
};
RunSeeds run_seeds(std::uint64_t seed);

/// Output layout under the root:
///   <task>/observations/seed<s>.json
///   <task>/reference/seed<s>.csv (+ .json)
///   <task>/N<n>/seed<s>/dataset.csv
///   <task>/N<n>/seed<s>/<variant>/{model.ckpt, history.csv, train.json}
///   <task>/N<n>/seed<s>/<variant>/samples_<solver>.csv (+ .json), eval_<solver>.json
///   results.csv, summary.csv
struct RunPaths {
  fs::path root;
  fs::path observation;
  fs::path reference;
  fs::path dataset;
  fs::path model_dir;
  fs::path checkpoint;
  fs::path history;
  fs::path train_summary;
  fs::path samples;
  fs::path eval;
  fs::path results;
  fs::path summary;
};
fs::path output_root(const RunConfig& config);
RunPaths run_paths(const RunConfig& config, std::uint64_t seed);

/// Method label used in reports: cpe-euler, cpe-rk45 or dcpe.
std::string method_name(const RunConfig& config);

/// Hashes of the settings each stage depends on.
std::string dataset_hash(const RunConfig& config, std::uint64_t seed);
std::string model_hash(const RunConfig& config, std::uint64_t seed);
std::string samples_hash(const RunConfig& config, std::uint64_t seed);
std::string reference_hash(const RunConfig& config, std::uint64_t seed);
std::string eval_hash(const RunConfig& config, std::uint64_t seed);

/// Loads the observation for a seed, creating it on first use.
Observation ensure_observation(const RunConfig& config, std::uint64_t seed);

// Each command runs every seed of the config and returns the files written
// or confirmed up to date.
std::vector<fs::path> cmd_simulate(const RunConfig& config, std::ostream& log);
std::vector<fs::path> cmd_train(const RunConfig& config, std::ostream& log);
std::vector<fs::path> cmd_sample(const RunConfig& config, std::ostream& log);
std::vector<fs::path> cmd_reference(const RunConfig& config, std::ostream& log);
std::vector<EvalReport> cmd_evaluate(const RunConfig& config, std::ostream& log);
/// Runs the whole pipeline over the grid; failed runs are logged and skipped.
/// Returns the number of failed runs.
int cmd_benchmark(const RunConfig& config, std::ostream& log);

/// Rewrites summary.csv from results.csv: mean, sd and count per
/// (task, method, n_train, metric).
void write_summary(const fs::path& results, const fs::path& summary);

/// 0 ok, 2 config/lookup, 3 data/structural, 4 numeric/inversion, 1 otherwise.
int exit_code_for(const std::exception& ex);

/// Command-line entry point.
int run_cli(int argc, char** argv);

}  // namespace cpe
