#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "cpe/types.hpp"

namespace cpe {

/// Posterior, prior or reference draws: one row per sample, natural layout.
struct SampleSet {
  Matrix samples;
  long accepted = 0;
  long proposed = 0;
  std::string task;
  std::string method;
  std::string solver;
  std::uint64_t seed = 0;
  nlohmann::json diagnostics = nlohmann::json::object();

  int dim() const { return static_cast<int>(samples.cols()); }
  long size() const { return static_cast<long>(samples.rows()); }
  double acceptance_rate() const { return proposed > 0 ? static_cast<double>(accepted) / proposed : 0.0; }
  /// Counts, rates, seed and solver settings for the JSON sidecar.
  nlohmann::json metadata() const;
};

}  // namespace cpe
