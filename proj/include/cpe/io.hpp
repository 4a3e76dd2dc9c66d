#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpe/cpeflow.hpp"
#include "cpe/dcpeflow.hpp"
#include "cpe/sampleset.hpp"
#include "cpe/train.hpp"

namespace cpe {

namespace fs = std::filesystem;

std::string sha256_hex(const std::string& bytes);

/// Lowercase hex SHA-256 of a canonical JSON dump.
std::string json_hash(const nlohmann::json& doc);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// Provenance written on the first line of every CSV.
struct CsvStamp {
  std::string config_hash;
  std::uint64_t seed = 0;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::string config_hash;
  std::string content_hash;
  std::uint64_t seed = 0;

  int column(const std::string& name) const;  // LookupError if absent
};

/// Writes "# config_hash=... seed=... content_hash=..." then the header and
/// rows. The content hash covers everything after the first line.
void write_csv(const fs::path& path, const CsvTable& table, const CsvStamp& stamp);
CsvTable read_csv(const fs::path& path);

/// Writes atomically enough for reruns: a temp file renamed into place.
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const fs::path& path);

/// Column names for a task's flattened parameters, e.g. gamma[0], theta1.
std::vector<std::string> parameter_columns(const Dag& dag);
std::vector<std::string> data_columns(const Dag& dag);

void write_dataset(const fs::path& path, const Dataset& data, const Dag& dag, const CsvStamp& stamp);
Dataset read_dataset(const fs::path& path, const Dag& dag);

/// Samples as CSV plus a JSON sidecar next to it (path with .json).
void write_samples(const fs::path& csv_path, const SampleSet& samples, const Dag& dag, const CsvStamp& stamp);
SampleSet read_samples(const fs::path& csv_path);

void write_history(const fs::path& path, const TrainHistory& history, const CsvStamp& stamp);

// -- checkpoints ------------------------------------------------------------

/// Binary layout: 8-byte magic, uint64 little-endian header length, JSON
/// header, then every parameter's values as raw little-endian doubles in
/// column-major order, in header order.
void save_checkpoint(const fs::path& path, VectorFieldNet& net, const nlohmann::json& extra = {});
void save_checkpoint(const fs::path& path, DiscreteFlowNet& net, const nlohmann::json& extra = {});

struct Checkpoint {
  nlohmann::json header;
  std::string variant;  // "continuous" or "discrete"
};

/// Reads only the header; DataError for anything malformed.
Checkpoint read_checkpoint_header(const fs::path& path);
VectorFieldNet load_vector_field(const fs::path& path);
DiscreteFlowNet load_discrete_flow(const fs::path& path);

}  // namespace cpe
