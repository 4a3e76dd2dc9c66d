#include "cpe/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "cpe/error.hpp"

namespace cpe {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'P', 'E', 'C', 'K', 'P', 'T', '1'};

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ',';
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const fs::path& path) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    // from_chars rejects "inf"/"nan" spellings produced by other tools.
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw DataError(path.string() + ": cannot parse number '" + s + "'");
  }
  return v;
}

std::string mask_rows(const BoolMatrix& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (i) out += '/';
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += m(i, j) ? '1' : '0';
  }
  return out;
}

nlohmann::json checkpoint_header(const std::string& variant, const FlowStructure& s, const CpeConfig& config,
                                 const ParameterList& params, const nlohmann::json& extra) {
  nlohmann::json h;
  h["format"] = 1;
  h["variant"] = variant;
  h["config"] = config.to_json();
  h["dag"] = s.prior.to_json();
  h["order"] = s.order.order;
  h["dim_mask"] = mask_rows(s.mask.dim_mask);
  h["config_hash"] = json_hash({{"variant", variant}, {"config", config.to_json()}, {"dag", s.prior.to_json()}});
  nlohmann::json plist = nlohmann::json::array();
  for (const auto* p : params)
    plist.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"trainable", p->trainable}});
  h["parameters"] = plist;
  if (!extra.is_null()) h["extra"] = extra;
  return h;
}

void write_checkpoint(const fs::path& path, const nlohmann::json& header, const ParameterList& params) {
  std::ostringstream os(std::ios::binary);
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  os.write(kMagic, sizeof(kMagic));
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : params)
    os.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  write_text(path, os.str());
}

// Fills params from the payload after validating names and shapes.
template <class Net>
Net load_net(const fs::path& path, const std::string& variant) {
  const std::string bytes = read_text(path);
  auto fail = [&](const std::string& why) -> DataError {
    return DataError("corrupted checkpoint " + path.string() + ": " + why);
  };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw fail("bad magic bytes");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (len > bytes.size() - 16) throw fail("header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& ex) {
    throw fail(std::string("unreadable header: ") + ex.what());
  }
  if (header.value("variant", std::string()) != variant)
    throw fail("expected a " + variant + " checkpoint, found '" + header.value("variant", std::string()) + "'");
  try {
    const CpeConfig config = CpeConfig::from_json(header.at("config"));
    const Dag dag = Dag::from_json(header.at("dag"));
    const TopologicalOrder order{header.at("order").get<std::vector<std::string>>()};
    const FlowStructure structure = FlowStructure::from_prior(dag, order, config.scope);
    if (mask_rows(structure.mask.dim_mask) != header.at("dim_mask").get<std::string>())
      throw fail("stored mask does not match the stored graph");
    Net net(structure, config, 0);
    const ParameterList params = net.parameters();
    const auto& plist = header.at("parameters");
    if (plist.size() != params.size()) throw fail("parameter count differs");
    std::size_t offset = 16 + len;
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      if (plist[k].at("name").get<std::string>() != p.name || plist[k].at("rows").get<long>() != p.value.rows() ||
          plist[k].at("cols").get<long>() != p.value.cols())
        throw fail("parameter " + std::to_string(k) + " does not match '" + p.name + "'");
      const std::size_t nbytes = static_cast<std::size_t>(p.value.size()) * sizeof(double);
      if (offset + nbytes > bytes.size()) throw fail("truncated payload");
      std::memcpy(p.value.data(), bytes.data() + offset, nbytes);
      offset += nbytes;
    }
    if (offset != bytes.size()) throw fail("trailing bytes after payload");
    return net;
  } catch (const nlohmann::json::exception& ex) {
    throw fail(std::string("malformed header: ") + ex.what());
  } catch (const StructuralError& ex) {
    throw fail(ex.what());
  } catch (const ConfigError& ex) {
    throw fail(ex.what());
  }
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw NumericError("SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string json_hash(const nlohmann::json& doc) { return sha256_hex(doc.dump()); }

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("number formatting failed");
  return std::string(buf, ptr);
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  throw LookupError("no column '" + name + "'");
}

void write_csv(const fs::path& path, const CsvTable& table, const CsvStamp& stamp) {
  std::string body = join(table.columns) + "\n";
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) throw StructuralError("CSV row width differs from header");
    body += join(row) + "\n";
  }
  const std::string first = "# config_hash=" + stamp.config_hash + " seed=" + std::to_string(stamp.seed) +
                            " content_hash=" + sha256_hex(body) + "\n";
  write_text(path, first + body);
}

CsvTable read_csv(const fs::path& path) {
  std::istringstream is(read_text(path));
  CsvTable table;
  std::string line;
  bool header = false;
  std::string body;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] == '#') {
      std::istringstream fields(line.substr(1));
      std::string kv;
      while (fields >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "config_hash") table.config_hash = value;
        else if (key == "content_hash") table.content_hash = value;
        else if (key == "seed") table.seed = std::stoull(value);
      }
      continue;
    }
    if (line.empty()) continue;
    body += line + "\n";
    if (!header) {
      table.columns = split(line);
      header = true;
    } else {
      auto row = split(line);
      if (row.size() != table.columns.size())
        throw DataError(path.string() + ": row has " + std::to_string(row.size()) + " fields, expected " +
                        std::to_string(table.columns.size()));
      table.rows.push_back(std::move(row));
    }
  }
  if (!header) throw DataError(path.string() + ": missing CSV header");
  if (!table.content_hash.empty() && sha256_hex(body) != table.content_hash)
    throw DataError(path.string() + ": content hash mismatch (file edited or truncated)");
  return table;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw DataError("write failed for " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp.string() + " into place: " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing file: " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(path.string() + ": invalid JSON: " + ex.what());
  }
}

namespace {
std::vector<std::string> columns_for(const Dag& dag, NodeRole role) {
  std::vector<std::string> out;
  for (const auto& n : dag.nodes()) {
    if (n.role != role) continue;
    if (n.dim == 1) out.push_back(n.id);
    else
      for (int k = 0; k < n.dim; ++k) out.push_back(n.id + "[" + std::to_string(k) + "]");
  }
  return out;
}
}  // namespace

std::vector<std::string> parameter_columns(const Dag& dag) { return columns_for(dag, NodeRole::parameter); }
std::vector<std::string> data_columns(const Dag& dag) { return columns_for(dag, NodeRole::data); }

void write_dataset(const fs::path& path, const Dataset& data, const Dag& dag, const CsvStamp& stamp) {
  CsvTable table;
  table.columns = parameter_columns(dag);
  for (auto& c : data_columns(dag)) table.columns.push_back("x:" + c);
  for (long i = 0; i < data.size(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < data.theta.cols(); ++j) row.push_back(format_double(data.theta(i, j)));
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) row.push_back(format_double(data.x(i, j)));
    table.rows.push_back(std::move(row));
  }
  write_csv(path, table, stamp);
}

Dataset read_dataset(const fs::path& path, const Dag& dag) {
  const CsvTable table = read_csv(path);
  const int dt = dag.parameter_dim(), dx = dag.data_dim();
  if (static_cast<int>(table.columns.size()) != dt + dx)
    throw DataError(path.string() + ": dataset columns do not match the task");
  Dataset data;
  data.seed = table.seed;
  data.theta.resize(static_cast<Eigen::Index>(table.rows.size()), dt);
  data.x.resize(static_cast<Eigen::Index>(table.rows.size()), dx);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (int j = 0; j < dt; ++j) data.theta(i, j) = parse_double(table.rows[i][j], path);
    for (int j = 0; j < dx; ++j) data.x(i, j) = parse_double(table.rows[i][dt + j], path);
  }
  return data;
}

void write_samples(const fs::path& csv_path, const SampleSet& samples, const Dag& dag, const CsvStamp& stamp) {
  CsvTable table;
  table.columns = parameter_columns(dag);
  if (static_cast<int>(table.columns.size()) != samples.dim())
    throw StructuralError("sample dimension does not match the task");
  for (long i = 0; i < samples.size(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < samples.samples.cols(); ++j) row.push_back(format_double(samples.samples(i, j)));
    table.rows.push_back(std::move(row));
  }
  write_csv(csv_path, table, stamp);
  nlohmann::json meta = samples.metadata();
  meta["config_hash"] = stamp.config_hash;
  meta["columns"] = table.columns;
  meta["csv_content_hash"] = read_csv(csv_path).content_hash;
  fs::path sidecar = csv_path;
  sidecar.replace_extension(".json");
  write_json(sidecar, meta);
}

SampleSet read_samples(const fs::path& csv_path) {
  const CsvTable table = read_csv(csv_path);
  SampleSet s;
  s.samples.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(table.columns.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    for (std::size_t j = 0; j < table.columns.size(); ++j) s.samples(i, j) = parse_double(table.rows[i][j], csv_path);
  s.seed = table.seed;
  s.accepted = s.proposed = s.size();
  fs::path sidecar = csv_path;
  sidecar.replace_extension(".json");
  if (fs::exists(sidecar)) {
    const auto meta = read_json(sidecar);
    s.task = meta.value("task", std::string());
    s.method = meta.value("method", std::string());
    s.solver = meta.value("solver", std::string());
    s.accepted = meta.value("accepted", s.accepted);
    s.proposed = meta.value("proposed", s.proposed);
    if (meta.contains("diagnostics")) s.diagnostics = meta["diagnostics"];
  }
  return s;
}

void write_history(const fs::path& path, const TrainHistory& history, const CsvStamp& stamp) {
  CsvTable table;
  table.columns = {"epoch", "train_loss", "val_loss"};
  for (const auto& e : history.epochs)
    table.rows.push_back({std::to_string(e.epoch), format_double(e.train_loss), format_double(e.val_loss)});
  write_csv(path, table, stamp);
}

void save_checkpoint(const fs::path& path, VectorFieldNet& net, const nlohmann::json& extra) {
  const ParameterList params = net.parameters();
  write_checkpoint(path, checkpoint_header("continuous", net.structure(), net.config(), params, extra), params);
}

void save_checkpoint(const fs::path& path, DiscreteFlowNet& net, const nlohmann::json& extra) {
  const ParameterList params = net.parameters();
  write_checkpoint(path, checkpoint_header("discrete", net.structure(), net.config(), params, extra), params);
}

Checkpoint read_checkpoint_header(const fs::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("corrupted checkpoint " + path.string() + ": bad magic bytes");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (len > bytes.size() - 16) throw DataError("corrupted checkpoint " + path.string() + ": bad header length");
  Checkpoint c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(16, len));
    c.variant = c.header.at("variant").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("corrupted checkpoint " + path.string() + ": " + ex.what());
  }
  return c;
}

VectorFieldNet load_vector_field(const fs::path& path) { return load_net<VectorFieldNet>(path, "continuous"); }
DiscreteFlowNet load_discrete_flow(const fs::path& path) { return load_net<DiscreteFlowNet>(path, "discrete"); }

}  // namespace cpe
