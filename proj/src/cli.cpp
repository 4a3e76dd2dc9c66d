#include "cpe/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "cpe/error.hpp"
#include "cpe/io.hpp"

namespace cpe {

namespace {

constexpr std::uint64_t kDataStream = 0xda7a;
constexpr std::uint64_t kTrainStream = 0x7a17;
constexpr std::uint64_t kObservationStream = 0x0b5e;
constexpr std::uint64_t kSampleStream = 0x5a3b;
constexpr std::uint64_t kReferenceStream = 0x4ef0;
constexpr std::uint64_t kEvalStream = 0xe7a1;

void check_keys(const nlohmann::json& doc, const std::set<std::string>& allowed, const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

nlohmann::json rk45_json(const Rk45Config& c) {
  return {{"rtol", c.rtol}, {"atol", c.atol}, {"min_step", c.min_step}, {"max_steps", c.max_steps}};
}

Rk45Config rk45_from(const nlohmann::json& doc) {
  check_keys(doc, {"rtol", "atol", "min_step", "max_steps"}, "rk45");
  Rk45Config c;
  c.rtol = doc.value("rtol", c.rtol);
  c.atol = doc.value("atol", c.atol);
  c.min_step = doc.value("min_step", c.min_step);
  c.max_steps = doc.value("max_steps", c.max_steps);
  if (!(c.rtol > 0.0) || !(c.atol > 0.0) || !(c.min_step > 0.0) || c.max_steps < 1)
    throw ConfigError("rk45 tolerances and limits must be positive");
  return c;
}

nlohmann::json reference_json(const ReferenceConfig& c) {
  return {{"chains", c.chains},           {"samples", c.samples},         {"warmup", c.warmup},
          {"thin", c.thin},               {"max_restarts", c.max_restarts}, {"width_factor", c.width_factor}};
}

ReferenceConfig reference_from(const nlohmann::json& doc) {
  check_keys(doc, {"chains", "samples", "warmup", "thin", "max_restarts", "width_factor"}, "reference");
  ReferenceConfig c;
  c.chains = doc.value("chains", c.chains);
  c.samples = doc.value("samples", c.samples);
  c.warmup = doc.value("warmup", c.warmup);
  c.thin = doc.value("thin", c.thin);
  c.max_restarts = doc.value("max_restarts", c.max_restarts);
  c.width_factor = doc.value("width_factor", c.width_factor);
  c.validate();
  return c;
}

nlohmann::json c2st_json(const C2stConfig& c) {
  return {{"hidden_layers", c.hidden_layers}, {"width", c.width},
          {"folds", c.folds},                 {"epochs", c.epochs},
          {"patience", c.patience},           {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},       {"validation_fraction", c.validation_fraction},
          {"min_samples", c.min_samples}};
}

C2stConfig c2st_from(const nlohmann::json& doc) {
  check_keys(doc,
             {"hidden_layers", "width", "folds", "epochs", "patience", "learning_rate", "batch_size",
              "validation_fraction", "min_samples"},
             "c2st");
  C2stConfig c;
  c.hidden_layers = doc.value("hidden_layers", c.hidden_layers);
  c.width = doc.value("width", c.width);
  c.folds = doc.value("folds", c.folds);
  c.epochs = doc.value("epochs", c.epochs);
  c.patience = doc.value("patience", c.patience);
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.validation_fraction = doc.value("validation_fraction", c.validation_fraction);
  c.min_samples = doc.value("min_samples", c.min_samples);
  if (c.folds < 2) throw ConfigError("c2st.folds must be >= 2");
  if (c.hidden_layers < 1 || c.width < 1 || c.epochs < 1 || c.patience < 1 || c.batch_size < 1)
    throw ConfigError("c2st sizes must be positive");
  return c;
}

std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed); }

std::string solver_tag(const RunConfig& c) { return c.variant == "discrete" ? "inverse" : c.solver; }

bool has_analytic_reference(const RunConfig& c) {
  return c.reference_method == "auto" && c.task == "linear_gaussian";
}

void note(const RunConfig& c, std::ostream& log, const std::string& line) {
  if (!c.quiet) log << line << std::endl;
}

void require_file(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw DataError("missing " + path.string() + " (run `cpe " + producer + "` first)");
}

// First-line stamp of a CSV written by this tool, or empty.
std::string stamped_hash(const fs::path& path) {
  if (!fs::exists(path)) return {};
  try {
    return read_csv(path).config_hash;
  } catch (const DataError&) {
    return {};
  }
}

RunConfig with_seed(const RunConfig& c, std::uint64_t seed) {
  RunConfig out = c;
  out.seeds = {seed};
  return out;
}

}  // namespace

void RunConfig::validate() const {
  make_task(task);
  if (n_train < 10) throw ConfigError("n_train must be >= 10");
  if (variant != "continuous" && variant != "discrete")
    throw ConfigError("variant must be 'continuous' or 'discrete', got '" + variant + "'");
  if (solver != "euler" && solver != "rk45") throw ConfigError("solver must be 'euler' or 'rk45', got '" + solver + "'");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  if (euler_steps < 1) throw ConfigError("euler_steps must be >= 1");
  if (reference_method != "auto" && reference_method != "slice")
    throw ConfigError("reference_method must be 'auto' or 'slice'");
  if (variant == "discrete" && model.stack.diag != DiagTransform::exp)
    throw ConfigError("the discrete variant needs model.diag = exp");
  for (const auto& t : grid_tasks) make_task(t);
  for (long n : grid_n_train)
    if (n < 10) throw ConfigError("grid n_train entries must be >= 10");
  for (const auto& v : grid_variants)
    if (v != "continuous" && v != "discrete") throw ConfigError("grid variant '" + v + "' is unknown");
  train.validate();
  reference.validate();
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json doc;
  doc["task"] = task;
  doc["n_train"] = n_train;
  doc["variant"] = variant;
  doc["solver"] = solver;
  doc["seeds"] = seeds;
  doc["output_dir"] = output_dir;
  doc["n_samples"] = n_samples;
  doc["euler_steps"] = euler_steps;
  doc["reference_method"] = reference_method;
  doc["force"] = force;
  doc["quiet"] = quiet;
  doc["model"] = model.to_json();
  doc["train"] = train.to_json();
  doc["rk45"] = rk45_json(rk45);
  doc["reference"] = reference_json(reference);
  doc["c2st"] = c2st_json(c2st);
  doc["grid"] = {{"tasks", grid_tasks}, {"n_train", grid_n_train}, {"variants", grid_variants}};
  return doc;
}

RunConfig RunConfig::from_json(const nlohmann::json& doc) {
  check_keys(doc,
             {"task", "n_train", "variant", "solver", "seeds", "output_dir", "n_samples", "euler_steps",
              "reference_method", "force", "quiet", "model", "train", "rk45", "reference", "c2st", "grid"},
             "run config");
  RunConfig c;
  try {
    c.task = doc.value("task", c.task);
    c.n_train = doc.value("n_train", c.n_train);
    c.variant = doc.value("variant", c.variant);
    c.solver = doc.value("solver", c.solver);
    if (doc.contains("seeds")) c.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
    c.output_dir = doc.value("output_dir", c.output_dir);
    c.n_samples = doc.value("n_samples", c.n_samples);
    c.euler_steps = doc.value("euler_steps", c.euler_steps);
    c.reference_method = doc.value("reference_method", c.reference_method);
    c.force = doc.value("force", c.force);
    c.quiet = doc.value("quiet", c.quiet);
    const nlohmann::json model = doc.value("model", nlohmann::json::object());
    check_keys(model,
               {"hidden_layers", "width", "diag", "low_rank", "condition_all_layers", "fourier_features",
                "fourier_scale", "time_width", "data_width", "scope"},
               "model");
    c.model = CpeConfig::from_json(model);
    if (c.variant == "discrete" && !model.contains("diag")) c.model.stack.diag = discrete_defaults().stack.diag;
    const nlohmann::json train = doc.value("train", nlohmann::json::object());
    check_keys(train,
               {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "max_epochs", "validation_fraction",
                "patience", "seed"},
               "train");
    c.train = TrainConfig::from_json(train);
    c.rk45 = rk45_from(doc.value("rk45", nlohmann::json::object()));
    c.reference = reference_from(doc.value("reference", nlohmann::json::object()));
    c.c2st = c2st_from(doc.value("c2st", nlohmann::json::object()));
    const nlohmann::json grid = doc.value("grid", nlohmann::json::object());
    check_keys(grid, {"tasks", "n_train", "variants"}, "grid");
    c.grid_tasks = grid.value("tasks", c.grid_tasks);
    c.grid_n_train = grid.value("n_train", c.grid_n_train);
    c.grid_variants = grid.value("variants", c.grid_variants);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad run config: ") + ex.what());
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::optional<fs::path>& file, const nlohmann::json& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (file) {
    if (!fs::exists(*file)) throw ConfigError("config file not found: " + file->string());
    try {
      doc = nlohmann::json::parse(read_text(*file));
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(file->string() + ": invalid JSON: " + ex.what());
    }
    if (!doc.is_object()) throw ConfigError(file->string() + ": top level must be an object");
  }
  doc.merge_patch(overrides);
  return RunConfig::from_json(doc);
}

RunSeeds run_seeds(std::uint64_t seed) {
  return {Rng::derive(seed, kDataStream),   Rng::derive(seed, kTrainStream),     Rng::derive(seed, kObservationStream),
          Rng::derive(seed, kSampleStream), Rng::derive(seed, kReferenceStream), Rng::derive(seed, kEvalStream)};
}

fs::path output_root(const RunConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv("CPE_OUTPUT_ROOT"); env && *env) return env;
  return "cpe_runs";
}

RunPaths run_paths(const RunConfig& c, std::uint64_t seed) {
  RunPaths p;
  p.root = output_root(c);
  const fs::path task = p.root / c.task;
  p.observation = task / "observations" / (seed_dir(seed) + ".json");
  p.reference = task / "reference" / (seed_dir(seed) + ".csv");
  const fs::path run = task / ("N" + std::to_string(c.n_train)) / seed_dir(seed);
  p.dataset = run / "dataset.csv";
  p.model_dir = run / c.variant;
  p.checkpoint = p.model_dir / "model.ckpt";
  p.history = p.model_dir / "history.csv";
  p.train_summary = p.model_dir / "train.json";
  p.samples = p.model_dir / ("samples_" + solver_tag(c) + ".csv");
  p.eval = p.model_dir / ("eval_" + solver_tag(c) + ".json");
  p.results = p.root / "results.csv";
  p.summary = p.root / "summary.csv";
  return p;
}

std::string method_name(const RunConfig& c) { return c.variant == "discrete" ? "dcpe" : "cpe-" + c.solver; }

std::string dataset_hash(const RunConfig& c, std::uint64_t seed) {
  return json_hash({{"stage", "dataset"}, {"task", c.task}, {"n_train", c.n_train}, {"seed", seed}});
}

std::string model_hash(const RunConfig& c, std::uint64_t seed) {
  return json_hash({{"stage", "model"},
                    {"dataset", dataset_hash(c, seed)},
                    {"variant", c.variant},
                    {"model", c.model.to_json()},
                    {"train", c.train.to_json()}});
}

std::string samples_hash(const RunConfig& c, std::uint64_t seed) {
  nlohmann::json doc{{"stage", "samples"}, {"model", model_hash(c, seed)}, {"n_samples", c.n_samples}};
  if (c.variant == "continuous") {
    doc["solver"] = c.solver;
    if (c.solver == "euler") doc["euler_steps"] = c.euler_steps;
    else doc["rk45"] = rk45_json(c.rk45);
  }
  return json_hash(doc);
}

std::string reference_hash(const RunConfig& c, std::uint64_t seed) {
  nlohmann::json doc{{"stage", "reference"}, {"task", c.task}, {"seed", seed}};
  if (has_analytic_reference(c)) doc["analytic"] = c.n_samples;
  else doc["slice"] = reference_json(c.reference);
  return json_hash(doc);
}

std::string eval_hash(const RunConfig& c, std::uint64_t seed) {
  return json_hash({{"stage", "eval"},
                    {"samples", samples_hash(c, seed)},
                    {"reference", reference_hash(c, seed)},
                    {"c2st", c2st_json(c.c2st)}});
}

Observation ensure_observation(const RunConfig& c, std::uint64_t seed) {
  const RunPaths p = run_paths(c, seed);
  const auto task = make_task(c.task);
  const Observation fresh = task->generate_observation(run_seeds(seed).observation);
  if (fs::exists(p.observation)) {
    const Observation stored = Observation::from_json(read_json(p.observation));
    if (stored.task != c.task || stored.seed != fresh.seed || stored.x.size() != task->data_dim())
      throw DataError(p.observation.string() + " does not belong to this task and seed");
    return stored;
  }
  write_json(p.observation, fresh.to_json());
  return fresh;
}

std::vector<fs::path> cmd_simulate(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto task = make_task(config.task);
  std::vector<fs::path> out;
  for (std::uint64_t seed : config.seeds) {
    const RunPaths p = run_paths(config, seed);
    const std::string hash = dataset_hash(config, seed);
    if (!config.force && stamped_hash(p.dataset) == hash) {
      note(config, log, "simulate: " + p.dataset.string() + " is up to date");
    } else {
      const Dataset data = simulate_dataset(*task, config.n_train, run_seeds(seed).data);
      write_dataset(p.dataset, data, task->dag(), {hash, seed});
      note(config, log,
           "simulate: wrote " + std::to_string(data.size()) + " rows to " + p.dataset.string() +
               (data.resampled ? " (" + std::to_string(data.resampled) + " resampled)" : ""));
    }
    ensure_observation(config, seed);
    out.push_back(p.dataset);
  }
  return out;
}

std::vector<fs::path> cmd_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto task = make_task(config.task);
  std::vector<fs::path> out;
  for (std::uint64_t seed : config.seeds) {
    const RunPaths p = run_paths(config, seed);
    const std::string hash = model_hash(config, seed);
    if (fs::exists(p.checkpoint) && !config.force) {
      const Checkpoint ckpt = read_checkpoint_header(p.checkpoint);
      const std::string stored = ckpt.header.value("extra", nlohmann::json::object()).value("stage_hash", "");
      if (stored != hash)
        throw ConfigError(p.checkpoint.string() +
                          " was trained with different settings; delete it or pass --force to retrain");
      note(config, log, "train: " + p.checkpoint.string() + " exists, nothing to do");
      out.push_back(p.checkpoint);
      continue;
    }
    require_file(p.dataset, "simulate");
    const Dataset data = read_dataset(p.dataset, task->dag());
    if (read_csv(p.dataset).config_hash != dataset_hash(config, seed))
      throw DataError(p.dataset.string() + " was simulated with different settings; rerun `cpe simulate --force`");
    if (data.size() != config.n_train) throw DataError(p.dataset.string() + " has the wrong number of rows");

    TrainConfig tc = config.train;
    tc.seed = run_seeds(seed).train;
    TrainHistory history;
    nlohmann::json extra{{"stage_hash", hash}, {"task", config.task}, {"n_train", config.n_train}, {"seed", seed}};
    if (config.variant == "continuous") {
      VectorFieldNet net(task->dag(), config.model, tc.seed);
      history = train(net, data, *task, tc);
      extra["best_epoch"] = history.best_epoch;
      extra["diverged"] = history.diverged;
      save_checkpoint(p.checkpoint, net, extra);
    } else {
      DiscreteFlowNet net(task->dag(), config.model, tc.seed);
      history = train(net, data, *task, tc);
      extra["best_epoch"] = history.best_epoch;
      extra["diverged"] = history.diverged;
      save_checkpoint(p.checkpoint, net, extra);
    }
    write_history(p.history, history, {hash, seed});
    write_json(p.train_summary, {{"config_hash", hash},
                                 {"seed", seed},
                                 {"epochs_run", history.epochs.size()},
                                 {"initial_val_loss", history.initial_val_loss},
                                 {"best_epoch", history.best_epoch},
                                 {"best_val_loss", history.best_val_loss},
                                 {"diverged", history.diverged},
                                 {"message", history.message}});
    note(config, log,
         "train: " + std::to_string(history.epochs.size()) + " epochs, best " + std::to_string(history.best_epoch) +
             " (val " + format_double(history.best_val_loss) + ") -> " + p.checkpoint.string());
    if (history.diverged)
      throw NumericError("training diverged (" + history.message + "); best parameters were saved to " +
                         p.checkpoint.string());
    out.push_back(p.checkpoint);
  }
  return out;
}

std::vector<fs::path> cmd_sample(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto task = make_task(config.task);
  std::vector<fs::path> out;
  for (std::uint64_t seed : config.seeds) {
    const RunPaths p = run_paths(config, seed);
    require_file(p.checkpoint, "train");
    const Checkpoint ckpt = read_checkpoint_header(p.checkpoint);
    if (ckpt.header.value("extra", nlohmann::json::object()).value("stage_hash", "") != model_hash(config, seed))
      throw ConfigError(p.checkpoint.string() +
                        " was trained with different settings than this config; use the same config or retrain "
                        "with `cpe train --force`");
    const Observation obs = ensure_observation(config, seed);
    const PriorModel prior = task->prior();
    const std::uint64_t sseed = run_seeds(seed).sample;
    SampleSet samples;
    if (config.variant == "continuous") {
      const VectorFieldNet net = load_vector_field(p.checkpoint);
      const BatchField field = cpe_field(net, obs.x);
      samples = config.solver == "euler" ? euler_sample(field, prior, config.n_samples, config.euler_steps, sseed)
                                         : rk45_sample(field, prior, config.n_samples, config.rk45, sseed);
    } else {
      const DiscreteFlowNet net = load_discrete_flow(p.checkpoint);
      samples = discrete_sample(net, prior, obs.x, config.n_samples, sseed);
    }
    samples.task = config.task;
    samples.method = method_name(config);
    write_samples(p.samples, samples, task->dag(), {samples_hash(config, seed), seed});
    note(config, log,
         "sample: " + std::to_string(samples.size()) + " draws (acceptance " + format_double(samples.acceptance_rate()) +
             ") -> " + p.samples.string());
    out.push_back(p.samples);
  }
  return out;
}

std::vector<fs::path> cmd_reference(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto task = make_task(config.task);
  std::vector<fs::path> out;
  for (std::uint64_t seed : config.seeds) {
    const RunPaths p = run_paths(config, seed);
    const std::string hash = reference_hash(config, seed);
    if (!config.force && stamped_hash(p.reference) == hash) {
      note(config, log, "reference: " + p.reference.string() + " is up to date");
      out.push_back(p.reference);
      continue;
    }
    const Observation obs = ensure_observation(config, seed);
    const std::uint64_t rseed = run_seeds(seed).reference;
    SampleSet ref;
    if (has_analytic_reference(config)) {
      const GaussianPosterior post = analytic_posterior(*task, obs.x);
      const Matrix chol = post.cov.llt().matrixL();
      Rng rng(rseed);
      const Matrix z = rng.normal_matrix(task->theta_dim(), config.n_samples);
      ref.samples = ((chol * z).colwise() + post.mean).transpose();
      ref.accepted = ref.proposed = ref.size();
      ref.method = "reference";
      ref.solver = "analytic";
      ref.seed = rseed;
    } else {
      ref = slice_sample_reference(*task, obs.x, config.reference, rseed);
      if (ref.diagnostics.contains("warning"))
        note(config, log, "reference: warning: " + ref.diagnostics["warning"].get<std::string>());
    }
    ref.task = config.task;
    write_samples(p.reference, ref, task->dag(), {hash, seed});
    note(config, log, "reference: " + std::to_string(ref.size()) + " draws (" + ref.solver + ") -> " + p.reference.string());
    out.push_back(p.reference);
  }
  return out;
}

namespace {

const char* kMetrics[] = {"c2st", "mean_error", "cov_error", "acceptance_rate"};

// Results rows keyed by (task, method, n_train, train_seed).
void upsert_result(const fs::path& path, const EvalReport& report, const std::string& hash) {
  std::vector<std::string> columns = EvalReport::columns();
  columns.push_back("config_hash");
  std::map<std::tuple<std::string, std::string, long, std::uint64_t>, std::vector<std::string>> rows;
  if (fs::exists(path)) {
    const CsvTable old = read_csv(path);
    if (old.columns != columns) throw DataError(path.string() + " has unexpected columns");
    for (const auto& r : old.rows) rows[{r[0], r[1], std::stol(r[2]), std::stoull(r[3])}] = r;
  }
  std::vector<std::string> row = report.row();
  row.push_back(hash);
  rows[{report.task, report.method, report.n_train, report.train_seed}] = row;
  CsvTable table;
  table.columns = columns;
  std::string hashes;
  for (auto& [key, r] : rows) {
    hashes += r.back();
    table.rows.push_back(r);
  }
  write_csv(path, table, {sha256_hex(hashes), 0});
}

}  // namespace

void write_summary(const fs::path& results, const fs::path& summary) {
  const CsvTable table = read_csv(results);
  std::map<std::tuple<std::string, std::string, long, std::string>, std::vector<double>> groups;
  for (const auto& r : table.rows)
    for (const char* m : kMetrics)
      groups[{r[table.column("task")], r[table.column("method")], std::stol(r[table.column("n_train")]), m}].push_back(
          std::stod(r[table.column(m)]));
  CsvTable out;
  out.columns = {"task", "method", "n_train", "metric", "mean", "sd", "n_seeds"};
  for (const auto& [key, values] : groups) {
    const auto& [task, method, n, metric] = key;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sd = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    out.rows.push_back({task, method, std::to_string(n), metric, format_double(mean), format_double(sd),
                        std::to_string(values.size())});
  }
  write_csv(summary, out, {table.config_hash, 0});
}

std::vector<EvalReport> cmd_evaluate(const RunConfig& config, std::ostream& log) {
  config.validate();
  std::vector<EvalReport> reports;
  for (std::uint64_t seed : config.seeds) {
    const RunPaths p = run_paths(config, seed);
    require_file(p.samples, "sample");
    require_file(p.reference, "reference");
    const SampleSet samples = read_samples(p.samples);
    const SampleSet ref = read_samples(p.reference);
    if (samples.dim() != ref.dim()) throw DataError("samples and reference have different dimensions");
    EvalReport report;
    report.task = config.task;
    report.method = method_name(config);
    report.n_train = config.n_train;
    report.train_seed = seed;
    report.sample_seed = run_seeds(seed).sample;
    report.c2st = c2st(samples, ref, config.c2st, run_seeds(seed).eval);
    const MomentReport moments = moment_report(samples.samples, ref.samples);
    report.mean_error = moments.mean_error;
    report.cov_error = moments.cov_error;
    report.acceptance_rate = samples.acceptance_rate();
    const std::string hash = eval_hash(config, seed);
    nlohmann::json doc = report.to_json();
    doc["config_hash"] = hash;
    doc["samples"] = fs::relative(p.samples, p.root).generic_string();
    doc["reference"] = fs::relative(p.reference, p.root).generic_string();
    doc["samples_content_hash"] = read_csv(p.samples).content_hash;
    doc["reference_content_hash"] = read_csv(p.reference).content_hash;
    write_json(p.eval, doc);
    upsert_result(p.results, report, hash);
    write_summary(p.results, p.summary);
    note(config, log,
         "evaluate: " + report.method + " c2st " + format_double(report.c2st) + " mean_error " +
             format_double(report.mean_error) + " -> " + p.eval.string());
    reports.push_back(report);
  }
  return reports;
}

int cmd_benchmark(const RunConfig& config, std::ostream& log) {
  config.validate();
  const std::vector<std::string> tasks = config.grid_tasks.empty() ? std::vector{config.task} : config.grid_tasks;
  const std::vector<long> sizes = config.grid_n_train.empty() ? std::vector{config.n_train} : config.grid_n_train;
  const std::vector<std::string> variants =
      config.grid_variants.empty() ? std::vector{config.variant} : config.grid_variants;
  int failures = 0;
  for (const auto& task : tasks)
    for (long n : sizes)
      for (const auto& variant : variants)
        for (std::uint64_t seed : config.seeds) {
          RunConfig run = with_seed(config, seed);
          run.task = task;
          run.n_train = n;
          if (variant != run.variant) {
            run.variant = variant;
            if (variant == "discrete") run.model.stack.diag = discrete_defaults().stack.diag;
            else run.model.stack.diag = CpeConfig{}.stack.diag;
          }
          note(run, log, "benchmark: " + task + " N=" + std::to_string(n) + " " + method_name(run) + " seed " +
                             std::to_string(seed));
          try {
            cmd_simulate(run, log);
            cmd_train(run, log);
            cmd_sample(run, log);
            cmd_reference(run, log);
            cmd_evaluate(run, log);
          } catch (const Error& ex) {
            ++failures;
            log << "benchmark: run failed: " << ex.what() << std::endl;
          }
        }
  return failures;
}

int exit_code_for(const std::exception& ex) {
  if (const auto* e = dynamic_cast<const Error*>(&ex)) {
    switch (e->category()) {
      case ErrorCategory::config:
      case ErrorCategory::lookup:
        return 2;
      case ErrorCategory::data:
      case ErrorCategory::structural:
        return 3;
      case ErrorCategory::numeric:
      case ErrorCategory::inversion:
        return 4;
    }
  }
  return 1;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Causal posterior estimation pipeline"};
  app.require_subcommand(1);

  std::string config_file, task, variant, solver, output_dir;
  long n_train = 0, n_samples = 0;
  int epochs = 0, steps = 0;
  std::vector<std::uint64_t> seeds;
  bool force = false, quiet = false;

  std::vector<CLI::App*> subs;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Simulate training datasets"},
      {"train", "Train a flow on a simulated dataset"},
      {"sample", "Draw posterior samples from a trained flow"},
      {"reference", "Build reference posterior samples"},
      {"evaluate", "Compare samples to the reference and update result tables"},
      {"benchmark", "Run the whole pipeline over a grid"},
  };
  std::vector<CLI::Option*> options;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_file, "JSON run config")->check(CLI::ExistingFile);
    options.push_back(sub->add_option("-t,--task", task, "Task name"));
    options.push_back(sub->add_option("-n,--n-train", n_train, "Training set size"));
    options.push_back(sub->add_option("--variant", variant, "continuous or discrete"));
    options.push_back(sub->add_option("--solver", solver, "euler or rk45"));
    options.push_back(sub->add_option("-s,--seed", seeds, "Run seed (repeatable)"));
    options.push_back(sub->add_option("-o,--output-dir", output_dir, "Output root (default $CPE_OUTPUT_ROOT)"));
    options.push_back(sub->add_option("--epochs", epochs, "Maximum training epochs"));
    options.push_back(sub->add_option("--n-samples", n_samples, "Posterior draws"));
    options.push_back(sub->add_option("--steps", steps, "Euler steps"));
    sub->add_flag("-f,--force", force, "Recompute outputs that already exist");
    sub->add_flag("-q,--quiet", quiet, "Only report errors");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex);
    return code == 0 ? 0 : 2;
  }

  try {
    nlohmann::json overrides = nlohmann::json::object();
    auto given = [&](const std::string& flag) {
      for (auto* sub : subs)
        if (sub->parsed() && sub->count(flag) > 0) return true;
      return false;
    };
    if (given("--task")) overrides["task"] = task;
    if (given("--n-train")) overrides["n_train"] = n_train;
    if (given("--variant")) overrides["variant"] = variant;
    if (given("--solver")) overrides["solver"] = solver;
    if (given("--seed")) overrides["seeds"] = seeds;
    if (given("--output-dir")) overrides["output_dir"] = output_dir;
    if (given("--epochs")) overrides["train"]["max_epochs"] = epochs;
    if (given("--n-samples")) overrides["n_samples"] = n_samples;
    if (given("--steps")) overrides["euler_steps"] = steps;
    if (force) overrides["force"] = true;
    if (quiet) overrides["quiet"] = true;

    const RunConfig config =
        load_config(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file), overrides);
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "simulate") cmd_simulate(config, std::cerr);
    else if (name == "train") cmd_train(config, std::cerr);
    else if (name == "sample") cmd_sample(config, std::cerr);
    else if (name == "reference") cmd_reference(config, std::cerr);
    else if (name == "evaluate") {
      for (const auto& r : cmd_evaluate(config, std::cerr)) std::cout << r.to_json().dump() << "\n";
    } else if (cmd_benchmark(config, std::cerr) > 0) {
      std::cerr << "benchmark: some runs failed" << std::endl;
      return 1;
    }
    return 0;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << std::endl;
    return exit_code_for(ex);
  }
}

}  // namespace cpe
