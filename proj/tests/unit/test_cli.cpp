#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cpe/cli.hpp"
#include "cpe/error.hpp"
#include "cpe/io.hpp"

using namespace cpe;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cpe_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small enough to run the whole pipeline in a second or two.
RunConfig smoke(const fs::path& root) {
  return RunConfig::from_json({{"task", "linear_gaussian"},
                               {"n_train", 400},
                               {"seeds", {0}},
                               {"n_samples", 600},
                               {"output_dir", root.string()},
                               {"quiet", true},
                               {"model", {{"hidden_layers", 1}, {"width", 8}}},
                               {"train", {{"max_epochs", 4}, {"batch_size", 64}}},
                               {"c2st", {{"epochs", 20}, {"width", 16}}}});
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cpe");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("config precedence: flag over file over default") {
  const fs::path dir = fresh_dir("precedence");
  const fs::path file = dir / "run.json";
  write_json(file, {{"task", "two_moons"}, {"n_train", 500}, {"train", {{"max_epochs", 7}}}});
  const RunConfig from_file = load_config(file, nlohmann::json::object());
  CHECK(from_file.task == "two_moons");
  CHECK(from_file.n_train == 500);
  CHECK(from_file.train.max_epochs == 7);
  CHECK(from_file.n_samples == RunConfig{}.n_samples);

  const RunConfig flagged = load_config(file, {{"n_train", 900}, {"train", {{"batch_size", 32}}}});
  CHECK(flagged.n_train == 900);
  CHECK(flagged.task == "two_moons");
  CHECK(flagged.train.max_epochs == 7);
  CHECK(flagged.train.batch_size == 32);

  const RunConfig defaults = load_config(std::nullopt, nlohmann::json::object());
  CHECK(defaults.task == "linear_gaussian");
  CHECK(defaults.n_train == 10000);
  CHECK(defaults.euler_steps == 20);
  CHECK(RunConfig::from_json(defaults.to_json()).to_json() == defaults.to_json());
}

TEST_CASE("bad configs are rejected") {
  CHECK_THROWS_AS(RunConfig::from_json({{"tasks", "two_moons"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"model", {{"depth", 3}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"task", "nope"}}), LookupError);
  CHECK_THROWS_AS(RunConfig::from_json({{"solver", "midpoint"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"n_train", 0}}), ConfigError);
  CHECK(RunConfig::from_json({{"variant", "discrete"}}).model.stack.diag == DiagTransform::exp);
  CHECK(method_name(RunConfig::from_json({{"solver", "rk45"}})) == "cpe-rk45");
  CHECK(method_name(RunConfig::from_json({{"variant", "discrete"}})) == "dcpe");
}

TEST_CASE("stage seeds and hashes") {
  const RunSeeds a = run_seeds(0), b = run_seeds(1);
  CHECK(a.data != a.train);
  CHECK(a.sample != a.reference);
  CHECK(a.data != b.data);
  RunConfig c;
  RunConfig d = c;
  d.output_dir = "/elsewhere";
  d.quiet = true;
  CHECK(model_hash(c, 0) == model_hash(d, 0));
  d.train.max_epochs = 3;
  CHECK(model_hash(c, 0) != model_hash(d, 0));
  CHECK(dataset_hash(c, 0) == dataset_hash(d, 0));
  d.solver = "rk45";
  CHECK(samples_hash(c, 0) != samples_hash(d, 0));
}

TEST_CASE("smoke pipeline writes every artifact") {
  const fs::path root = fresh_dir("smoke");
  const RunConfig c = smoke(root);
  std::ostringstream log;
  cmd_simulate(c, log);
  const RunPaths p = run_paths(c, 0);
  CHECK(read_csv(p.dataset).rows.size() == 400);
  cmd_train(c, log);
  CHECK(fs::exists(p.checkpoint));
  const nlohmann::json summary = read_json(p.train_summary);
  CHECK(read_csv(p.history).rows.size() == summary["epochs_run"].get<std::size_t>());
  cmd_sample(c, log);
  CHECK(read_samples(p.samples).size() == 600);
  cmd_reference(c, log);
  CHECK(read_samples(p.reference).solver == "analytic");
  const std::vector<EvalReport> reports = cmd_evaluate(c, log);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].c2st >= 0.0);
  CHECK(reports[0].c2st <= 1.0);
  CHECK(reports[0].acceptance_rate == 1.0);
  CHECK(fs::exists(p.eval));
  CHECK(read_csv(p.results).rows.size() == 1);
  CHECK(read_csv(p.summary).columns.front() == "task");

  // Evaluating again updates the same results row.
  cmd_evaluate(c, log);
  CHECK(read_csv(p.results).rows.size() == 1);
}

TEST_CASE("reruns are no-ops and stale models are refused") {
  const fs::path root = fresh_dir("rerun");
  RunConfig c = smoke(root);
  std::ostringstream log;
  cmd_simulate(c, log);
  cmd_train(c, log);
  const RunPaths p = run_paths(c, 0);
  const auto stamp = fs::last_write_time(p.checkpoint);
  const std::string bytes = slurp(p.checkpoint);
  cmd_train(c, log);
  CHECK(fs::last_write_time(p.checkpoint) == stamp);
  CHECK(slurp(p.checkpoint) == bytes);

  RunConfig changed = c;
  changed.train.learning_rate = 1e-3;
  CHECK_THROWS_AS(cmd_train(changed, log), ConfigError);
  CHECK_THROWS_AS(cmd_sample(changed, log), ConfigError);
  changed.force = true;
  CHECK_NOTHROW(cmd_train(changed, log));
}

TEST_CASE("missing or damaged inputs give actionable errors") {
  const fs::path root = fresh_dir("missing");
  const RunConfig c = smoke(root);
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_train(c, log), DataError);
  cmd_simulate(c, log);
  cmd_train(c, log);
  cmd_sample(c, log);
  try {
    cmd_evaluate(c, log);
    FAIL("expected an error");
  } catch (const DataError& ex) {
    CHECK(std::string(ex.what()).find("reference") != std::string::npos);
  }

  const RunPaths p = run_paths(c, 0);
  std::string bytes = slurp(p.checkpoint);
  bytes.resize(bytes.size() - 16);
  std::ofstream(p.checkpoint, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(cmd_sample(RunConfig(c), log), DataError);
  CHECK(exit_code_for(DataError("x")) == 3);
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(NumericError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("identical sample files evaluate to chance") {
  const fs::path root = fresh_dir("identical");
  const RunConfig c = smoke(root);
  std::ostringstream log;
  cmd_reference(c, log);
  const RunPaths p = run_paths(c, 0);
  fs::create_directories(p.samples.parent_path());
  fs::copy_file(p.reference, p.samples);
  fs::copy_file(fs::path(p.reference).replace_extension(".json"), fs::path(p.samples).replace_extension(".json"));
  const std::vector<EvalReport> r = cmd_evaluate(c, log);
  CHECK(r[0].c2st == doctest::Approx(0.5).epsilon(0.04));
  CHECK(r[0].mean_error == 0.0);
}

TEST_CASE("command line entry point") {
  const fs::path root = fresh_dir("argv");
  CHECK(cli({"simulate", "-t", "two_moons", "-n", "50", "-o", root.string(), "-q"}) == 0);
  CHECK(read_csv(root / "two_moons" / "N50" / "seed0" / "dataset.csv").rows.size() == 50);
  CHECK(cli({"simulate", "-t", "unknown", "-o", root.string(), "-q"}) == 2);
  CHECK(cli({"train", "-t", "two_moons", "-n", "60", "-o", root.string(), "-q"}) == 3);
  CHECK(cli({"frobnicate"}) == 2);
  CHECK(cli({"simulate", "--n-train", "abc"}) == 2);
}
