#include <doctest.h>

#include <cmath>
#include <fstream>

#include "cpe/error.hpp"
#include "cpe/io.hpp"
#include "cpe/tasks.hpp"
#include "helpers.hpp"

using namespace cpe;
using namespace cpe::testing;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cpe_test_io";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  fs::remove(p);
  return p;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put_bytes(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

CpeConfig tiny_config() {
  CpeConfig c;
  c.stack.hidden_layers = 1;
  c.stack.width = 3;
  c.embed.fourier_features = 4;
  c.embed.time_width = 4;
  c.embed.data_width = 4;
  return c;
}

}  // namespace

TEST_CASE("hashing and number formatting") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("").size() == 64);
  CHECK(json_hash({{"b", 1}, {"a", 2}}) == json_hash({{"a", 2}, {"b", 1}}));
  Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-30.0, 30.0));
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("CSV round trip and tamper detection") {
  const fs::path p = scratch("table.csv");
  CsvTable t;
  t.columns = {"a", "b"};
  t.rows = {{"1", "2.5"}, {"-3", "4"}};
  write_csv(p, t, {"cafe", 42});
  const CsvTable back = read_csv(p);
  CHECK(back.columns == t.columns);
  CHECK(back.rows == t.rows);
  CHECK(back.config_hash == "cafe");
  CHECK(back.seed == 42);
  CHECK(back.column("b") == 1);
  CHECK_THROWS_AS(back.column("c"), LookupError);

  std::string text = bytes_of(p);
  text.replace(text.rfind('4'), 1, "5");
  put_bytes(p, text);
  CHECK_THROWS_AS(read_csv(p), DataError);
  CHECK_THROWS_AS(read_csv(scratch("missing.csv")), DataError);

  t.rows.push_back({"1"});
  CHECK_THROWS_AS(write_csv(p, t, {"cafe", 42}), StructuralError);
}

TEST_CASE("dataset round trip is exact") {
  const auto task = make_task("hierarchical");
  const Dataset d = simulate_dataset(*task, 50, 3);
  const fs::path p = scratch("dataset.csv");
  write_dataset(p, d, task->dag(), {"h", 3});
  const Dataset back = read_dataset(p, task->dag());
  CHECK(back.theta == d.theta);
  CHECK(back.x == d.x);
  const CsvTable table = read_csv(p);
  CHECK(table.rows.size() == 50);
  CHECK(table.columns.front() == "gamma[0]");
  CHECK(table.columns.size() == 15);
  CHECK_THROWS_AS(read_dataset(p, make_task("tree")->dag()), DataError);
}

TEST_CASE("sample set round trip keeps metadata") {
  const auto task = make_task("tree");
  SampleSet s;
  Rng rng(4);
  s.samples = rng.normal_matrix(20, 3);
  s.accepted = 20;
  s.proposed = 23;
  s.task = "tree";
  s.method = "cpe-euler";
  s.solver = "euler";
  s.seed = 9;
  s.diagnostics["steps"] = 20;
  const fs::path p = scratch("samples.csv");
  write_samples(p, s, task->dag(), {"x", 9});
  CHECK(fs::exists(fs::path(p).replace_extension(".json")));
  const SampleSet back = read_samples(p);
  CHECK(back.samples == s.samples);
  CHECK(back.accepted == 20);
  CHECK(back.proposed == 23);
  CHECK(back.method == "cpe-euler");
  CHECK(back.solver == "euler");
  CHECK(back.diagnostics["steps"] == 20);
  CHECK(read_csv(p).columns == std::vector<std::string>{"theta1", "theta2", "theta3"});
}

TEST_CASE("history CSV has one row per epoch") {
  TrainHistory h;
  h.epochs = {{1, 0.5, 0.6}, {2, 0.4, 0.55}, {3, 0.3, 0.57}};
  const fs::path p = scratch("history.csv");
  write_history(p, h, {"k", 1});
  const CsvTable t = read_csv(p);
  CHECK(t.columns == std::vector<std::string>{"epoch", "train_loss", "val_loss"});
  CHECK(t.rows.size() == 3);
  CHECK(std::stod(t.rows[1][2]) == 0.55);
}

TEST_CASE("continuous checkpoints restore bit-exact outputs") {
  const auto task = make_task("tree");
  CpeConfig cfg = tiny_config();
  cfg.stack.low_rank = true;
  VectorFieldNet net(task->dag(), cfg, 5);
  Rng rng(6);
  randomize(net.parameters(), rng, 0.4);
  net.standardizer().fit(rng.normal_matrix(3, 30), rng.normal_matrix(4, 30));
  const fs::path p = scratch("model.ckpt");
  save_checkpoint(p, net, {{"stage_hash", "abc"}});

  const Checkpoint header = read_checkpoint_header(p);
  CHECK(header.variant == "continuous");
  CHECK(header.header["extra"]["stage_hash"] == "abc");

  VectorFieldNet back = load_vector_field(p);
  const Matrix theta = rng.normal_matrix(3, 8), x = rng.normal_matrix(4, 8);
  const RowVector t = RowVector::LinSpaced(8, 0.0, 1.0);
  CHECK(back.forward(t, theta, x) == net.forward(t, theta, x));
  CHECK(flatten_values(back.parameters()) == flatten_values(net.parameters()));
  CHECK_THROWS_AS(load_discrete_flow(p), DataError);
}

TEST_CASE("discrete checkpoints restore bit-exact outputs") {
  DiscreteFlowNet net(fig1_prior(), discrete_defaults(), 7);
  Rng rng(8);
  randomize(net.parameters(), rng, 0.4);
  const fs::path p = scratch("flow.ckpt");
  save_checkpoint(p, net);
  DiscreteFlowNet back = load_discrete_flow(p);
  const Matrix theta = rng.normal_matrix(3, 5), x = rng.normal_matrix(1, 5);
  CHECK(flatten_values(back.parameters()) == flatten_values(net.parameters()));
  for (Eigen::Index j = 0; j < 5; ++j)
    CHECK(forward_logdet(back, theta.col(j), x.col(j)).second == forward_logdet(net, theta.col(j), x.col(j)).second);
}

TEST_CASE("damaged checkpoints are reported") {
  VectorFieldNet net(fig1_prior(), tiny_config(), 9);
  const fs::path p = scratch("damaged.ckpt");
  save_checkpoint(p, net);
  const std::string good = bytes_of(p);

  put_bytes(p, good.substr(0, good.size() - 5));
  CHECK_THROWS_AS(load_vector_field(p), DataError);

  put_bytes(p, good + "x");
  CHECK_THROWS_AS(load_vector_field(p), DataError);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  put_bytes(p, bad_magic);
  CHECK_THROWS_AS(read_checkpoint_header(p), DataError);

  std::string bad_header = good;
  bad_header[20] = '\x01';
  put_bytes(p, bad_header);
  CHECK_THROWS_AS(load_vector_field(p), DataError);

  put_bytes(p, "short");
  CHECK_THROWS_AS(read_checkpoint_header(p), DataError);
  CHECK_THROWS_AS(load_vector_field(scratch("absent.ckpt")), DataError);
}
