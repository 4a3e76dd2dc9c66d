#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cpe/cli.hpp"
#include "cpe/error.hpp"
#include "cpe/eval.hpp"
#include "cpe/io.hpp"
#include "cpe/tasks.hpp"

namespace py = pybind11;
using namespace cpe;

namespace {

// Nested data crosses the boundary as JSON text; the Python side decodes it.
std::string dump(const nlohmann::json& doc) { return doc.dump(); }
nlohmann::json parse(const std::string& text) { return nlohmann::json::parse(text); }

Matrix draw_prior(const Task& task, long n, std::uint64_t seed) {
  Matrix out(n, task.theta_dim());
  for (long j = 0; j < n; ++j) {
    Rng rng = Rng(seed).substream(static_cast<std::uint64_t>(j));
    out.row(j) = task.prior_sample(rng).transpose();
  }
  return out;
}

Matrix simulate_rows(const Task& task, const Matrix& theta, std::uint64_t seed) {
  if (theta.cols() != task.theta_dim()) throw StructuralError("theta has the wrong number of columns");
  Matrix out(theta.rows(), task.data_dim());
  for (Eigen::Index j = 0; j < theta.rows(); ++j) {
    Rng rng = Rng(seed).substream(static_cast<std::uint64_t>(j));
    out.row(j) = task.simulate(theta.row(j).transpose(), rng).transpose();
  }
  return out;
}

C2stConfig c2st_config(int folds, int epochs, int hidden_layers, int width, double learning_rate) {
  C2stConfig c;
  c.folds = folds;
  c.epochs = epochs;
  c.hidden_layers = hidden_layers;
  c.width = width;
  c.learning_rate = learning_rate;
  return c;
}

}  // namespace

PYBIND11_MODULE(_cpe, m) {
  m.doc() = "Structured posterior estimation: tasks, graphs, evaluation and the run pipeline";

  // Translators are tried newest first, so the base class goes in first.
  const auto base = py::register_exception<Error>(m, "CpeError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<LookupError>(m, "LookupError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<StructuralError>(m, "StructuralError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<InversionError>(m, "InversionError", base.ptr());

  py::class_<Task, std::unique_ptr<Task>>(m, "Task")
      .def_property_readonly("name", &Task::name)
      .def_property_readonly("theta_dim", &Task::theta_dim)
      .def_property_readonly("data_dim", &Task::data_dim)
      .def("dag_json", [](const Task& t) { return dump(t.dag().to_json()); })
      .def("prior_sample", &draw_prior, py::arg("n"), py::arg("seed"), "n x theta_dim prior draws")
      .def("simulate", &simulate_rows, py::arg("theta"), py::arg("seed"), "one simulation per row of theta")
      .def("prior_logpdf", &Task::prior_logpdf, py::arg("theta"))
      .def("log_likelihood", &Task::log_likelihood, py::arg("theta"), py::arg("x"))
      .def("observation_json", [](const Task& t, std::uint64_t seed) { return dump(t.generate_observation(seed).to_json()); },
           py::arg("seed"));

  m.def("task_names", &task_names);
  m.def("make_task", &make_task, py::arg("name"));
  m.def(
      "analytic_posterior",
      [](const Task& task, const Vector& x) {
        const GaussianPosterior post = analytic_posterior(task, x);
        return py::make_tuple(post.mean, post.cov);
      },
      py::arg("task"), py::arg("x_obs"));
  m.def(
      "simulate_dataset",
      [](const Task& task, long n, std::uint64_t seed) {
        const Dataset d = simulate_dataset(task, n, seed);
        return py::make_tuple(d.theta, d.x);
      },
      py::arg("task"), py::arg("n"), py::arg("seed"));

  m.def(
      "posterior_program",
      [](const std::string& dag_json) {
        const Dag post = invert_program(Dag::from_json(parse(dag_json)));
        const TopologicalOrder order = topological_sort(post);
        const DependencyMask mask = dependency_mask(post, order);
        return py::make_tuple(dump(post.to_json()), order.order, BoolMatrix(mask.dim_mask));
      },
      py::arg("prior_dag_json"), "edge-reversed graph, topological order and dimension mask");

  m.def(
      "c2st",
      [](const Matrix& a, const Matrix& b, std::uint64_t seed, int folds, int epochs, int hidden_layers, int width,
         double learning_rate) {
        return c2st(a, b, c2st_config(folds, epochs, hidden_layers, width, learning_rate), seed);
      },
      py::arg("a"), py::arg("b"), py::arg("seed") = 0, py::arg("folds") = 5, py::arg("epochs") = 200,
      py::arg("hidden_layers") = 2, py::arg("width") = 64, py::arg("learning_rate") = 1e-4);
  m.def(
      "moment_report",
      [](const Matrix& a, const Matrix& b) {
        const MomentReport r = moment_report(a, b);
        return py::make_tuple(r.mean_error, r.cov_error);
      },
      py::arg("a"), py::arg("b"));
  m.def("two_cluster_ratio", &two_cluster_ratio, py::arg("samples"), py::arg("seed") = 0, py::arg("restarts") = 5);

  m.def(
      "read_samples",
      [](const std::string& path) {
        const SampleSet s = read_samples(path);
        return py::make_tuple(s.samples, dump(s.metadata()));
      },
      py::arg("path"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "cpe");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "runs a cpe subcommand and returns its exit code");
}
