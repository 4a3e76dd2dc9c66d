#include "cpe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cpe/error.hpp"
#include "cpe/netblocks.hpp"
#include "cpe/train.hpp"

namespace cpe {

namespace {

std::vector<long> shuffled(long n, Rng& rng) {
  std::vector<long> idx(n);
  for (long i = 0; i < n; ++i) idx[i] = i;
  for (long i = n - 1; i > 0; --i) std::swap(idx[i], idx[static_cast<long>(rng.uniform() * (i + 1)) % (i + 1)]);
  return idx;
}

// ReLU MLP producing one logit per column.
class Classifier {
 public:
  Classifier(int in, const C2stConfig& config, Rng& rng) {
    int width = in;
    for (int k = 0; k < config.hidden_layers; ++k) {
      layers_.emplace_back("clf" + std::to_string(k), width, config.width, rng);
      width = config.width;
    }
    layers_.emplace_back("clf_out", width, 1, rng);
  }

  ParameterList parameters() {
    ParameterList out;
    for (auto& l : layers_) l.collect(out);
    return out;
  }

  RowVector logits(const Matrix& x, std::vector<Matrix>* inputs = nullptr) const {
    Matrix h = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      if (inputs) inputs->push_back(h);
      Matrix a = layers_[k].forward(h);
      h = k + 1 < layers_.size() ? Matrix(a.cwiseMax(0.0)) : a;
    }
    return h.row(0);
  }

  // Mean binary cross-entropy on logits; accumulates gradients when asked.
  double bce(const Matrix& x, const RowVector& y, bool accumulate) {
    std::vector<Matrix> inputs;
    const RowVector z = logits(x, accumulate ? &inputs : nullptr);
    const double n = static_cast<double>(x.cols());
    double loss = 0.0;
    RowVector dz(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const double softplus = z[j] > 0 ? z[j] + std::log1p(std::exp(-z[j])) : std::log1p(std::exp(z[j]));
      loss += softplus - y[j] * z[j];
      dz[j] = (1.0 / (1.0 + std::exp(-z[j])) - y[j]) / n;
    }
    if (accumulate) {
      Matrix d = dz;
      for (int k = static_cast<int>(layers_.size()) - 1; k >= 0; --k) {
        d = layers_[k].backward(inputs[k], d);
        // inputs[k] = relu(previous pre-activation): gate by its sign.
        if (k > 0) d = (inputs[k].array() > 0.0).select(d, 0.0);
      }
    }
    return loss / n;
  }

 private:
  std::vector<Linear> layers_;
};

}  // namespace

double c2st(const Matrix& a, const Matrix& b, const C2stConfig& config, std::uint64_t seed) {
  if (a.cols() != b.cols()) throw StructuralError("c2st: sample dimensions differ");
  if (config.folds < 2) throw ConfigError("c2st: folds must be >= 2");
  const long n = std::min<long>(a.rows(), b.rows());
  if (n < config.min_samples)
    throw DataError("c2st: need at least " + std::to_string(config.min_samples) + " samples per set");
  Rng rng(seed);
  const std::vector<long> ia = shuffled(a.rows(), rng);
  const std::vector<long> ib = shuffled(b.rows(), rng);
  const int d = static_cast<int>(a.cols());

  // Balanced pooled data, columns, with labels 0 for a and 1 for b.
  Matrix x(d, 2 * n);
  RowVector y(2 * n);
  for (long i = 0; i < n; ++i) {
    x.col(i) = a.row(ia[i]).transpose();
    y[i] = 0.0;
    x.col(n + i) = b.row(ib[i]).transpose();
    y[n + i] = 1.0;
  }
  const Vector mean = x.rowwise().mean();
  const Vector sd = ((x.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(2 * n - 1)).cwiseSqrt().cwiseMax(1e-12);
  x = ((x.colwise() - mean).array().colwise() / sd.array()).matrix();

  const std::vector<long> order = shuffled(2 * n, rng);
  double accuracy = 0.0;
  for (int fold = 0; fold < config.folds; ++fold) {
    const long lo = 2 * n * fold / config.folds;
    const long hi = 2 * n * (fold + 1) / config.folds;
    std::vector<long> test(order.begin() + lo, order.begin() + hi);
    std::vector<long> rest(order.begin(), order.begin() + lo);
    rest.insert(rest.end(), order.begin() + hi, order.end());
    const long n_val = std::max(1L, static_cast<long>(std::lround(config.validation_fraction * rest.size())));
    const std::vector<long> val(rest.begin(), rest.begin() + n_val);
    const std::vector<long> train_idx(rest.begin() + n_val, rest.end());

    const Matrix x_train = x(Eigen::all, train_idx);
    const RowVector y_train = y(train_idx);
    const Matrix x_val = x(Eigen::all, val);
    const RowVector y_val = y(val);

    Rng init = rng.substream(static_cast<std::uint64_t>(fold));
    Classifier clf(d, config, init);
    TrainConfig tc;
    tc.learning_rate = config.learning_rate;
    tc.batch_size = config.batch_size;
    tc.max_epochs = config.epochs;
    tc.patience = config.patience;
    tc.seed = Rng::derive(seed, 100 + static_cast<std::uint64_t>(fold));
    TrainProblem problem;
    problem.params = clf.parameters();
    problem.train_size = static_cast<long>(train_idx.size());
    problem.batch_loss = [&](const std::vector<long>& rows, Rng&) {
      return clf.bce(x_train(Eigen::all, rows), y_train(rows), true);
    };
    problem.validation_loss = [&]() { return clf.bce(x_val, y_val, false); };
    train_loop(problem, tc);

    const RowVector z = clf.logits(x(Eigen::all, test));
    long correct = 0;
    for (std::size_t j = 0; j < test.size(); ++j) correct += (z[j] > 0.0) == (y[test[j]] > 0.5);
    accuracy += static_cast<double>(correct) / static_cast<double>(test.size());
  }
  accuracy /= config.folds;
  return std::max(accuracy, 1.0 - accuracy);
}

double c2st(const SampleSet& a, const SampleSet& b, const C2stConfig& config, std::uint64_t seed) {
  return c2st(a.samples, b.samples, config, seed);
}

MomentReport moment_report(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw StructuralError("moment_report: sample dimensions differ");
  if (a.rows() < 2 || b.rows() < 2) throw DataError("moment_report: need at least two samples per set");
  auto moments = [](const Matrix& s, Vector& mean, Matrix& cov) {
    mean = s.colwise().mean().transpose();
    const Matrix centered = s.rowwise() - mean.transpose();
    cov = centered.transpose() * centered / static_cast<double>(s.rows() - 1);
  };
  Vector ma, mb;
  Matrix ca, cb;
  moments(a, ma, ca);
  moments(b, mb, cb);
  return {(ma - mb).norm(), (ca - cb).norm()};
}

double two_cluster_ratio(const Matrix& samples, std::uint64_t seed, int restarts) {
  const Eigen::Index n = samples.rows();
  if (n < 2) throw DataError("two_cluster_ratio: need at least two samples");
  const RowVector mean = samples.colwise().mean();
  const double inertia1 = (samples.rowwise() - mean).squaredNorm();
  Rng rng(seed);
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    // k-means++ seeding.
    RowVector c0 = samples.row(static_cast<Eigen::Index>(rng.uniform() * n) % n);
    const Vector dist = (samples.rowwise() - c0).rowwise().squaredNorm();
    double u = rng.uniform() * dist.sum();
    Eigen::Index pick = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      u -= dist[i];
      if (u <= 0.0) {
        pick = i;
        break;
      }
    }
    RowVector c1 = samples.row(pick);
    std::vector<int> label(n, -1);
    double inertia = 0.0;
    for (int it = 0; it < 300; ++it) {
      bool changed = false;
      inertia = 0.0;
      RowVector s0 = RowVector::Zero(samples.cols()), s1 = s0;
      long n0 = 0, n1 = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d0 = (samples.row(i) - c0).squaredNorm();
        const double d1 = (samples.row(i) - c1).squaredNorm();
        const int l = d1 < d0 ? 1 : 0;
        changed = changed || l != label[i];
        label[i] = l;
        inertia += std::min(d0, d1);
        if (l == 0) {
          s0 += samples.row(i);
          ++n0;
        } else {
          s1 += samples.row(i);
          ++n1;
        }
      }
      if (!changed) break;
      if (n0 > 0) c0 = s0 / static_cast<double>(n0);
      if (n1 > 0) c1 = s1 / static_cast<double>(n1);
    }
    best = std::min(best, inertia);
  }
  return best > 0.0 ? inertia1 / best : std::numeric_limits<double>::infinity();
}

std::vector<std::string> EvalReport::columns() {
  return {"task", "method", "n_train", "train_seed", "sample_seed", "c2st", "mean_error", "cov_error",
          "acceptance_rate"};
}

namespace {
std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace

std::vector<std::string> EvalReport::row() const {
  return {task,
          method,
          std::to_string(n_train),
          std::to_string(train_seed),
          std::to_string(sample_seed),
          fmt(c2st),
          fmt(mean_error),
          fmt(cov_error),
          fmt(acceptance_rate)};
}

nlohmann::json EvalReport::to_json() const {
  return {{"task", task},           {"method", method},         {"n_train", n_train},
          {"train_seed", train_seed}, {"sample_seed", sample_seed}, {"c2st", c2st},
          {"mean_error", mean_error}, {"cov_error", cov_error},   {"acceptance_rate", acceptance_rate}};
}

}  // namespace cpe
