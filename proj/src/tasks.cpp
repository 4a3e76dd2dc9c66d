#include "cpe/tasks.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "cpe/error.hpp"

namespace cpe {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

double uniform_box_logpdf(const Vector& theta, double lo, double hi) {
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    if (!(theta[i] >= lo && theta[i] <= hi)) return kNegInf;
  return -static_cast<double>(theta.size()) * std::log(hi - lo);
}

Vector uniform_box_sample(int d, double lo, double hi, Rng& rng) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

double logsumexp2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Bivariate normal log density with full covariance.
double bivariate_logpdf(const Vector& x, const Vector& mean, const Eigen::Matrix2d& cov) {
  const Eigen::Vector2d diff = x - mean;
  const double det = cov.determinant();
  if (!(det > 0.0)) return kNegInf;
  return -0.5 * diff.dot(cov.inverse() * diff) - 0.5 * std::log(det) - kLog2Pi;
}

std::vector<Node> scalar_params(const std::string& stem, int count) {
  std::vector<Node> nodes;
  for (int i = 1; i <= count; ++i) nodes.push_back({stem + std::to_string(i), NodeRole::parameter, 1});
  return nodes;
}

// Exchangeable parameters, each a separate node feeding one data node.
Dag flat_dag(int params, int data_dim) {
  auto nodes = scalar_params("theta", params);
  std::vector<Edge> edges;
  for (int i = 1; i <= params; ++i) edges.emplace_back("theta" + std::to_string(i), "x");
  nodes.push_back({"x", NodeRole::data, data_dim});
  return Dag(std::move(nodes), std::move(edges));
}

// -- linear Gaussian --------------------------------------------------------

class LinearGaussian final : public Task {
 public:
  static constexpr int kDim = 10;
  static constexpr double kVar = 0.1;

  std::string name() const override { return "linear_gaussian"; }
  Dag dag() const override { return flat_dag(kDim, kDim); }
  Vector prior_sample(Rng& rng) const override { return std::sqrt(kVar) * rng.normal_vector(kDim); }
  double prior_logpdf(const Vector& theta) const override {
    double lp = 0.0;
    for (int i = 0; i < kDim; ++i) lp += normal_logpdf(theta[i], 0.0, std::sqrt(kVar));
    return lp;
  }
  Vector prior_logpdf_grad(const Vector& theta) const override { return -theta / kVar; }
  Vector simulate(const Vector& theta, Rng& rng) const override {
    return theta + std::sqrt(kVar) * rng.normal_vector(kDim);
  }
  double log_likelihood(const Vector& theta, const Vector& x) const override {
    double lp = 0.0;
    for (int i = 0; i < kDim; ++i) lp += normal_logpdf(x[i], theta[i], std::sqrt(kVar));
    return lp;
  }
  Vector prior_scale() const override { return Vector::Constant(kDim, std::sqrt(kVar)); }
};

// -- Gaussian mixture 1 -----------------------------------------------------

class GaussianMixture1 final : public Task {
 public:
  std::string name() const override { return "gaussian_mixture_1"; }
  Dag dag() const override { return flat_dag(2, 2); }
  Vector prior_sample(Rng& rng) const override { return uniform_box_sample(2, -10.0, 10.0, rng); }
  double prior_logpdf(const Vector& theta) const override { return uniform_box_logpdf(theta, -10.0, 10.0); }
  Vector prior_logpdf_grad(const Vector&) const override { return Vector::Zero(2); }
  Vector simulate(const Vector& theta, Rng& rng) const override {
    const double sd = rng.uniform() < 0.5 ? 1.0 : 0.1;
    return theta + sd * rng.normal_vector(2);
  }
  double log_likelihood(const Vector& theta, const Vector& x) const override {
    double wide = 0.0, narrow = 0.0;
    for (int i = 0; i < 2; ++i) {
      wide += normal_logpdf(x[i], theta[i], 1.0);
      narrow += normal_logpdf(x[i], theta[i], 0.1);
    }
    return std::log(0.5) + logsumexp2(wide, narrow);
  }
  Vector prior_scale() const override { return Vector::Constant(2, 20.0 / std::sqrt(12.0)); }
};

// -- Gaussian mixture 2 -----------------------------------------------------

class GaussianMixture2 final : public Task {
 public:
  GaussianMixture2() {
    mean_ << -1, -1, 0, 0, 1, 1;
    covs_[0] << 0.7, 0.0, 0.0, 0.05;
    covs_[1] << 0.7, 0.0, 0.0, 0.05;
    // The published third covariance [[0.1, 0.95], [0.95, 1]] is not positive
    // definite; the leading entry is read as 1.
    covs_[2] << 1.0, 0.95, 0.95, 1.0;
    for (int k = 0; k < 3; ++k) chol_[k] = covs_[k].llt().matrixL();
  }

  std::string name() const override { return "gaussian_mixture_2"; }
  Dag dag() const override {
    return Dag({{"theta12", NodeRole::parameter, 2},
                {"theta34", NodeRole::parameter, 2},
                {"theta56", NodeRole::parameter, 2},
                {"x", NodeRole::data, 2}},
               {{"theta12", "x"}, {"theta34", "x"}, {"theta56", "x"}});
  }
  Vector prior_sample(Rng& rng) const override { return mean_ + rng.normal_vector(6); }
  double prior_logpdf(const Vector& theta) const override {
    double lp = 0.0;
    for (int i = 0; i < 6; ++i) lp += normal_logpdf(theta[i], mean_[i], 1.0);
    return lp;
  }
  Vector prior_logpdf_grad(const Vector& theta) const override { return mean_ - theta; }
  Vector simulate(const Vector& theta, Rng& rng) const override {
    const double u = rng.uniform();
    const int k = u < 1.0 / 3.0 ? 0 : (u < 2.0 / 3.0 ? 1 : 2);
    const Eigen::Vector2d eps(rng.normal(), rng.normal());
    return theta.segment(2 * k, 2) + chol_[k] * eps;
  }
  double log_likelihood(const Vector& theta, const Vector& x) const override {
    double acc = kNegInf;
    for (int k = 0; k < 3; ++k) acc = logsumexp2(acc, bivariate_logpdf(x, theta.segment(2 * k, 2), covs_[k]));
    return acc - std::log(3.0);
  }
  Vector prior_scale() const override { return Vector::Ones(6); }

 private:
  Vector mean_ = Vector(6);
  Eigen::Matrix2d covs_[3];
  Eigen::Matrix2d chol_[3];
};

// -- hierarchical -----------------------------------------------------------
// theta = (gamma(2), beta1(2), beta2(2), beta3(2), log sigma). The scale is
// carried on the log axis; its prior density includes the log-Jacobian.

class Hierarchical final : public Task {
 public:
  std::string name() const override { return "hierarchical"; }
  Dag dag() const override {
    return Dag({{"gamma", NodeRole::parameter, 2},
                {"beta1", NodeRole::parameter, 2},
                {"beta2", NodeRole::parameter, 2},
                {"beta3", NodeRole::parameter, 2},
                {"log_sigma", NodeRole::parameter, 1},
                {"x", NodeRole::data, 6}},
               {{"gamma", "beta1"},
                {"gamma", "beta2"},
                {"gamma", "beta3"},
                {"beta1", "x"},
                {"beta2", "x"},
                {"beta3", "x"},
                {"log_sigma", "x"}});
  }
  Vector prior_sample(Rng& rng) const override {
    Vector theta(9);
    theta.head(2) = rng.normal_vector(2);
    for (int k = 0; k < 3; ++k) theta.segment(2 + 2 * k, 2) = theta.head(2) + rng.normal_vector(2);
    theta[8] = std::log(std::abs(rng.normal()));
    return theta;
  }
  double prior_logpdf(const Vector& theta) const override {
    double lp = 0.0;
    for (int i = 0; i < 2; ++i) lp += normal_logpdf(theta[i], 0.0, 1.0);
    for (int k = 0; k < 3; ++k)
      for (int i = 0; i < 2; ++i) lp += normal_logpdf(theta[2 + 2 * k + i], theta[i], 1.0);
    const double s = theta[8];
    const double sigma = std::exp(s);
    return lp + std::log(2.0) + normal_logpdf(sigma, 0.0, 1.0) + s;
  }
  Vector prior_logpdf_grad(const Vector& theta) const override {
    Vector g = Vector::Zero(9);
    g.head(2) = -theta.head(2);
    for (int k = 0; k < 3; ++k) {
      const Vector diff = theta.segment(2 + 2 * k, 2) - theta.head(2);
      g.segment(2 + 2 * k, 2) = -diff;
      g.head(2) += diff;
    }
    const double sigma = std::exp(theta[8]);
    g[8] = 1.0 - sigma * sigma;
    return g;
  }
  Vector simulate(const Vector& theta, Rng& rng) const override {
    return theta.segment(2, 6) + std::exp(theta[8]) * rng.normal_vector(6);
  }
  double log_likelihood(const Vector& theta, const Vector& x) const override {
    const double sigma = std::exp(theta[8]);
    double lp = 0.0;
    for (int i = 0; i < 6; ++i) lp += normal_logpdf(x[i], theta[2 + i], sigma);
    return lp;
  }
  Vector prior_scale() const override {
    Vector s = Vector::Constant(9, std::sqrt(2.0));
    s.head(2).setOnes();
    s[8] = 1.0;
    return s;
  }
};

// -- hyperboloid ------------------------------------------------------------

class Hyperboloid final : public Task {
 public:
  static constexpr int kDataDim = 10;
  static constexpr double kNu = 3.0;
  static constexpr double kScale2 = 0.01;

  std::string name() const override { return "hyperboloid"; }
  Dag dag() const override { return flat_dag(2, kDataDim); }
  Vector prior_sample(Rng& rng) const override { return uniform_box_sample(2, -2.0, 2.0, rng); }
  double prior_logpdf(const Vector& theta) const override { return uniform_box_logpdf(theta, -2.0, 2.0); }
  Vector prior_logpdf_grad(const Vector&) const override { return Vector::Zero(2); }

  static double mean_function(const Vector& theta, const Eigen::Vector2d& p1, const Eigen::Vector2d& p2) {
    return std::abs((theta - p1).norm() - (theta - p2).norm());
  }
  static Eigen::Vector2d a1() { return {-0.5, 0.0}; }
  static Eigen::Vector2d a2() { return {0.5, 0.0}; }
  static Eigen::Vector2d b1() { return {0.0, -0.5}; }
  static Eigen::Vector2d b2() { return {0.0, 0.5}; }

  Vector simulate(const Vector& theta, Rng& rng) const override {
    const bool first = rng.uniform() < 0.5;
    const double loc = first ? mean_function(theta, a1(), a2()) : mean_function(theta, b1(), b2());
    std::chi_squared_distribution<double> chi2(kNu);
    const Vector z = rng.normal_vector(kDataDim);
    const double w = chi2(rng.engine());
    return (Vector::Constant(kDataDim, loc) + std::sqrt(kScale2) * z / std::sqrt(w / kNu)).eval();
  }
  static double student_logpdf(const Vector& x, double loc) {
    const double p = kDataDim;
    const double q = (x.array() - loc).square().sum() / kScale2;
    return std::lgamma(0.5 * (kNu + p)) - std::lgamma(0.5 * kNu) - 0.5 * p * std::log(kNu * std::numbers::pi) -
           0.5 * p * std::log(kScale2) - 0.5 * (kNu + p) * std::log1p(q / kNu);
  }
  double log_likelihood(const Vector& theta, const Vector& x) const override {
    return std::log(0.5) + logsumexp2(student_logpdf(x, mean_function(theta, a1(), a2())),
                                      student_logpdf(x, mean_function(theta, b1(), b2())));
  }
  Vector prior_scale() const override { return Vector::Constant(2, 4.0 / std::sqrt(12.0)); }
};

// -- mixture with distractors -----------------------------------------------

class Distractors final : public Task {
 public:
  static constexpr double kAlpha = 0.3;
  static constexpr double kSigma = 0.3;

  std::string name() const override { return "distractors"; }
  Dag dag() const override {
    return Dag({{"theta", NodeRole::parameter, 1}, {"x_inf", NodeRole::data, 2}, {"x_dist", NodeRole::data, 8}},
               {{"theta", "x_inf"}});
  }
  Vector prior_sample(Rng& rng) const override { return uniform_box_sample(1, -10.0, 10.0, rng); }
  double prior_logpdf(const Vector& theta) const override { return uniform_box_logpdf(theta, -10.0, 10.0); }
  Vector prior_logpdf_grad(const Vector&) const override { return Vector::Zero(1); }
  Vector simulate(const Vector& theta, Rng& rng) const override {
    Vector x(10);
    for (int i = 0; i < 2; ++i)
      x[i] = rng.uniform() < kAlpha ? rng.normal(theta[0], 1.0) : rng.normal(-theta[0], kSigma);
    for (int i = 2; i < 10; ++i) x[i] = rng.normal();
    return x;
  }
  double log_likelihood(const Vector& theta, const Vector& x) const override {
    double lp = 0.0;
    for (int i = 0; i < 2; ++i)
      lp += logsumexp2(std::log(kAlpha) + normal_logpdf(x[i], theta[0], 1.0),
                       std::log(1.0 - kAlpha) + normal_logpdf(x[i], -theta[0], kSigma));
    for (int i = 2; i < 10; ++i) lp += normal_logpdf(x[i], 0.0, 1.0);
    return lp;
  }
  Vector prior_scale() const override { return Vector::Constant(1, 20.0 / std::sqrt(12.0)); }

  Observation generate_observation(std::uint64_t seed) const override {
    Rng rng(seed);
    Observation obs;
    obs.task = name();
    obs.seed = seed;
    obs.x = Vector(10);
    obs.x[0] = 5.0;
    obs.x[1] = 5.0;
    for (int i = 2; i < 10; ++i) obs.x[i] = rng.normal();
    return obs;
  }
};

// -- SLCP -------------------------------------------------------------------

class Slcp final : public Task {
 public:
  std::string name() const override { return "slcp"; }
  Dag dag() const override { return flat_dag(5, 8); }
  Vector prior_sample(Rng& rng) const override { return uniform_box_sample(5, -3.0, 3.0, rng); }
  double prior_logpdf(const Vector& theta) const override { return uniform_box_logpdf(theta, -3.0, 3.0); }
  Vector prior_logpdf_grad(const Vector&) const override { return Vector::Zero(5); }
  static Eigen::Matrix2d covariance(const Vector& theta) {
    const double s1 = theta[2] * theta[2];
    const double s2 = theta[3] * theta[3];
    const double rho = std::tanh(theta[4]);
    Eigen::Matrix2d cov;
    cov << s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2;
    return cov;
  }
  Vector simulate(const Vector& theta, Rng& rng) const override {
    const Eigen::Matrix2d cov = covariance(theta);
    // Closed-form Cholesky factor so degenerate scales stay finite.
    const double l11 = std::sqrt(cov(0, 0));
    const double l21 = l11 > 0.0 ? cov(1, 0) / l11 : 0.0;
    const double l22 = std::sqrt(std::max(0.0, cov(1, 1) - l21 * l21));
    Vector x(8);
    for (int j = 0; j < 4; ++j) {
      const double e1 = rng.normal(), e2 = rng.normal();
      x[2 * j] = theta[0] + l11 * e1;
      x[2 * j + 1] = theta[1] + l21 * e1 + l22 * e2;
    }
    return x;
  }
  double log_likelihood(const Vector& theta, const Vector& x) const override {
    const Eigen::Matrix2d cov = covariance(theta);
    double lp = 0.0;
    for (int j = 0; j < 4; ++j) lp += bivariate_logpdf(x.segment(2 * j, 2), theta.head(2), cov);
    return lp;
  }
  Vector prior_scale() const override { return Vector::Constant(5, 6.0 / std::sqrt(12.0)); }
};

// -- tree -------------------------------------------------------------------

class Tree final : public Task {
 public:
  std::string name() const override { return "tree"; }
  Dag dag() const override {
    return Dag({{"theta1", NodeRole::parameter, 1},
                {"theta2", NodeRole::parameter, 1},
                {"theta3", NodeRole::parameter, 1},
                {"x12", NodeRole::data, 2},
                {"x34", NodeRole::data, 2}},
               {{"theta1", "theta2"}, {"theta1", "theta3"}, {"theta2", "x12"}, {"theta3", "x34"}});
  }
  Vector prior_sample(Rng& rng) const override {
    Vector theta(3);
    theta[0] = rng.normal();
    theta[1] = rng.normal(theta[0], 1.0);
    theta[2] = rng.normal(theta[0], 1.0);
    return theta;
  }
  double prior_logpdf(const Vector& theta) const override {
    return normal_logpdf(theta[0], 0.0, 1.0) + normal_logpdf(theta[1], theta[0], 1.0) +
           normal_logpdf(theta[2], theta[0], 1.0);
  }
  Vector prior_logpdf_grad(const Vector& theta) const override {
    Vector g(3);
    g[0] = -theta[0] + (theta[1] - theta[0]) + (theta[2] - theta[0]);
    g[1] = -(theta[1] - theta[0]);
    g[2] = -(theta[2] - theta[0]);
    return g;
  }
  static Vector means(const Vector& theta) {
    Vector m(4);
    const double s = std::sin(theta[1]), c = std::cos(theta[2]);
    m << s * s, theta[1] * theta[1], 0.1 * theta[2] * theta[2], c * c;
    return m;
  }
  static Vector sds() { return (Vector(4) << 0.2, 0.2, 0.6, 0.1).finished(); }
  Vector simulate(const Vector& theta, Rng& rng) const override {
    const Vector m = means(theta), s = sds();
    Vector x(4);
    for (int i = 0; i < 4; ++i) x[i] = rng.normal(m[i], s[i]);
    return x;
  }
  double log_likelihood(const Vector& theta, const Vector& x) const override {
    const Vector m = means(theta), s = sds();
    double lp = 0.0;
    for (int i = 0; i < 4; ++i) lp += normal_logpdf(x[i], m[i], s[i]);
    return lp;
  }
  Vector prior_scale() const override { return (Vector(3) << 1.0, std::sqrt(2.0), std::sqrt(2.0)).finished(); }
};

// -- two moons --------------------------------------------------------------

class TwoMoons final : public Task {
 public:
  static constexpr double kRMean = 0.1;
  static constexpr double kRSd = 0.1;

  std::string name() const override { return "two_moons"; }
  Dag dag() const override { return flat_dag(2, 2); }
  Vector prior_sample(Rng& rng) const override { return uniform_box_sample(2, -10.0, 10.0, rng); }
  double prior_logpdf(const Vector& theta) const override { return uniform_box_logpdf(theta, -10.0, 10.0); }
  Vector prior_logpdf_grad(const Vector&) const override { return Vector::Zero(2); }
  static Eigen::Vector2d shift(const Vector& theta) {
    const double s = theta[0] + theta[1];
    return {-std::abs(s) / std::numbers::sqrt2 + 0.25, (-theta[0] + theta[1]) / std::numbers::sqrt2};
  }
  Vector simulate(const Vector& theta, Rng& rng) const override {
    const double alpha = rng.uniform(-std::numbers::pi / 2.0, std::numbers::pi / 2.0);
    const double r = rng.normal(kRMean, kRSd);
    return (Eigen::Vector2d(r * std::cos(alpha), r * std::sin(alpha)) + shift(theta)).eval();
  }
  double log_likelihood(const Vector& theta, const Vector& x) const override {
    // (r, alpha) -> u is one-to-one onto the plane minus the vertical axis:
    // r = sign(u1) |u|, alpha = atan(u2 / u1), |Jacobian| = |r|.
    const Eigen::Vector2d u = Eigen::Vector2d(x[0], x[1]) - shift(theta);
    if (u[0] == 0.0) return kNegInf;
    const double r = (u[0] > 0.0 ? 1.0 : -1.0) * u.norm();
    return normal_logpdf(r, kRMean, kRSd) - std::log(std::numbers::pi) - std::log(std::abs(r));
  }
  Vector prior_scale() const override { return Vector::Constant(2, 20.0 / std::sqrt(12.0)); }
};

}  // namespace

nlohmann::json Observation::to_json() const {
  nlohmann::json doc;
  doc["task"] = task;
  doc["seed"] = seed;
  doc["theta"] = theta.size() > 0 ? nlohmann::json(std::vector<double>(theta.data(), theta.data() + theta.size()))
                                  : nlohmann::json(nullptr);
  doc["x"] = std::vector<double>(x.data(), x.data() + x.size());
  return doc;
}

Observation Observation::from_json(const nlohmann::json& doc) {
  try {
    Observation obs;
    obs.task = doc.value("task", std::string());
    obs.seed = doc.value("seed", std::uint64_t{0});
    const auto x = doc.at("x").get<std::vector<double>>();
    obs.x = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
    if (doc.contains("theta") && !doc["theta"].is_null()) {
      const auto theta = doc["theta"].get<std::vector<double>>();
      obs.theta = Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()));
    }
    return obs;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed observation: ") + ex.what());
  }
}

Observation Task::generate_observation(std::uint64_t seed) const {
  Rng rng(seed);
  Observation obs;
  obs.task = name();
  obs.seed = seed;
  obs.theta = prior_sample(rng);
  obs.x = simulate(obs.theta, rng);
  return obs;
}

PriorModel Task::prior() const {
  PriorModel p;
  p.dim = theta_dim();
  p.sample = [this](Rng& rng) { return prior_sample(rng); };
  p.logpdf = [this](const Vector& theta) { return prior_logpdf(theta); };
  p.logpdf_grad = [this](const Vector& theta) { return prior_logpdf_grad(theta); };
  return p;
}

std::vector<std::string> task_names() {
  return {"linear_gaussian", "gaussian_mixture_1", "gaussian_mixture_2", "hierarchical", "hyperboloid",
          "distractors",     "slcp",               "tree",               "two_moons"};
}

std::unique_ptr<Task> make_task(const std::string& name) {
  if (name == "linear_gaussian") return std::make_unique<LinearGaussian>();
  if (name == "gaussian_mixture_1") return std::make_unique<GaussianMixture1>();
  if (name == "gaussian_mixture_2") return std::make_unique<GaussianMixture2>();
  if (name == "hierarchical") return std::make_unique<Hierarchical>();
  if (name == "hyperboloid") return std::make_unique<Hyperboloid>();
  if (name == "distractors") return std::make_unique<Distractors>();
  if (name == "slcp") return std::make_unique<Slcp>();
  if (name == "tree") return std::make_unique<Tree>();
  if (name == "two_moons") return std::make_unique<TwoMoons>();
  throw LookupError("unknown task '" + name + "'");
}

GaussianPosterior analytic_posterior(const Task& task, const Vector& x_obs) {
  if (task.name() != "linear_gaussian") throw ConfigError("no analytic posterior for task '" + task.name() + "'");
  if (x_obs.size() != LinearGaussian::kDim) throw StructuralError("x_obs has the wrong dimension");
  // Equal prior and noise precisions: the posterior precision doubles.
  const double var = 1.0 / (1.0 / LinearGaussian::kVar + 1.0 / LinearGaussian::kVar);
  return {x_obs * (var / LinearGaussian::kVar), var * Matrix::Identity(x_obs.size(), x_obs.size())};
}

}  // namespace cpe
