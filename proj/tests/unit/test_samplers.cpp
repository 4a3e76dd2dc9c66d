#include <doctest.h>

#include <cmath>

#include "cpe/error.hpp"
#include "cpe/samplers.hpp"
#include "cpe/tasks.hpp"
#include "helpers.hpp"

using namespace cpe;
using namespace cpe::testing;

namespace {

PriorModel gaussian_prior(int d) {
  PriorModel p;
  p.dim = d;
  p.sample = [d](Rng& rng) { return rng.normal_vector(d); };
  p.logpdf = [d](const Vector& v) { return -0.5 * v.squaredNorm() - 0.5 * d * std::log(2.0 * M_PI); };
  p.logpdf_grad = [](const Vector& v) { return Vector(-v); };
  return p;
}

PriorModel box_prior(int d, double half) {
  PriorModel p;
  p.dim = d;
  p.sample = [d, half](Rng& rng) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v[i] = rng.uniform(-half, half);
    return v;
  };
  p.logpdf = [d, half](const Vector& v) {
    return (v.array().abs() <= half).all() ? -d * std::log(2.0 * half) : -std::numeric_limits<double>::infinity();
  };
  p.logpdf_grad = [d](const Vector&) { return Vector(Vector::Zero(d)); };
  return p;
}

// Prior draws exactly as sample_until produces them.
Matrix prior_rows(const PriorModel& prior, long n, std::uint64_t seed) {
  Matrix out(n, prior.dim);
  for (long j = 0; j < n; ++j) {
    Rng rng = Rng(seed).substream(static_cast<std::uint64_t>(j));
    out.row(j) = prior.sample(rng).transpose();
  }
  return out;
}

const BatchField zero_field = [](const RowVector&, const Matrix& theta) { return Matrix(Matrix::Zero(theta.rows(), theta.cols())); };
const BatchField decay_field = [](const RowVector&, const Matrix& theta) { return Matrix(-theta); };

CpeConfig small_discrete() {
  CpeConfig c = discrete_defaults();
  c.stack.hidden_layers = 0;
  c.embed.data_width = 4;
  return c;
}

}  // namespace

TEST_CASE("zero field returns the prior draws") {
  const PriorModel prior = gaussian_prior(3);
  const Matrix draws = prior_rows(prior, 100, 7);
  const SampleSet euler = euler_sample(zero_field, prior, 100, 20, 7);
  CHECK(euler.samples == draws);
  CHECK(euler.acceptance_rate() == 1.0);
  const SampleSet rk = rk45_sample(zero_field, prior, 100, Rk45Config{}, 7);
  CHECK(rk.samples == draws);
}

TEST_CASE("constant fields are integrated exactly") {
  const PriorModel prior = gaussian_prior(2);
  const Vector c = (Vector(2) << 0.75, -1.5).finished();
  const BatchField field = [&](const RowVector&, const Matrix& theta) { return Matrix(c.replicate(1, theta.cols())); };
  const Matrix draws = prior_rows(prior, 50, 3);
  for (int steps : {1, 7, 20}) {
    const SampleSet s = euler_sample(field, prior, 50, steps, 3);
    CHECK(((s.samples - draws).rowwise() - c.transpose()).cwiseAbs().maxCoeff() < 1e-13);
  }
  const SampleSet rk = rk45_sample(field, prior, 50, Rk45Config{}, 3);
  CHECK(((rk.samples - draws).rowwise() - c.transpose()).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("Euler on exponential decay matches the closed-form product") {
  Rng rng(1);
  const Matrix theta0 = rng.normal_matrix(3, 40);
  const Integration r = euler_integrate(decay_field, theta0, 20);
  CHECK((r.theta - theta0 * std::pow(19.0 / 20.0, 20)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(std::pow(19.0 / 20.0, 20) == doctest::Approx(0.3585).epsilon(1e-4));
}

TEST_CASE("RK45 on exponential decay matches exp(-1)") {
  Rng rng(2);
  const Matrix theta0 = rng.normal_matrix(2, 40);
  const Integration r = rk45_integrate(decay_field, theta0, Rk45Config{});
  CHECK((r.theta - theta0 * std::exp(-1.0)).cwiseAbs().maxCoeff() <= 1e-4);
  for (bool ok : r.ok) CHECK(ok);
}

TEST_CASE("Euler error shrinks like 1/T") {
  Matrix theta0(1, 1);
  theta0 << 1.0;
  double prev = std::numeric_limits<double>::infinity();
  std::vector<double> errors;
  for (int steps : {5, 20, 80}) {
    const double err = std::abs(euler_integrate(decay_field, theta0, steps).theta(0, 0) - std::exp(-1.0));
    CHECK(err < prev);
    prev = err;
    errors.push_back(err);
  }
  // Quadrupling T should cut the error by roughly four.
  CHECK(errors[0] / errors[1] > 3.0);
  CHECK(errors[1] / errors[2] > 3.5);
}

TEST_CASE("non-finite trajectories are dropped and counted") {
  const BatchField field = [](const RowVector&, const Matrix& theta) {
    Matrix v = Matrix::Zero(theta.rows(), theta.cols());
    for (Eigen::Index j = 0; j < theta.cols(); ++j)
      if (theta(0, j) > 1.0) v(0, j) = std::nan("");
    return v;
  };
  const PriorModel prior = gaussian_prior(1);
  const SampleSet s = euler_sample(field, prior, 200, 5, 4);
  CHECK(s.size() == 200);
  CHECK(s.proposed > 200);
  CHECK((s.samples.array() <= 1.0).all());
  const Matrix draws = prior_rows(prior, s.proposed, 4);
  CHECK(s.proposed - 200 == (draws.array() > 1.0).count());
}

TEST_CASE("RK45 step underflow discards the trajectory") {
  const BatchField stiff = [](const RowVector&, const Matrix& theta) { return Matrix(-1e12 * theta.array().sin().matrix()); };
  Rk45Config cfg;
  cfg.max_steps = 50;
  Matrix theta0(1, 2);
  theta0 << 0.0, 1.0;
  const Integration r = rk45_integrate(stiff, theta0, cfg);
  CHECK(r.ok[0]);
  CHECK_FALSE(r.ok[1]);
}

TEST_CASE("rejection filter counting") {
  const PriorModel box = box_prior(1, 10.0);
  Matrix c(4, 1);
  c << 1.0, -9.5, 11.0, 0.0;
  const SampleSet s = rejection_filter(c, box);
  CHECK(s.accepted == 3);
  CHECK(s.proposed == 4);
  CHECK(s.acceptance_rate() == 0.75);
  CHECK((s.samples.array().abs() <= 10.0).all());

  Rng rng(5);
  const SampleSet g = rejection_filter(100.0 * rng.normal_matrix(30, 2), gaussian_prior(2));
  CHECK(g.acceptance_rate() == 1.0);
}

TEST_CASE("proposals are capped at ten times the request") {
  const PriorModel box = box_prior(1, 1.0);
  const BatchField away = [](const RowVector&, const Matrix& theta) { return Matrix(Matrix::Constant(theta.rows(), theta.cols(), 5.0)); };
  CHECK_THROWS_AS(euler_sample(away, box, 10, 1, 0), NumericError);
}

TEST_CASE("sampling is seeded and independent of chunking") {
  const PriorModel box = box_prior(2, 1.0);
  const BatchField drift = [](const RowVector& t, const Matrix& theta) {
    Matrix v = 0.8 * theta;
    v.row(0) += t;
    return v;
  };
  auto proposal = [&](const Matrix& base, std::vector<bool>& ok) {
    Integration r = euler_integrate(drift, base, 20);
    ok = r.ok;
    return r.theta;
  };
  const SampleSet a = sample_until(box, proposal, 500, 11, 4096);
  const SampleSet b = sample_until(box, proposal, 500, 11, 37);
  const SampleSet c = euler_sample(drift, box, 500, 20, 11);
  CHECK(a.samples == b.samples);
  CHECK(a.proposed == b.proposed);
  CHECK(c.samples == a.samples);
  CHECK(a.acceptance_rate() < 1.0);
  CHECK(sample_until(box, proposal, 500, 12).samples != a.samples);
}

TEST_CASE("discrete identity net returns prior draws") {
  DiscreteFlowNet net(single_prior(2, 1), small_discrete(), 1);
  for (auto* p : net.parameters())
    if (p->trainable) p->value.setZero();
  net.gate().raw.value(0, 0) = -800.0;
  const PriorModel prior = gaussian_prior(2);
  const SampleSet s = discrete_sample(net, prior, Vector::Zero(1), 50, 9);
  CHECK((s.samples - prior_rows(prior, 50, 9)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("discrete halving net doubles prior draws") {
  DiscreteFlowNet net(single_prior(1, 1), small_discrete(), 2);
  for (auto* p : net.parameters())
    if (p->trainable) p->value.setZero();
  net.gate().raw.value(0, 0) = -800.0;
  net.stack().layer(0).blocks()[0].weight.value(0, 0) = -std::log(2.0);
  const PriorModel prior = gaussian_prior(1);
  const SampleSet s = discrete_sample(net, prior, Vector::Zero(1), 50, 10);
  const Matrix draws = prior_rows(prior, 50, 10);
  CHECK((s.samples - 2.0 * draws).cwiseAbs().maxCoeff() < 1e-9);
  // Forward oracle maps every sample back onto its base draw.
  for (long j = 0; j < s.size(); ++j) {
    const Vector z = forward_logdet(net, s.samples.row(j).transpose(), Vector::Zero(1)).first;
    CHECK(std::abs(z[0] - draws(j, 0)) < 1e-8);
  }
}

TEST_CASE("discrete samples round trip through a random net") {
  DiscreteFlowNet net(fig1_prior(), small_discrete(), 3);
  Rng rng(4);
  randomize(net.parameters(), rng, 0.6);
  const PriorModel prior = gaussian_prior(3);
  const Vector x = rng.normal_vector(1);
  const SampleSet s = discrete_sample(net, prior, x, 40, 5);
  const Matrix draws = prior_rows(prior, 40, 5);
  const ParamLayout& layout = net.structure().layout;
  for (long j = 0; j < s.size(); ++j) {
    const Vector flow = layout.to_flow(s.samples.row(j).transpose());
    const Vector z = layout.to_natural(forward_logdet(net, flow, x).first);
    CHECK((z - draws.row(j).transpose()).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("trained-field adaptor works in natural coordinates") {
  const auto task = make_task("tree");
  CpeConfig cfg;
  cfg.stack.hidden_layers = 1;
  cfg.stack.width = 3;
  VectorFieldNet net(task->dag(), cfg, 6);
  for (auto* p : net.parameters())
    if (p->trainable) p->value.setZero();
  net.gate().raw.value(0, 0) = 60.0;  // v = u in standardized flow coordinates
  Rng rng(7);
  const Matrix theta = rng.normal_matrix(3, 10), x = rng.normal_matrix(4, 10);
  net.standardizer().fit(net.structure().layout.rows_to_flow(theta), x);
  const BatchField field = cpe_field(net, x.col(0));
  const Matrix v = field(RowVector::Constant(10, 0.3), theta);
  // u = (theta - mean) / scale mapped back by the scale: theta - mean.
  const Vector mean = net.structure().layout.to_natural(net.standardizer().theta_mean());
  CHECK(((theta.colwise() - mean) - v).cwiseAbs().maxCoeff() < 1e-12);
}
