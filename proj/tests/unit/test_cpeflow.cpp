#include <doctest.h>

#include <cmath>

#include "cpe/cpeflow.hpp"
#include "cpe/error.hpp"
#include "cpe/tasks.hpp"
#include "helpers.hpp"

using namespace cpe;
using namespace cpe::testing;

namespace {

CpeConfig small_config(int hidden = 2, int width = 4) {
  CpeConfig c;
  c.stack.hidden_layers = hidden;
  c.stack.width = width;
  c.embed.fourier_features = 8;
  c.embed.time_width = 6;
  c.embed.data_width = 6;
  return c;
}

bool subset(const BoolMatrix& a, const BoolMatrix& b) { return (a.array() && !b.array()).count() == 0; }

}  // namespace

TEST_CASE("zero network with a half gate returns half of theta") {
  VectorFieldNet net(fig1_prior(), small_config(), 1);
  for (auto* p : net.parameters())
    if (p->trainable) p->value.setZero();
  CHECK(net.gate().gamma() == 0.5);
  Vector theta(3), x(1);
  theta << 1.0, -2.0, 0.25;
  x << 0.3;
  CHECK((vector_field(net, 0.4, theta, x) - 0.5 * theta).norm() == 0.0);
}

TEST_CASE("saturated gate returns theta for any time and data") {
  VectorFieldNet net(fig1_prior(), small_config(), 2);
  net.gate().raw.value(0, 0) = 60.0;
  Rng rng(3);
  for (int k = 0; k < 5; ++k) {
    const Vector theta = rng.normal_vector(3), x = rng.normal_vector(1);
    CHECK((vector_field(net, rng.uniform(), theta, x) - theta).norm() == 0.0);
    CHECK(jacobian_pattern(net, 0.5, theta, x) == BoolMatrix::Identity(3, 3));
  }
}

TEST_CASE("non-finite inputs are rejected") {
  VectorFieldNet net(fig1_prior(), small_config(), 2);
  Vector theta = Vector::Zero(3), x = Vector::Zero(1);
  theta[1] = std::nan("");
  CHECK_THROWS_AS(vector_field(net, 0.5, theta, x), NumericError);
  CHECK_THROWS_AS(vector_field(net, 0.5, Vector::Zero(2), x), StructuralError);
}

TEST_CASE("random nets respect the example mask") {
  VectorFieldNet net(fig1_prior(), small_config(), 4);
  const BoolMatrix mask = net.structure().mask.dim_mask;
  Rng rng(5);
  randomize(net.parameters(), rng, 0.7);
  for (int k = 0; k < 50; ++k) {
    const BoolMatrix pattern = jacobian_pattern(net, rng.uniform(), rng.normal_vector(3), rng.normal_vector(1));
    CHECK(subset(pattern, mask));
    CHECK(pattern.diagonal().all());
  }
  // The first flow coordinate is theta2; theta1 sits last and must not feed it.
  CHECK(net.structure().order.order.front() == "theta2");
  CHECK_FALSE(mask(0, 2));
}

TEST_CASE("random nets respect every task mask") {
  for (const auto& name : task_names()) {
    const auto task = make_task(name);
    VectorFieldNet net(task->dag(), small_config(1, 3), 6);
    Rng rng(7);
    randomize(net.parameters(), rng, 0.5);
    const BoolMatrix mask = net.structure().mask.dim_mask;
    for (int k = 0; k < 10; ++k) {
      const BoolMatrix pattern =
          jacobian_pattern(net, rng.uniform(), rng.normal_vector(task->theta_dim()), rng.normal_vector(task->data_dim()));
      CHECK_MESSAGE(subset(pattern, mask), name);
    }
  }
}

TEST_CASE("fully connected masks constrain nothing") {
  const Dag g({{"a", NodeRole::parameter, 1}, {"b", NodeRole::parameter, 1}, {"c", NodeRole::parameter, 1},
               {"x", NodeRole::data, 1}},
              {{"a", "b"}, {"a", "c"}, {"b", "c"}, {"c", "x"}});
  VectorFieldNet net(g, small_config(), 8);
  Rng rng(9);
  randomize(net.parameters(), rng);
  const BoolMatrix mask = net.structure().mask.dim_mask;
  CHECK(mask.count() == 6);
  CHECK(subset(jacobian_pattern(net, 0.2, rng.normal_vector(3), rng.normal_vector(1)), mask));
}

TEST_CASE("vector field parameter gradients match finite differences") {
  for (const bool all_layers : {false, true}) {
    CpeConfig cfg = small_config(2, 3);
    cfg.stack.condition_all_layers = all_layers;
    cfg.stack.low_rank = all_layers;
    VectorFieldNet net(fig1_prior(), cfg, 10);
    Rng rng(11);
    randomize(net.parameters(), rng, 0.4);
    const Matrix theta = rng.normal_matrix(3, 4), x = rng.normal_matrix(1, 4), w = rng.normal_matrix(3, 4);
    RowVector t(4);
    t << 0.0, 0.3, 0.6, 0.9;
    const ParameterList params = trainable(net.parameters());
    auto loss = [&] { return (net.forward(t, theta, x).array() * w.array()).sum(); };
    const Vector g = gradient(
        [&] {
          VectorFieldNet::Cache cache;
          const Matrix v = net.forward(t, theta, x, &cache);
          net.backward(cache, t, x, w);
          return (v.array() * w.array()).sum();
        },
        params);
    CHECK(relative_error(g, finite_difference_gradient(loss, params)) < 1e-7);
  }
}

TEST_CASE("interpolation") {
  Vector a(2), b(2);
  a << 0.0, 0.0;
  b << 4.0, 8.0;
  CHECK(interpolate(a, b, 0.0) == a);
  CHECK(interpolate(a, b, 1.0) == b);
  CHECK(interpolate(a, b, 0.25) == Vector((Vector(2) << 1.0, 2.0).finished()));
  Rng rng(12);
  for (int k = 0; k < 20; ++k) {
    const Vector p = rng.normal_vector(3), q = rng.normal_vector(3), r = rng.normal_vector(3);
    const double t = rng.uniform(), s = rng.normal();
    CHECK((interpolate(p, p, t) - p).norm() < 1e-15);
    CHECK((interpolate(p + s * r, q, t) - (interpolate(p, q, t) + (1.0 - t) * s * r)).norm() < 1e-12);
    CHECK((interpolate(p, q + s * r, t) - (interpolate(p, q, t) + t * s * r)).norm() < 1e-12);
  }
  Matrix m0 = rng.normal_matrix(2, 3), m1 = rng.normal_matrix(2, 3);
  RowVector ts(3);
  ts << 0.0, 0.5, 1.0;
  const Matrix mid = interpolate(m0, m1, ts);
  CHECK(mid.col(0) == m0.col(0));
  CHECK(mid.col(2) == m1.col(2));
}

TEST_CASE("vector field difference quotients stay bounded") {
  VectorFieldNet net(fig1_prior(), small_config(), 13);
  Rng rng(14);
  randomize(net.parameters(), rng, 0.5);
  const Vector x = rng.normal_vector(1);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const Vector a = 3.0 * (2.0 * Vector::NullaryExpr(3, [&] { return rng.uniform(); }).array() - 1.0).matrix();
    const Vector b = a + 1e-3 * rng.normal_vector(3);
    const double t = rng.uniform();
    worst = std::max(worst, (vector_field(net, t, a, x) - vector_field(net, t, b, x)).norm() / (a - b).norm());
  }
  CHECK(worst < 100.0);
}

TEST_CASE("config JSON round trip") {
  CpeConfig c = small_config();
  c.stack.low_rank = true;
  c.scope = ConditioningScope::all_nodes;
  const CpeConfig back = CpeConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS_AS(CpeConfig::from_json({{"diag", "cube"}}), ConfigError);
}
