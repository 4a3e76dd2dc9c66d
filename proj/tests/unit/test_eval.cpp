#include <doctest.h>

#include <cmath>

#include "cpe/error.hpp"
#include "cpe/eval.hpp"
#include "helpers.hpp"

using namespace cpe;
using namespace cpe::testing;

namespace {

C2stConfig fast_config() {
  C2stConfig c;
  c.epochs = 60;
  c.patience = 10;
  c.learning_rate = 1e-3;
  return c;
}

}  // namespace

TEST_CASE("c2st on identical distributions is near chance") {
  Rng rng(1);
  const Matrix a = rng.normal_matrix(1000, 2), b = rng.normal_matrix(1000, 2);
  const double acc = c2st(a, b, fast_config(), 2);
  CHECK(acc >= 0.48);
  CHECK(acc <= 0.54);
}

TEST_CASE("c2st on disjoint supports is near one") {
  Rng rng(3);
  const Matrix a = rng.normal_matrix(600, 2);
  const Matrix b = (rng.normal_matrix(600, 2).array() + 10.0).matrix();
  CHECK(c2st(a, b, fast_config(), 4) >= 0.99);
}

TEST_CASE("c2st of unit-shifted normals approaches the Bayes accuracy") {
  // Bayes accuracy for N(0,1) vs N(1,1) is Phi(0.5) = 0.6915.
  Rng rng(5);
  const Matrix a = rng.normal_matrix(4000, 1);
  const Matrix b = (rng.normal_matrix(4000, 1).array() + 1.0).matrix();
  CHECK(c2st(a, b, fast_config(), 6) == doctest::Approx(0.6915).epsilon(0.02 / 0.6915));
}

TEST_CASE("c2st is symmetric and affine invariant") {
  Rng rng(7);
  const Matrix a = rng.normal_matrix(800, 2);
  const Matrix b = (rng.normal_matrix(800, 2).array() * 1.5 + 0.3).matrix();
  const C2stConfig cfg = fast_config();
  const double ab = c2st(a, b, cfg, 8);
  CHECK(std::abs(ab - c2st(b, a, cfg, 8)) < 0.03);
  // Pooled standardization absorbs a shared affine map.
  const Matrix a2 = (a.array() * 100.0 - 42.0).matrix();
  const Matrix b2 = (b.array() * 100.0 - 42.0).matrix();
  CHECK(std::abs(ab - c2st(a2, b2, cfg, 8)) < 0.03);
  CHECK(c2st(a, b, cfg, 8) == ab);
}

TEST_CASE("c2st input validation") {
  Rng rng(9);
  CHECK_THROWS_AS(c2st(rng.normal_matrix(100, 2), rng.normal_matrix(1000, 2), fast_config(), 1), DataError);
  CHECK_THROWS_AS(c2st(rng.normal_matrix(600, 2), rng.normal_matrix(600, 3), fast_config(), 1), StructuralError);
  C2stConfig bad = fast_config();
  bad.folds = 1;
  CHECK_THROWS_AS(c2st(rng.normal_matrix(600, 2), rng.normal_matrix(600, 2), bad, 1), ConfigError);
}

TEST_CASE("moment report") {
  Rng rng(10);
  const Matrix a = rng.normal_matrix(500, 3);
  const MomentReport same = moment_report(a, a);
  CHECK(same.mean_error == 0.0);
  CHECK(same.cov_error == 0.0);

  const Matrix shifted = (a.rowwise() + RowVector::Constant(3, 1.0 / std::sqrt(3.0))).eval();
  const MomentReport shift = moment_report(a, shifted);
  CHECK(shift.mean_error == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(shift.cov_error < 1e-12);

  const Matrix b = 2.0 * rng.normal_matrix(700, 3);
  const MomentReport ab = moment_report(a, b), ba = moment_report(b, a);
  CHECK(ab.mean_error == doctest::Approx(ba.mean_error).epsilon(1e-14));
  CHECK(ab.cov_error == doctest::Approx(ba.cov_error).epsilon(1e-14));
  // cov(b) - cov(a) is about 3 I.
  CHECK(ab.cov_error == doctest::Approx(3.0 * std::sqrt(3.0)).epsilon(0.15));
}

TEST_CASE("two-cluster statistic") {
  Rng rng(11);
  // Best 2-means split of an isotropic normal halves one axis: the ratio is
  // d / (d - 2 / pi), i.e. 1.467 in 2-D and 1.269 in 3-D.
  const Matrix plane = rng.normal_matrix(8000, 2);
  CHECK(two_cluster_ratio(plane, 1) == doctest::Approx(2.0 / (2.0 - 2.0 / M_PI)).epsilon(0.03));
  const Matrix ball = rng.normal_matrix(4000, 3);
  CHECK(two_cluster_ratio(ball, 1) == doctest::Approx(3.0 / (3.0 - 2.0 / M_PI)).epsilon(0.03));
  CHECK_FALSE(has_two_clusters(ball, 1));

  Matrix two = rng.normal_matrix(1000, 2);
  two.topRows(500).col(0).array() += 6.0;
  CHECK(two_cluster_ratio(two, 1) > 1.5);
  CHECK(has_two_clusters(two, 1));
  CHECK(two_cluster_ratio(two, 1) == two_cluster_ratio(two, 1));
}

TEST_CASE("eval report rows line up with columns") {
  EvalReport r;
  r.task = "two_moons";
  r.method = "cpe-euler";
  r.n_train = 10000;
  r.train_seed = 3;
  r.c2st = 0.61;
  r.acceptance_rate = 0.97;
  CHECK(r.row().size() == EvalReport::columns().size());
  const nlohmann::json doc = r.to_json();
  CHECK(doc["task"] == "two_moons");
  CHECK(doc["c2st"] == 0.61);
  CHECK(doc["acceptance_rate"] == 0.97);
}
