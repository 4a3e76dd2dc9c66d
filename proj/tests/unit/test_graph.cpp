#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "cpe/error.hpp"
#include "cpe/graph.hpp"
#include "cpe/tasks.hpp"
#include "helpers.hpp"

using namespace cpe;
using namespace cpe::testing;

namespace {

std::set<Edge> edge_set(const Dag& g) { return {g.edges().begin(), g.edges().end()}; }

// Random DAG over 8 nodes; edges only go forward in a shuffled rank order and
// data nodes are never parents.
Dag random_dag(Rng& rng) {
  const int n = 8;
  std::vector<int> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng.engine());
  std::vector<Node> nodes;
  for (int i = 0; i < n; ++i) {
    const bool data = i >= 6 || (i >= 3 && rng.uniform() < 0.2);
    nodes.push_back({"n" + std::to_string(i), data ? NodeRole::data : NodeRole::parameter,
                     1 + static_cast<int>(rng.uniform() * 3.0)});
  }
  std::vector<Edge> edges;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (rank[a] < rank[b] && nodes[a].role == NodeRole::parameter && rng.uniform() < 0.35)
        edges.push_back({nodes[a].id, nodes[b].id});
  return Dag(nodes, edges);
}

int parameter_edge_count(const Dag& g) {
  int count = 0;
  for (const auto& [p, c] : g.edges())
    if (g.node(p).role == NodeRole::parameter && g.node(c).role == NodeRole::parameter) ++count;
  return count;
}

bool is_parent(const Dag& g, const std::string& parent, const std::string& child) {
  for (int p : g.parents(g.index_of(child)))
    if (g.nodes()[p].id == parent) return true;
  return false;
}

}  // namespace

TEST_CASE("inverting the example program reverses every edge") {
  const Dag post = invert_program(fig1_prior());
  const std::set<Edge> expected{{"x", "theta2"}, {"x", "theta3"}, {"theta2", "theta1"}};
  CHECK(edge_set(post) == expected);
  CHECK(post.nodes() == fig1_prior().nodes());
}

TEST_CASE("inverting a lone node is the identity") {
  const Dag g({{"a", NodeRole::parameter, 2}}, {});
  const Dag inv = invert_program(g);
  CHECK(inv.same_structure(g));
  CHECK(inv.edges().empty());
}

TEST_CASE("inverting a chain matches brute-force reversal") {
  const Dag g({{"a", NodeRole::parameter, 1}, {"b", NodeRole::parameter, 1}, {"c", NodeRole::data, 1}},
              {{"a", "b"}, {"b", "c"}});
  std::set<Edge> oracle;
  for (const auto& [p, c] : g.edges()) oracle.insert({c, p});
  CHECK(edge_set(invert_program(g)) == oracle);
}

TEST_CASE("cyclic or dangling graphs are rejected") {
  CHECK_THROWS_AS(Dag({{"a", NodeRole::parameter, 1}, {"b", NodeRole::parameter, 1}}, {{"a", "b"}, {"b", "a"}}),
                  StructuralError);
  CHECK_THROWS_AS(Dag({{"a", NodeRole::parameter, 1}}, {{"a", "missing"}}), StructuralError);
  CHECK_THROWS_AS(Dag({{"a", NodeRole::parameter, 0}}, {}), StructuralError);
  CHECK_THROWS_AS(Dag({{"a", NodeRole::parameter, 1}}, {}).require_task_shape(), StructuralError);
}

TEST_CASE("example posterior sorts with the insertion tie-break") {
  const Dag post = invert_program(fig1_prior());
  const TopologicalOrder order = topological_sort(post);
  CHECK(order.order == std::vector<std::string>{"theta2", "theta3", "theta1"});
  CHECK(is_valid_order(post, order));
  // The ordering {3, 2, 1} is equally valid.
  CHECK(is_valid_order(post, TopologicalOrder{{"theta3", "theta2", "theta1"}}));
  CHECK_FALSE(is_valid_order(post, TopologicalOrder{{"theta1", "theta2", "theta3"}}));
}

TEST_CASE("parameters without edges keep insertion order") {
  const Dag g({{"c", NodeRole::parameter, 1}, {"a", NodeRole::parameter, 2}, {"b", NodeRole::parameter, 1},
               {"x", NodeRole::data, 1}},
              {{"c", "x"}, {"a", "x"}, {"b", "x"}});
  CHECK(topological_sort(invert_program(g)).order == std::vector<std::string>{"c", "a", "b"});
}

TEST_CASE("example mask under the order {3, 2, 1}") {
  const Dag post = invert_program(fig1_prior());
  const DependencyMask m = dependency_mask(post, TopologicalOrder{{"theta3", "theta2", "theta1"}});
  BoolMatrix expected(3, 3);
  expected << true, false, false, false, true, false, false, true, true;
  CHECK(m.node_mask == expected);
  CHECK(m.dim_mask == expected);
  CHECK(std::set<std::string>(m.cond_targets.begin(), m.cond_targets.end()) ==
        std::set<std::string>{"theta2", "theta3"});
}

TEST_CASE("disconnected parameters give an identity mask") {
  const Dag g({{"a", NodeRole::parameter, 1}, {"b", NodeRole::parameter, 1}, {"x", NodeRole::data, 2}},
              {{"a", "x"}, {"b", "x"}});
  const Dag post = invert_program(g);
  const DependencyMask m = dependency_mask(post, topological_sort(post));
  CHECK(m.node_mask == BoolMatrix::Identity(2, 2));
}

TEST_CASE("hierarchical mask matches direct parent lookup") {
  const Dag prior = make_task("hierarchical")->dag();
  const Dag post = invert_program(prior);
  const TopologicalOrder order = topological_sort(post);
  const DependencyMask m = dependency_mask(post, order);
  const int n = static_cast<int>(order.order.size());
  REQUIRE(m.node_mask.rows() == n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      CHECK(m.node_mask(i, j) == (i == j || is_parent(post, order.order[j], order.order[i])));
}

TEST_CASE("conditioning every node is a configuration switch") {
  const Dag post = invert_program(fig1_prior());
  const DependencyMask m = dependency_mask(post, topological_sort(post), ConditioningScope::all_nodes);
  CHECK(m.cond_targets.size() == 3);
  CHECK(m.target_dims() == std::vector<int>{0, 1, 2});
}

TEST_CASE("random DAG properties") {
  Rng rng(2024);
  for (int rep = 0; rep < 200; ++rep) {
    const Dag g = random_dag(rng);
    const Dag post = invert_program(g);
    CHECK(invert_program(post).same_structure(g));

    const TopologicalOrder order = topological_sort(post);
    // Exhaustive edge check of the order.
    for (const auto& [p, c] : post.edges()) {
      const auto ip = std::find(order.order.begin(), order.order.end(), p);
      const auto ic = std::find(order.order.begin(), order.order.end(), c);
      if (ip != order.order.end() && ic != order.order.end()) CHECK(ip < ic);
    }
    CHECK(topological_sort(post) == order);

    const DependencyMask m = dependency_mask(post, order);
    const int n = static_cast<int>(m.nodes.size());
    for (int i = 0; i < n; ++i) {
      CHECK(m.node_mask(i, i));
      for (int j = i + 1; j < n; ++j) CHECK_FALSE(m.node_mask(i, j));
    }
    CHECK(m.node_mask.count() == n + parameter_edge_count(post));

    // dim_mask tiles node_mask, with dense lower-triangular diagonal blocks.
    for (int a = 0; a < m.dim(); ++a)
      for (int b = 0; b < m.dim(); ++b) {
        const int na = m.dim_owner[a], nb = m.dim_owner[b];
        const bool expected = na == nb ? b <= a : static_cast<bool>(m.node_mask(na, nb));
        CHECK(m.dim_mask(a, b) == expected);
      }
    CHECK(m.dim() == g.parameter_dim());
  }
}

TEST_CASE("Dag JSON round trip") {
  const Dag g = make_task("tree")->dag();
  const nlohmann::json doc = g.to_json();
  CHECK(doc.contains("nodes"));
  CHECK(doc["edges"].is_array());
  const Dag back = Dag::from_json(doc);
  CHECK(back.nodes() == g.nodes());
  CHECK(back.edges() == g.edges());
  CHECK_THROWS_AS(Dag::from_json(nlohmann::json::parse(R"({"nodes": [{"id": "a", "role": "bogus", "dim": 1}]})")),
                  StructuralError);
}

TEST_CASE("layout permutation round trips") {
  const Dag prior = make_task("hierarchical")->dag();
  const Dag post = invert_program(prior);
  const ParamLayout layout(prior, topological_sort(post));
  Rng rng(5);
  const Vector v = rng.normal_vector(layout.dim());
  CHECK(layout.to_natural(layout.to_flow(v)) == v);
  const Matrix m = rng.normal_matrix(layout.dim(), 4);
  CHECK(layout.rows_to_natural(layout.rows_to_flow(m)) == m);
}
