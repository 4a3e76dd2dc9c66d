#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cpe/types.hpp"

namespace cpe {

enum class NodeRole { parameter, data };

struct Node {
  std::string id;
  NodeRole role = NodeRole::parameter;
  int dim = 1;

  bool operator==(const Node&) const = default;
};

using Edge = std::pair<std::string, std::string>;  // (parent, child)

/// Directed acyclic graph over named parameter and data nodes.
///
/// Validated on construction and immutable afterwards. Node order is the
/// insertion order and is significant: it is the tie-break of the topological
/// sort and the layout of flattened data vectors.
class Dag {
 public:
  Dag() = default;
  Dag(std::vector<Node> nodes, std::vector<Edge> edges);

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }

  int index_of(const std::string& id) const;
  const Node& node(const std::string& id) const { return nodes_[index_of(id)]; }
  bool contains(const std::string& id) const;

  /// Parent / child node indices of node `index`, in insertion order.
  const std::vector<int>& parents(int index) const { return parents_[index]; }
  const std::vector<int>& children(int index) const { return children_[index]; }

  std::vector<std::string> parameter_ids() const;
  std::vector<std::string> data_ids() const;
  int parameter_dim() const;
  int data_dim() const;

  /// Task Dags additionally need at least one data and one parameter node.
  void require_task_shape() const;

  /// Same node set and same edge set (edge order ignored).
  bool same_structure(const Dag& other) const;

  nlohmann::json to_json() const;
  static Dag from_json(const nlohmann::json& doc);

 private:
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<int>> children_;
};

/// Posterior program by naive edge reversal.
Dag invert_program(const Dag& prior);

struct TopologicalOrder {
  std::vector<std::string> order;  // parameter node ids

  bool operator==(const TopologicalOrder&) const = default;
};

/// Parameter nodes sorted by longest parameter-to-parameter path from a root,
/// ties broken by insertion index.
TopologicalOrder topological_sort(const Dag& posterior);

/// True iff `order` is a permutation of the parameter nodes consistent with
/// every parameter->parameter edge.
bool is_valid_order(const Dag& posterior, const TopologicalOrder& order);

enum class ConditioningScope {
  data_parents,  // parameter nodes with a data parent in the posterior program
  all_nodes,
};

/// Which flow weights may be nonzero, at node and flattened-dimension level.
struct DependencyMask {
  std::vector<std::string> nodes;  // ordered parameter node ids
  std::vector<int> node_dims;
  std::vector<int> node_offsets;   // first flattened dimension of each node
  std::vector<int> dim_owner;      // ordered node position owning each dimension
  BoolMatrix node_mask;
  BoolMatrix dim_mask;
  std::vector<std::string> cond_targets;

  int dim() const { return static_cast<int>(dim_mask.rows()); }
  /// Flattened dimensions belonging to conditioning targets, ascending.
  std::vector<int> target_dims() const;
};

DependencyMask dependency_mask(const Dag& posterior, const TopologicalOrder& order,
                               ConditioningScope scope = ConditioningScope::data_parents);

/// Permutation between the natural parameter layout (Dag insertion order) and
/// the flow layout (topological order). Both are flattened over node dims.
class ParamLayout {
 public:
  ParamLayout() = default;
  ParamLayout(const Dag& dag, const TopologicalOrder& order);

  int dim() const { return static_cast<int>(flow_to_natural_.size()); }
  Vector to_flow(const Vector& natural) const;
  Vector to_natural(const Vector& flow) const;
  /// Column-wise permutation of a (dim x n) matrix.
  Matrix rows_to_flow(const Matrix& natural) const;
  Matrix rows_to_natural(const Matrix& flow) const;
  const std::vector<int>& flow_to_natural() const { return flow_to_natural_; }

 private:
  std::vector<int> flow_to_natural_;
};

}  // namespace cpe
