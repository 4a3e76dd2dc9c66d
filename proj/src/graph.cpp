#include "cpe/graph.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <set>

#include "cpe/error.hpp"

namespace cpe {

namespace {

std::string role_name(NodeRole role) { return role == NodeRole::parameter ? "parameter" : "data"; }

NodeRole parse_role(const std::string& name) {
  if (name == "parameter") return NodeRole::parameter;
  if (name == "data") return NodeRole::data;
  throw StructuralError("unknown node role '" + name + "'");
}

}  // namespace

Dag::Dag(std::vector<Node> nodes, std::vector<Edge> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  std::set<std::string> seen;
  for (const auto& n : nodes_) {
    if (n.id.empty()) throw StructuralError("node id must be non-empty");
    if (n.dim < 1) throw StructuralError("node '" + n.id + "' has non-positive dim");
    if (!seen.insert(n.id).second) throw StructuralError("duplicate node id '" + n.id + "'");
  }
  parents_.assign(nodes_.size(), {});
  children_.assign(nodes_.size(), {});
  std::set<Edge> unique_edges;
  for (const auto& [from, to] : edges_) {
    if (!contains(from) || !contains(to))
      throw StructuralError("edge (" + from + ", " + to + ") names a missing node");
    if (from == to) throw StructuralError("self-loop on '" + from + "'");
    if (!unique_edges.insert({from, to}).second)
      throw StructuralError("duplicate edge (" + from + ", " + to + ")");
    int p = index_of(from);
    int c = index_of(to);
    children_[p].push_back(c);
    parents_[c].push_back(p);
  }
  for (auto& v : parents_) std::sort(v.begin(), v.end());
  for (auto& v : children_) std::sort(v.begin(), v.end());

  // Kahn's algorithm; anything left over sits on a cycle.
  std::vector<int> indegree(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) indegree[i] = static_cast<int>(parents_[i].size());
  std::queue<int> ready;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (indegree[i] == 0) ready.push(static_cast<int>(i));
  std::size_t visited = 0;
  while (!ready.empty()) {
    int u = ready.front();
    ready.pop();
    ++visited;
    for (int c : children_[u])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (visited != nodes_.size()) throw StructuralError("graph contains a directed cycle");
}

int Dag::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].id == id) return static_cast<int>(i);
  throw LookupError("no node named '" + id + "'");
}

bool Dag::contains(const std::string& id) const {
  return std::any_of(nodes_.begin(), nodes_.end(), [&](const Node& n) { return n.id == id; });
}

std::vector<std::string> Dag::parameter_ids() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_)
    if (n.role == NodeRole::parameter) out.push_back(n.id);
  return out;
}

std::vector<std::string> Dag::data_ids() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_)
    if (n.role == NodeRole::data) out.push_back(n.id);
  return out;
}

int Dag::parameter_dim() const {
  int d = 0;
  for (const auto& n : nodes_)
    if (n.role == NodeRole::parameter) d += n.dim;
  return d;
}

int Dag::data_dim() const {
  int d = 0;
  for (const auto& n : nodes_)
    if (n.role == NodeRole::data) d += n.dim;
  return d;
}

void Dag::require_task_shape() const {
  if (parameter_ids().empty()) throw StructuralError("task Dag has no parameter node");
  if (data_ids().empty()) throw StructuralError("task Dag has no data node");
}

bool Dag::same_structure(const Dag& other) const {
  if (nodes_ != other.nodes_) return false;
  std::set<Edge> a(edges_.begin(), edges_.end());
  std::set<Edge> b(other.edges_.begin(), other.edges_.end());
  return a == b;
}

nlohmann::json Dag::to_json() const {
  nlohmann::json doc;
  doc["nodes"] = nlohmann::json::array();
  for (const auto& n : nodes_)
    doc["nodes"].push_back({{"id", n.id}, {"role", role_name(n.role)}, {"dim", n.dim}});
  doc["edges"] = nlohmann::json::array();
  for (const auto& [from, to] : edges_) doc["edges"].push_back({from, to});
  return doc;
}

Dag Dag::from_json(const nlohmann::json& doc) {
  try {
    std::vector<Node> nodes;
    for (const auto& n : doc.at("nodes"))
      nodes.push_back({n.at("id").get<std::string>(), parse_role(n.at("role").get<std::string>()),
                       n.value("dim", 1)});
    std::vector<Edge> edges;
    for (const auto& e : doc.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw StructuralError("edge must be a [parent, child] pair");
      edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
    return Dag(std::move(nodes), std::move(edges));
  } catch (const nlohmann::json::exception& ex) {
    throw StructuralError(std::string("malformed Dag document: ") + ex.what());
  }
}

Dag invert_program(const Dag& prior) {
  std::vector<Edge> reversed;
  reversed.reserve(prior.edges().size());
  for (const auto& [from, to] : prior.edges()) reversed.emplace_back(to, from);
  return Dag(prior.nodes(), std::move(reversed));
}

TopologicalOrder topological_sort(const Dag& posterior) {
  const auto& nodes = posterior.nodes();
  const int n = static_cast<int>(nodes.size());
  auto is_param = [&](int i) { return nodes[i].role == NodeRole::parameter; };

  // Longest parameter-only path from a root. Nodes are visited in a global
  // topological order so parents are final before their children.
  std::vector<int> indegree(n);
  for (int i = 0; i < n; ++i) indegree[i] = static_cast<int>(posterior.parents(i).size());
  std::vector<int> depth(n, 0);
  std::queue<int> ready;
  for (int i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(i);
  while (!ready.empty()) {
    int u = ready.front();
    ready.pop();
    for (int c : posterior.children(u)) {
      if (is_param(u) && is_param(c)) depth[c] = std::max(depth[c], depth[u] + 1);
      if (--indegree[c] == 0) ready.push(c);
    }
  }

  std::vector<int> params;
  for (int i = 0; i < n; ++i)
    if (is_param(i)) params.push_back(i);
  std::stable_sort(params.begin(), params.end(), [&](int a, int b) { return depth[a] < depth[b]; });

  TopologicalOrder out;
  for (int i : params) out.order.push_back(nodes[i].id);
  return out;
}

bool is_valid_order(const Dag& posterior, const TopologicalOrder& order) {
  auto params = posterior.parameter_ids();
  auto sorted = order.order;
  std::sort(params.begin(), params.end());
  std::sort(sorted.begin(), sorted.end());
  if (params != sorted) return false;
  std::vector<int> position(posterior.nodes().size(), -1);
  for (std::size_t k = 0; k < order.order.size(); ++k)
    position[posterior.index_of(order.order[k])] = static_cast<int>(k);
  for (const auto& [from, to] : posterior.edges()) {
    int a = position[posterior.index_of(from)];
    int b = position[posterior.index_of(to)];
    if (a >= 0 && b >= 0 && a >= b) return false;
  }
  return true;
}

std::vector<int> DependencyMask::target_dims() const {
  std::vector<int> dims;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (std::find(cond_targets.begin(), cond_targets.end(), nodes[k]) == cond_targets.end()) continue;
    for (int d = 0; d < node_dims[k]; ++d) dims.push_back(node_offsets[k] + d);
  }
  return dims;
}

DependencyMask dependency_mask(const Dag& posterior, const TopologicalOrder& order,
                               ConditioningScope scope) {
  if (!is_valid_order(posterior, order))
    throw StructuralError("order is not a valid topological order of the parameter nodes");

  DependencyMask mask;
  mask.nodes = order.order;
  const int m = static_cast<int>(order.order.size());
  std::vector<int> index(m);
  int offset = 0;
  for (int k = 0; k < m; ++k) {
    index[k] = posterior.index_of(order.order[k]);
    const int dim = posterior.nodes()[index[k]].dim;
    mask.node_dims.push_back(dim);
    mask.node_offsets.push_back(offset);
    for (int d = 0; d < dim; ++d) mask.dim_owner.push_back(k);
    offset += dim;
  }

  mask.node_mask = BoolMatrix::Constant(m, m, false);
  for (int i = 0; i < m; ++i) {
    mask.node_mask(i, i) = true;
    const auto& parents = posterior.parents(index[i]);
    for (int j = 0; j < i; ++j)
      if (std::find(parents.begin(), parents.end(), index[j]) != parents.end()) mask.node_mask(i, j) = true;
  }

  mask.dim_mask = BoolMatrix::Constant(offset, offset, false);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j <= i; ++j) {
      if (!mask.node_mask(i, j)) continue;
      for (int a = 0; a < mask.node_dims[i]; ++a)
        for (int b = 0; b < mask.node_dims[j]; ++b)
          // Within a node: dense lower-triangular in natural index order.
          if (i != j || b <= a) mask.dim_mask(mask.node_offsets[i] + a, mask.node_offsets[j] + b) = true;
    }
  }

  for (int k = 0; k < m; ++k) {
    bool target = scope == ConditioningScope::all_nodes;
    for (int p : posterior.parents(index[k]))
      if (posterior.nodes()[p].role == NodeRole::data) target = true;
    if (target) mask.cond_targets.push_back(order.order[k]);
  }
  return mask;
}

ParamLayout::ParamLayout(const Dag& dag, const TopologicalOrder& order) {
  std::vector<int> natural_offset(dag.nodes().size(), -1);
  int offset = 0;
  for (std::size_t i = 0; i < dag.nodes().size(); ++i) {
    if (dag.nodes()[i].role != NodeRole::parameter) continue;
    natural_offset[i] = offset;
    offset += dag.nodes()[i].dim;
  }
  for (const auto& id : order.order) {
    const int i = dag.index_of(id);
    for (int d = 0; d < dag.nodes()[i].dim; ++d) flow_to_natural_.push_back(natural_offset[i] + d);
  }
  if (static_cast<int>(flow_to_natural_.size()) != offset)
    throw StructuralError("order does not cover every parameter node");
}

Vector ParamLayout::to_flow(const Vector& natural) const {
  if (natural.size() != dim()) throw StructuralError("parameter vector has wrong dimension");
  Vector out(dim());
  for (int k = 0; k < dim(); ++k) out[k] = natural[flow_to_natural_[k]];
  return out;
}

Vector ParamLayout::to_natural(const Vector& flow) const {
  if (flow.size() != dim()) throw StructuralError("parameter vector has wrong dimension");
  Vector out(dim());
  for (int k = 0; k < dim(); ++k) out[flow_to_natural_[k]] = flow[k];
  return out;
}

Matrix ParamLayout::rows_to_flow(const Matrix& natural) const {
  if (natural.rows() != dim()) throw StructuralError("parameter matrix has wrong row count");
  Matrix out(dim(), natural.cols());
  for (int k = 0; k < dim(); ++k) out.row(k) = natural.row(flow_to_natural_[k]);
  return out;
}

Matrix ParamLayout::rows_to_natural(const Matrix& flow) const {
  if (flow.rows() != dim()) throw StructuralError("parameter matrix has wrong row count");
  Matrix out(dim(), flow.cols());
  for (int k = 0; k < dim(); ++k) out.row(flow_to_natural_[k]) = flow.row(k);
  return out;
}

}  // namespace cpe
