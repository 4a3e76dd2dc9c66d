#include "cpe/cpeflow.hpp"

#include <cmath>

#include "cpe/error.hpp"

namespace cpe {

namespace {

const char* diag_name(DiagTransform d) { return d == DiagTransform::exp ? "exp" : "identity"; }

DiagTransform parse_diag(const std::string& s) {
  if (s == "exp") return DiagTransform::exp;
  if (s == "identity") return DiagTransform::identity;
  throw ConfigError("unknown diagonal transform '" + s + "'");
}

const char* scope_name(ConditioningScope s) { return s == ConditioningScope::all_nodes ? "all_nodes" : "data_parents"; }

ConditioningScope parse_scope(const std::string& s) {
  if (s == "all_nodes") return ConditioningScope::all_nodes;
  if (s == "data_parents") return ConditioningScope::data_parents;
  throw ConfigError("unknown conditioning scope '" + s + "'");
}

}  // namespace

nlohmann::json CpeConfig::to_json() const {
  return {{"hidden_layers", stack.hidden_layers},
          {"width", stack.width},
          {"diag", diag_name(stack.diag)},
          {"low_rank", stack.low_rank},
          {"condition_all_layers", stack.condition_all_layers},
          {"fourier_features", embed.fourier_features},
          {"fourier_scale", embed.fourier_scale},
          {"time_width", embed.time_width},
          {"data_width", embed.data_width},
          {"scope", scope_name(scope)}};
}

CpeConfig CpeConfig::from_json(const nlohmann::json& doc) {
  CpeConfig c;
  try {
    c.stack.hidden_layers = doc.value("hidden_layers", c.stack.hidden_layers);
    c.stack.width = doc.value("width", c.stack.width);
    c.stack.diag = parse_diag(doc.value("diag", std::string(diag_name(c.stack.diag))));
    c.stack.low_rank = doc.value("low_rank", c.stack.low_rank);
    c.stack.condition_all_layers = doc.value("condition_all_layers", c.stack.condition_all_layers);
    c.embed.fourier_features = doc.value("fourier_features", c.embed.fourier_features);
    c.embed.fourier_scale = doc.value("fourier_scale", c.embed.fourier_scale);
    c.embed.time_width = doc.value("time_width", c.embed.time_width);
    c.embed.data_width = doc.value("data_width", c.embed.data_width);
    c.scope = parse_scope(doc.value("scope", std::string(scope_name(c.scope))));
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad architecture config: ") + ex.what());
  }
  return c;
}

FlowStructure FlowStructure::from_prior(const Dag& prior, ConditioningScope scope) {
  const Dag posterior = invert_program(prior);
  return from_prior(prior, topological_sort(posterior), scope);
}

FlowStructure FlowStructure::from_prior(const Dag& prior, const TopologicalOrder& order, ConditioningScope scope) {
  prior.require_task_shape();
  FlowStructure s;
  s.prior = prior;
  s.posterior = invert_program(prior);
  s.order = order;
  s.mask = dependency_mask(s.posterior, order, scope);
  s.layout = ParamLayout(prior, order);
  return s;
}

VectorFieldNet::VectorFieldNet(const FlowStructure& structure, const CpeConfig& config, std::uint64_t seed)
    : structure_(structure), config_(config) {
  Rng rng(seed);
  const int d_x = structure_.prior.data_dim();
  embedder_ = ConditionEmbedder(d_x, /*use_time=*/true, config_.embed, rng);
  stack_ = BlockStack("stack", structure_.mask, embedder_.output_dim(), config_.stack, rng);
  standardizer_ = Standardizer(structure_.mask.dim(), d_x);
}

VectorFieldNet::VectorFieldNet(const Dag& prior, const CpeConfig& config, std::uint64_t seed)
    : VectorFieldNet(FlowStructure::from_prior(prior, config.scope), config, seed) {}

Matrix VectorFieldNet::forward(const RowVector& t, const Matrix& theta, const Matrix& x, Cache* cache) const {
  if (theta.rows() != theta_dim())
    throw StructuralError("theta has " + std::to_string(theta.rows()) + " rows, expected " +
                          std::to_string(theta_dim()));
  if (theta.cols() != x.cols()) throw StructuralError("theta and x batch sizes differ");
  ConditionEmbedder::Cache local_embed;
  const Matrix c = embedder_.forward(&t, x, cache ? &cache->embed : &local_embed);
  Matrix lambda = stack_.forward(theta, c, cache ? &cache->stack : nullptr);
  Matrix v = gate_.combine(theta, lambda);
  if (cache) {
    cache->theta = theta;
    cache->lambda = std::move(lambda);
  }
  return v;
}

void VectorFieldNet::backward(const Cache& cache, const RowVector& /*t*/, const Matrix& x, const Matrix& dv) {
  gate_.backward(cache.theta, cache.lambda, dv);
  const double g = gate_.gamma();
  const auto grad = stack_.backward(cache.stack, cache.embed.c, (1.0 - g) * dv);
  embedder_.backward(cache.embed, x, grad.dc);
}

ParameterList VectorFieldNet::parameters() {
  ParameterList out;
  embedder_.collect(out);
  stack_.collect(out);
  gate_.collect(out);
  standardizer_.collect(out);
  return out;
}

Vector vector_field(const VectorFieldNet& net, double t, const Vector& theta, const Vector& x) {
  if (!std::isfinite(t) || !theta.allFinite() || !x.allFinite()) throw NumericError("vector_field: non-finite input");
  RowVector tt(1);
  tt(0) = t;
  Vector v = net.forward(tt, theta, x).col(0);
  if (!v.allFinite()) throw NumericError("vector_field: non-finite output");
  return v;
}

BoolMatrix jacobian_pattern(const VectorFieldNet& net, double t, const Vector& theta, const Vector& x,
                            double threshold, double step) {
  const Eigen::Index d = theta.size();
  // All perturbed points in one batch: columns 2j and 2j+1 are theta -/+ step e_j.
  Matrix points = theta.replicate(1, 2 * d);
  for (Eigen::Index j = 0; j < d; ++j) {
    points(j, 2 * j) -= step;
    points(j, 2 * j + 1) += step;
  }
  const RowVector tt = RowVector::Constant(2 * d, t);
  const Matrix v = net.forward(tt, points, x.replicate(1, 2 * d));
  BoolMatrix pattern(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const Vector column = (v.col(2 * j + 1) - v.col(2 * j)) / (2.0 * step);
    for (Eigen::Index i = 0; i < d; ++i) pattern(i, j) = std::abs(column[i]) > threshold;
  }
  return pattern;
}

Vector interpolate(const Vector& theta0, const Vector& theta1, double t) {
  if (theta0.size() != theta1.size()) throw StructuralError("interpolate: length mismatch");
  return t * theta1 + (1.0 - t) * theta0;
}

Matrix interpolate(const Matrix& theta0, const Matrix& theta1, const RowVector& t) {
  if (theta0.rows() != theta1.rows() || theta0.cols() != theta1.cols() || t.size() != theta0.cols())
    throw StructuralError("interpolate: shape mismatch");
  return (theta1.array().rowwise() * t.array() + theta0.array().rowwise() * (1.0 - t.array())).matrix();
}

}  // namespace cpe
