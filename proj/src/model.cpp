#include "ccnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ccnn/errors.hpp"

namespace ccnn {

int CrfGraph::local_index(int node_id) const {
  for (int i = 0; i < size(); ++i)
    if (nodes[i] == node_id) return i;
  return -1;
}

std::vector<std::pair<int, int>> fully_connected_edges(int count) {
  std::vector<std::pair<int, int>> e;
  for (int r = 0; r < count; ++r)
    for (int s = r + 1; s < count; ++s) e.emplace_back(r, s);
  return e;
}

int CrfModel::add_node(const std::string& name, int levels) {
  if (const int id = find_node(name); id >= 0) {
    if (nodes[id].levels != levels)
      throw ConfigError("node '" + name + "' has " + std::to_string(levels) + " levels here but " +
                        std::to_string(nodes[id].levels) + " elsewhere");
    return id;
  }
  nodes.push_back({name, levels});
  unaries.emplace_back(levels, feature_dim());
  node_lambda.emplace_back();
  return static_cast<int>(nodes.size()) - 1;
}

int CrfModel::find_node(const std::string& name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].name == name) return static_cast<int>(i);
  return -1;
}

int CrfModel::find_context(const std::string& name) const {
  for (std::size_t i = 0; i < contexts.size(); ++i)
    if (contexts[i].context == name) return static_cast<int>(i);
  return -1;
}

int CrfModel::add_context(const std::string& name, const std::vector<std::string>& node_names,
                          const std::vector<std::pair<int, int>>& edges, double theta) {
  if (find_context(name) >= 0) throw ConfigError("duplicate context '" + name + "'");
  CrfGraph g;
  g.context = name;
  for (const auto& n : node_names) {
    const int id = find_node(n);
    if (id < 0) throw ConfigError("context '" + name + "' references unknown node '" + n + "'");
    g.nodes.push_back(id);
  }
  for (const auto& [r, s] : edges) g.edges.push_back({std::min(r, s), std::max(r, s), theta});
  contexts.push_back(std::move(g));
  validate();
  return static_cast<int>(contexts.size()) - 1;
}

double CrfModel::lambda_for(int node) const {
  if (node >= 0 && static_cast<std::size_t>(node) < node_lambda.size() && node_lambda[node]) return *node_lambda[node];
  return lambda;
}

void CrfModel::validate() const {
  if (unaries.size() != nodes.size()) throw ConfigError("one unary block per node required");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  for (std::size_t q = 0; q < nodes.size(); ++q) {
    if (unaries[q].levels() != nodes[q].levels)
      throw ConfigError("unary of node '" + nodes[q].name + "' has the wrong level count");
    if (unaries[q].feature_dim() != feature_dim())
      throw ConfigError("unary of node '" + nodes[q].name + "' does not match the encoder feature_dim");
    for (double v : unaries[q].raw())
      if (!std::isfinite(v)) throw ConfigError("non-finite unary parameter for node '" + nodes[q].name + "'");
  }
  for (const auto& g : contexts) {
    for (int id : g.nodes)
      if (id < 0 || static_cast<std::size_t>(id) >= nodes.size())
        throw ConfigError("context '" + g.context + "' references a missing node");
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
      const auto& e = g.edges[i];
      if (e.r == e.s || e.r < 0 || e.s < 0 || e.r >= g.size() || e.s >= g.size())
        throw ConfigError("context '" + g.context + "' has an invalid edge");
      if (!std::isfinite(e.theta)) throw ConfigError("non-finite theta in context '" + g.context + "'");
      for (std::size_t j = 0; j < i; ++j)
        if (g.edges[j].r == e.r && g.edges[j].s == e.s)
          throw ConfigError("context '" + g.context + "' has a duplicate edge");
    }
  }
}

double LogPotentials::score(std::span<const Level> labels) const {
  double s = 0.0;
  for (int q = 0; q < size(); ++q) s += unary[q][labels[q]];
  for (const auto& p : pairs) s += p.at(labels[p.r], labels[p.s]);
  return s;
}

std::size_t LogPotentials::configuration_count() const {
  std::size_t n = 1;
  for (const auto& u : unary) {
    if (n > std::numeric_limits<std::size_t>::max() / u.size()) return std::numeric_limits<std::size_t>::max();
    n *= u.size();
  }
  return n;
}

ImageTensor inference_input(const CrfModel& model, const ImageTensor& input) {
  if (model.crop_fraction >= 1.0 || model.encoder.is_passthrough() || input.shape == model.encoder.input_shape())
    return input;
  return center_crop(input, model.crop_fraction);
}

LogPotentials build_potentials(const CrfModel& model, int context, std::span<const double> features) {
  const CrfGraph& g = model.contexts.at(context);
  LogPotentials pot;
  std::vector<std::vector<double>> cdfs;
  for (int id : g.nodes) {
    const auto& phi = model.unaries[id];
    auto probs = level_probs(features, phi);
    for (auto& p : probs) p = std::log(std::max(p, kProbFloor));
    pot.unary.push_back(std::move(probs));
    cdfs.push_back(marginal_cdf(features, phi));
  }
  for (const auto& e : g.edges) {
    const auto t = joint_table_from_cdfs(cdfs[e.r], cdfs[e.s], e.theta);
    LogPotentials::Pair p{e.r, e.s, t.rows, t.cols, t.probs};
    for (auto& v : p.table) v = std::log(std::max(v, kProbFloor));
    pot.pairs.push_back(std::move(p));
  }
  return pot;
}

}  // namespace ccnn
