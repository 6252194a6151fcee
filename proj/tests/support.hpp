#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ccnn/copula.hpp"
#include "ccnn/model.hpp"

namespace ccnn::testing {

inline OrdinalUnaryParams random_unary(std::mt19937_64& rng, int levels, int dim, double beta_scale = 0.8) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> gap(0.3, 1.2);
  std::vector<double> psi{g(rng) * 0.5 - 0.5 * (levels - 2) * 0.7};
  for (int k = 1; k < levels - 1; ++k) psi.push_back(psi.back() + gap(rng));
  std::vector<double> beta(dim);
  for (auto& b : beta) b = beta_scale * g(rng);
  return OrdinalUnaryParams::from_natural(psi, beta, std::exp(0.2 * g(rng)));
}

// Passthrough-encoder model with one context "ctx" over nodes n0..n{Q-1}.
inline CrfModel random_model(std::mt19937_64& rng, const std::vector<int>& levels, int dim,
                             const std::vector<std::pair<int, int>>& edges, double theta_range = 4.0) {
  CrfModel m;
  m.encoder = EncoderParams::passthrough(dim);
  std::vector<std::string> names;
  for (std::size_t q = 0; q < levels.size(); ++q) {
    names.push_back("n" + std::to_string(q));
    const int id = m.add_node(names.back(), levels[q]);
    m.unaries[id] = random_unary(rng, levels[q], dim);
  }
  m.add_context("ctx", names, edges);
  std::uniform_real_distribution<double> th(0.3, theta_range);
  std::bernoulli_distribution sign(0.5);
  for (auto& e : m.contexts[0].edges) e.theta = sign(rng) ? th(rng) : -th(rng);
  return m;
}

inline std::vector<LabeledInstance> random_instances(std::mt19937_64& rng, const CrfModel& m, int context, int n,
                                                     double missing_rate = 0.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution missing(missing_rate);
  const auto& ctx = m.contexts[context];
  std::vector<LabeledInstance> out;
  for (int i = 0; i < n; ++i) {
    LabeledInstance inst;
    std::vector<double> f(m.feature_dim());
    for (auto& v : f) v = g(rng);
    inst.input = ImageTensor::from_features(f);
    for (int id : ctx.nodes) {
      std::uniform_int_distribution<int> lv(0, m.nodes[id].levels - 1);
      inst.labels.push_back(missing(rng) ? kMissing : lv(rng));
    }
    if (std::all_of(inst.labels.begin(), inst.labels.end(), [](Level l) { return l == kMissing; }))
      inst.labels[0] = 0;
    inst.subject = "s" + std::to_string(i % 5);
    inst.dataset = ctx.context;
    out.push_back(std::move(inst));
  }
  return out;
}

// True when every observed pair cell has probability above `floor`. Rectangle masses near
// the clamp lose most of their digits to cancellation, so finite differences there are noise.
inline bool well_conditioned(const CrfModel& m, int context, const LabeledInstance& inst, double floor = 1e-6) {
  const auto& g = m.contexts[context];
  const auto& f = inst.input.values;
  for (const auto& e : g.edges) {
    const Level a = inst.labels[e.r], b = inst.labels[e.s];
    if (a == kMissing || b == kMissing) continue;
    if (pairwise_log_prob(f, m.unaries[g.nodes[e.r]], m.unaries[g.nodes[e.s]], e.theta, a, b) < std::log(floor))
      return false;
  }
  return true;
}

inline std::vector<LabeledInstance> conditioned_instances(std::mt19937_64& rng, const CrfModel& m, int context, int n,
                                                          double missing_rate = 0.0) {
  std::vector<LabeledInstance> out;
  while (static_cast<int>(out.size()) < n)
    for (auto& inst : random_instances(rng, m, context, 1, missing_rate))
      if (well_conditioned(m, context, inst)) out.push_back(std::move(inst));
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("ccnn_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace ccnn::testing
