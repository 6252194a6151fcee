#include "ccnn/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ccnn/errors.hpp"

namespace ccnn {

ModelGradient ModelGradient::zeros_like(const CrfModel& model) {
  ModelGradient g;
  g.encoder = model.encoder.zeros_like();
  for (const auto& u : model.unaries) g.unaries.emplace_back(u.raw().size(), 0.0);
  for (const auto& c : model.contexts) g.thetas.emplace_back(c.edges.size(), 0.0);
  return g;
}

void ModelGradient::scale(double factor) {
  for (auto b : encoder.blocks())
    for (auto& v : b) v *= factor;
  for (auto& u : unaries)
    for (auto& v : u) v *= factor;
  for (auto& t : thetas)
    for (auto& v : t) v *= factor;
}

void ModelGradient::add(const ModelGradient& other) {
  auto mine = encoder.blocks();
  const auto theirs = other.encoder.blocks();
  for (std::size_t b = 0; b < mine.size(); ++b)
    for (std::size_t i = 0; i < mine[b].size(); ++i) mine[b][i] += theirs[b][i];
  for (std::size_t q = 0; q < unaries.size(); ++q)
    for (std::size_t i = 0; i < unaries[q].size(); ++i) unaries[q][i] += other.unaries[q][i];
  for (std::size_t c = 0; c < thetas.size(); ++c)
    for (std::size_t i = 0; i < thetas[c].size(); ++i) thetas[c][i] += other.thetas[c][i];
}

std::vector<BatchItem> as_batch(std::span<const LabeledInstance> instances) {
  std::vector<BatchItem> b;
  b.reserve(instances.size());
  for (const auto& x : instances) b.push_back({&x, 1.0, nullptr});
  return b;
}

namespace {

void check_labels(const CrfModel& model, const CrfGraph& g, std::span<const Level> labels, bool require_all) {
  if (static_cast<int>(labels.size()) != g.size())
    throw ConfigError("instance has " + std::to_string(labels.size()) + " labels, context '" + g.context +
                      "' has " + std::to_string(g.size()) + " nodes");
  for (int i = 0; i < g.size(); ++i) {
    const Level l = labels[i];
    if (l == kMissing) {
      if (require_all) throw ArgumentError("configuration has a missing label");
      continue;
    }
    if (l < 0 || l >= model.nodes[g.nodes[i]].levels)
      throw ArgumentError("label " + std::to_string(l + 1) + " out of range for node '" +
                          model.nodes[g.nodes[i]].name + "'");
  }
}

}  // namespace

double score(const CrfModel& model, int context, std::span<const double> features, std::span<const Level> labels) {
  const CrfGraph& g = model.contexts.at(context);
  check_labels(model, g, labels, true);
  double s = 0.0;
  for (int i = 0; i < g.size(); ++i) s += unary_log_prob(features, model.unaries[g.nodes[i]], labels[i]);
  for (const auto& e : g.edges)
    s += pairwise_log_prob(features, model.unaries[g.nodes[e.r]], model.unaries[g.nodes[e.s]], e.theta,
                           labels[e.r], labels[e.s]);
  return s;
}

double energy(const CrfModel& model, int context, const ImageTensor& input, std::span<const Level> labels) {
  const auto f = forward(inference_input(model, input), model.encoder);
  return -score(model, context, f, labels);
}

double unary_regularizer(const CrfModel& model, int context) {
  double r = 0.0;
  for (int id : model.contexts.at(context).nodes) {
    double sq = 0.0;
    for (double v : model.unaries[id].raw()) sq += v * v;
    r += model.lambda_for(id) * sq;
  }
  return r;
}

double composite_nll(const CrfModel& model, int context, std::span<const BatchItem> batch, ModelGradient* grad,
                     GradientRequest request) {
  if (batch.empty()) throw ArgumentError("composite_nll needs a non-empty batch");
  const CrfGraph& g = model.contexts.at(context);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const bool want_encoder = grad && request.encoder && !model.encoder.is_passthrough();

  double data_term = 0.0;
  ForwardTrace trace;
  std::vector<double> df;
  for (const BatchItem& item : batch) {
    const LabeledInstance& inst = *item.instance;
    check_labels(model, g, inst.labels, false);
    FeatureVector computed;
    const FeatureVector* fp = item.features;
    if (!fp || want_encoder) {
      computed = forward(inference_input(model, inst.input), model.encoder, want_encoder ? &trace : nullptr);
      fp = &computed;
    }
    const auto& f = *fp;
    const double w = item.weight * inv_b;
    double ll = 0.0;
    if (!grad) {
      for (int i = 0; i < g.size(); ++i)
        if (inst.labels[i] != kMissing) ll += unary_log_prob(f, model.unaries[g.nodes[i]], inst.labels[i]);
      for (const auto& e : g.edges)
        if (inst.labels[e.r] != kMissing && inst.labels[e.s] != kMissing)
          ll += pairwise_log_prob(f, model.unaries[g.nodes[e.r]], model.unaries[g.nodes[e.s]], e.theta,
                                  inst.labels[e.r], inst.labels[e.s]);
      data_term -= w * ll;
      continue;
    }

    if (want_encoder) df.assign(f.size(), 0.0);
    for (int i = 0; i < g.size(); ++i) {
      if (inst.labels[i] == kMissing) continue;
      const int id = g.nodes[i];
      const auto ug = unary_gradients(f, model.unaries[id], inst.labels[i]);
      ll += ug.log_prob;
      if (request.unary)
        for (std::size_t k = 0; k < ug.raw.size(); ++k) grad->unaries[id][k] -= w * ug.raw[k];
      if (want_encoder)
        for (std::size_t k = 0; k < f.size(); ++k) df[k] -= w * ug.feature[k];
    }
    for (std::size_t ei = 0; ei < g.edges.size(); ++ei) {
      const auto& e = g.edges[ei];
      if (inst.labels[e.r] == kMissing || inst.labels[e.s] == kMissing) continue;
      const int ir = g.nodes[e.r], is = g.nodes[e.s];
      const auto pg = copula_gradients(f, model.unaries[ir], model.unaries[is], e.theta, inst.labels[e.r],
                                       inst.labels[e.s]);
      ll += pg.log_prob;
      if (request.pairwise) grad->thetas[context][ei] -= w * pg.theta;
      if (request.unary) {
        for (std::size_t k = 0; k < pg.raw_r.size(); ++k) grad->unaries[ir][k] -= w * pg.raw_r[k];
        for (std::size_t k = 0; k < pg.raw_s.size(); ++k) grad->unaries[is][k] -= w * pg.raw_s[k];
      }
      if (want_encoder)
        for (std::size_t k = 0; k < f.size(); ++k) df[k] -= w * pg.feature[k];
    }
    if (want_encoder) backward(model.encoder, trace, df, grad->encoder);
    data_term -= w * ll;
  }

  const double reg = unary_regularizer(model, context);
  if (grad && request.unary) {
    for (int id : g.nodes) {
      const double lam = model.lambda_for(id);
      const auto raw = model.unaries[id].raw();
      for (std::size_t k = 0; k < raw.size(); ++k) grad->unaries[id][k] += 2.0 * lam * raw[k];
    }
  }
  return reg + data_term;
}

double composite_nll(const CrfModel& model, int context, std::span<const LabeledInstance> batch,
                     ModelGradient* grad) {
  const auto items = as_batch(batch);
  return composite_nll(model, context, items, grad);
}

double exact_nll(const CrfModel& model, int context, std::span<const LabeledInstance> batch) {
  if (batch.empty()) throw ArgumentError("exact_nll needs a non-empty batch");
  const CrfGraph& g = model.contexts.at(context);
  double total = 0.0;
  for (const auto& inst : batch) {
    check_labels(model, g, inst.labels, true);
    const auto f = forward(inference_input(model, inst.input), model.encoder);
    const auto pot = build_potentials(model, context, f);
    const std::size_t count = pot.configuration_count();
    if (count > kEnumerationLimit)
      throw CapacityError("partition function needs " + std::to_string(count) + " configurations (limit " +
                          std::to_string(kEnumerationLimit) + ")");
    // log-sum-exp over all configurations in mixed-radix order
    std::vector<Level> y(g.size(), 0);
    std::vector<double> scores;
    scores.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
      scores.push_back(pot.score(y));
      for (int q = g.size() - 1; q >= 0; --q) {
        if (++y[q] < static_cast<Level>(pot.unary[q].size())) break;
        y[q] = 0;
      }
    }
    const double m = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - m);
    total -= pot.score(inst.labels) - (m + std::log(z));
  }
  return total / static_cast<double>(batch.size());
}

double multi_dataset_nll(const CrfModel& model, std::span<const ContextBatch> batches, ModelGradient* grad,
                         GradientRequest request) {
  double total = 0.0;
  for (const auto& b : batches) {
    if (b.context < 0 || static_cast<std::size_t>(b.context) >= model.contexts.size())
      throw ConfigError("batch refers to an unknown context");
    total += composite_nll(model, b.context, b.items, grad, request);
  }
  return total;
}

}  // namespace ccnn
