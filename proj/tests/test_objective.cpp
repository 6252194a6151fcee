#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"

#include "ccnn/errors.hpp"
#include "ccnn/objective.hpp"
#include "support.hpp"

using namespace ccnn;
using testing::random_instances;
using testing::random_model;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

double ordinal_nll(const CrfModel& m, const LabeledInstance& inst) {
  double s = 0.0;
  const auto& g = m.contexts[0];
  for (int q = 0; q < g.size(); ++q)
    if (inst.labels[q] != kMissing) s -= unary_log_prob(inst.input.values, m.unaries[g.nodes[q]], inst.labels[q]);
  return s;
}

}  // namespace

TEST_CASE("energy without edges is the negated unary log-likelihood") {
  std::mt19937_64 rng(1);
  const auto m = random_model(rng, {3, 4, 2}, 2, {});
  const auto inst = random_instances(rng, m, 0, 1).front();
  CHECK(energy(m, 0, inst.input, inst.labels) == doctest::Approx(ordinal_nll(m, inst)).epsilon(1e-14));
  std::vector<Level> partial = inst.labels;
  partial[1] = kMissing;
  CHECK_THROWS_AS(energy(m, 0, inst.input, partial), ArgumentError);
}

TEST_CASE("single symmetric binary node") {
  CrfModel m;
  m.encoder = EncoderParams::passthrough(1);
  m.add_node("a", 2);
  m.unaries[0] = OrdinalUnaryParams::from_natural(std::vector<double>{0.0}, std::vector<double>{0.0}, 1.0);
  m.add_context("c", {"a"}, {});
  const auto x = ImageTensor::from_features(std::vector<double>{0.7});
  CHECK(energy(m, 0, x, std::vector<Level>{0}) == doctest::Approx(-std::log(0.5)).epsilon(1e-15));
  CHECK(energy(m, 0, x, std::vector<Level>{1}) == doctest::Approx(-std::log(0.5)).epsilon(1e-15));
}

TEST_CASE("independent edge counts each endpoint twice") {
  std::mt19937_64 rng(2);
  auto m = random_model(rng, {3, 3}, 2, {{0, 1}});
  m.contexts[0].edges[0].theta = 0.0;
  const auto x = ImageTensor::from_features(std::vector<double>{0.3, -0.8});
  const std::vector<Level> y1{0, 2}, y2{1, 1};
  auto unary_score = [&](const std::vector<Level>& y) {
    return unary_log_prob(x.values, m.unaries[0], y[0]) + unary_log_prob(x.values, m.unaries[1], y[1]);
  };
  const double de = energy(m, 0, x, y1) - energy(m, 0, x, y2);
  CHECK(de == doctest::Approx(-2.0 * (unary_score(y1) - unary_score(y2))).epsilon(1e-12));
}

TEST_CASE("composite objective reduces to ordinal regression") {
  std::mt19937_64 rng(3);
  auto m = random_model(rng, {4}, 3, {});
  m.lambda = 0.0;
  const auto batch = random_instances(rng, m, 0, 1);
  CHECK(composite_nll(m, 0, std::span<const LabeledInstance>(batch)) == doctest::Approx(ordinal_nll(m, batch[0])));
  CHECK_THROWS_AS(composite_nll(m, 0, std::span<const LabeledInstance>{}), ArgumentError);
}

TEST_CASE("regularizer is linear in lambda and touches only unaries") {
  std::mt19937_64 rng(4);
  auto m = random_model(rng, {3, 3, 4}, 2, fully_connected_edges(3));
  const auto batch = random_instances(rng, m, 0, 6);
  m.lambda = 0.01;
  ModelGradient g1 = ModelGradient::zeros_like(m);
  const double l1 = composite_nll(m, 0, std::span<const LabeledInstance>(batch), &g1);
  m.lambda = 0.02;
  ModelGradient g2 = ModelGradient::zeros_like(m);
  const double l2 = composite_nll(m, 0, std::span<const LabeledInstance>(batch), &g2);
  double sq = 0.0;
  for (const auto& u : m.unaries)
    for (double r : u.raw()) sq += r * r;
  CHECK(l2 - l1 == doctest::Approx(0.01 * sq).epsilon(1e-12));
  CHECK(g1.thetas == g2.thetas);
  for (std::size_t q = 0; q < m.unaries.size(); ++q)
    for (std::size_t i = 0; i < m.unaries[q].raw().size(); ++i)
      CHECK(g2.unaries[q][i] - g1.unaries[q][i] == doctest::Approx(2 * 0.01 * m.unaries[q].raw()[i]).epsilon(1e-9).scale(1e-12));
}

TEST_CASE("per-node lambda overrides the global value") {
  std::mt19937_64 rng(5);
  auto m = random_model(rng, {3, 3}, 1, {});
  m.lambda = 0.0;
  m.node_lambda = {0.5, std::nullopt};
  double sq = 0.0;
  for (double r : m.unaries[0].raw()) sq += r * r;
  CHECK(unary_regularizer(m, 0) == doctest::Approx(0.5 * sq));
}

TEST_CASE("independent edges double-count their endpoint unaries") {
  std::mt19937_64 rng(6);
  auto m = random_model(rng, {3, 4, 3}, 2, {{0, 1}, {1, 2}});
  for (auto& e : m.contexts[0].edges) e.theta = 0.0;
  m.lambda = 0.0;
  const auto batch = random_instances(rng, m, 0, 10);
  double expected = 0.0;
  for (const auto& inst : batch) {
    const auto& f = inst.input.values;
    const double u0 = unary_log_prob(f, m.unaries[0], inst.labels[0]);
    const double u1 = unary_log_prob(f, m.unaries[1], inst.labels[1]);
    const double u2 = unary_log_prob(f, m.unaries[2], inst.labels[2]);
    expected -= (u0 + u1 + u2) + (u0 + u1) + (u1 + u2);
  }
  expected /= 10;
  CHECK(composite_nll(m, 0, std::span<const LabeledInstance>(batch)) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("missing labels skip their terms and stay finite") {
  std::mt19937_64 rng(7);
  auto m = random_model(rng, {3, 3, 3}, 2, fully_connected_edges(3));
  const auto batch = random_instances(rng, m, 0, 40, 0.5);
  ModelGradient g = ModelGradient::zeros_like(m);
  const double l = composite_nll(m, 0, std::span<const LabeledInstance>(batch), &g);
  CHECK(std::isfinite(l));
  for (const auto& u : g.unaries)
    for (double v : u) CHECK(std::isfinite(v));
  // one instance with only node 0 labelled: no pair terms at all
  auto single = batch[0];
  single.labels = {1, kMissing, kMissing};
  m.lambda = 0.0;
  CHECK(composite_nll(m, 0, std::span<const LabeledInstance>(&single, 1)) ==
        doctest::Approx(-unary_log_prob(single.input.values, m.unaries[0], 1)));
}

TEST_CASE("composite gradient matches central differences") {
  std::mt19937_64 rng(8);
  auto m = random_model(rng, {3, 3, 3}, 3, fully_connected_edges(3));
  m.lambda = 1e-2;
  const auto batch = testing::conditioned_instances(rng, m, 0, 8, 0.1);
  ModelGradient g = ModelGradient::zeros_like(m);
  composite_nll(m, 0, std::span<const LabeledInstance>(batch), &g);
  auto loss = [&] { return composite_nll(m, 0, std::span<const LabeledInstance>(batch)); };
  const double eps = 1e-6;
  for (std::size_t q = 0; q < m.unaries.size(); ++q)
    for (std::size_t i = 0; i < m.unaries[q].raw().size(); ++i) {
      double& x = m.unaries[q].raw()[i];
      const double o = x;
      x = o + eps;
      const double up = loss();
      x = o - eps;
      const double dn = loss();
      x = o;
      CHECK(rel(g.unaries[q][i], (up - dn) / (2 * eps)) < 1e-5);
    }
  for (std::size_t e = 0; e < m.contexts[0].edges.size(); ++e) {
    double& x = m.contexts[0].edges[e].theta;
    const double o = x;
    x = o + eps;
    const double up = loss();
    x = o - eps;
    const double dn = loss();
    x = o;
    CHECK(rel(g.thetas[0][e], (up - dn) / (2 * eps)) < 1e-5);
  }
}

TEST_CASE("exact likelihood by enumeration") {
  std::mt19937_64 rng(9);
  SUBCASE("single node equals the composite objective without regularization") {
    auto m = random_model(rng, {5}, 2, {});
    m.lambda = 0.0;
    const auto batch = random_instances(rng, m, 0, 7);
    CHECK(exact_nll(m, 0, batch) == doctest::Approx(composite_nll(m, 0, std::span<const LabeledInstance>(batch))).epsilon(1e-12));
  }
  SUBCASE("two six-level nodes with one edge") {
    auto m = random_model(rng, {6, 6}, 2, {{0, 1}});
    const auto batch = random_instances(rng, m, 0, 5);
    const double v = exact_nll(m, 0, batch);
    CHECK(std::isfinite(v));
    CHECK(v > 0);
    // Z sums exp(score) over all 36 configurations
    const auto& f = batch[0].input.values;
    double z = 0.0;
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b) z += std::exp(score(m, 0, f, std::vector<Level>{a, b}));
    const double single = exact_nll(m, 0, std::span<const LabeledInstance>(batch.data(), 1));
    CHECK(single == doctest::Approx(-(score(m, 0, f, batch[0].labels) - std::log(z))).epsilon(1e-12));
  }
  SUBCASE("too many configurations") {
    auto m = random_model(rng, std::vector<int>(8, 6), 1, {});
    const auto batch = random_instances(rng, m, 0, 1);
    CHECK_THROWS_AS(exact_nll(m, 0, batch), CapacityError);
  }
}

TEST_CASE("exact and composite objectives rank a threshold sweep alike on an independent chain") {
  std::mt19937_64 rng(10);
  auto truth = random_model(rng, {3, 3, 3}, 1, {{0, 1}, {1, 2}});
  for (auto& e : truth.contexts[0].edges) e.theta = 0.0;
  truth.lambda = 0.0;
  // labels drawn from the true marginals
  std::vector<LabeledInstance> batch;
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 400; ++i) {
    LabeledInstance inst;
    const std::vector<double> f{g(rng)};
    inst.input = ImageTensor::from_features(f);
    for (int q = 0; q < 3; ++q) {
      const auto p = level_probs(f, truth.unaries[q]);
      double r = u(rng);
      Level l = 0;
      while (l < 2 && r > p[l]) r -= p[l++];
      inst.labels.push_back(l);
    }
    batch.push_back(inst);
  }
  std::vector<double> exact, composite;
  for (double shift : {-1.2, -0.6, -0.2, 0.0, 0.4, 0.9}) {
    CrfModel m = truth;
    for (auto& phi : m.unaries) {
      auto t = phi.thresholds();
      for (auto& v : t) v += shift;
      phi.set_thresholds(t);
    }
    exact.push_back(exact_nll(m, 0, batch));
    composite.push_back(composite_nll(m, 0, std::span<const LabeledInstance>(batch)));
  }
  std::vector<int> re(exact.size()), rc(exact.size());
  std::iota(re.begin(), re.end(), 0);
  std::iota(rc.begin(), rc.end(), 0);
  std::sort(re.begin(), re.end(), [&](int a, int b) { return exact[a] < exact[b]; });
  std::sort(rc.begin(), rc.end(), [&](int a, int b) { return composite[a] < composite[b]; });
  CHECK(re == rc);
}

TEST_CASE("multi-dataset objective") {
  std::mt19937_64 rng(11);
  CrfModel m;
  m.encoder = EncoderParams::passthrough(2);
  for (const char* n : {"a", "b", "c", "d"}) {
    const int id = m.add_node(n, 3);
    m.unaries[id] = testing::random_unary(rng, 3, 2);
  }
  m.add_context("one", {"a", "b"}, {{0, 1}}, 2.0);
  m.add_context("two", {"b", "c", "d"}, {{0, 1}, {1, 2}}, -1.5);
  m.lambda = 1e-3;
  auto make = [&](int ctx, int n) {
    CrfModel tmp = m;
    std::vector<LabeledInstance> v;
    for (auto inst : testing::conditioned_instances(rng, tmp, ctx, n)) v.push_back(inst);
    return v;
  };
  const auto d1 = make(0, 6), d2 = make(1, 5);
  for (const auto& inst : d1) REQUIRE(testing::well_conditioned(m, 0, inst));
  for (const auto& inst : d2) REQUIRE(testing::well_conditioned(m, 1, inst));
  const auto b1 = as_batch(d1), b2 = as_batch(d2);

  SUBCASE("one dataset reduces to the composite objective") {
    const ContextBatch cb[] = {{0, b1}};
    CHECK(multi_dataset_nll(m, cb) == composite_nll(m, 0, b1));
  }
  SUBCASE("value and gradient are sums over datasets") {
    const ContextBatch cb[] = {{0, b1}, {1, b2}};
    ModelGradient g = ModelGradient::zeros_like(m), g1 = g, g2 = g;
    const double total = multi_dataset_nll(m, cb, &g);
    CHECK(total == doctest::Approx(composite_nll(m, 0, b1, &g1) + composite_nll(m, 1, b2, &g2)).epsilon(1e-14));
    const int b = m.find_node("b");
    for (std::size_t i = 0; i < g.unaries[b].size(); ++i) {
      CHECK(g.unaries[b][i] == doctest::Approx(g1.unaries[b][i] + g2.unaries[b][i]).epsilon(1e-12));
      double& x = m.unaries[b].raw()[i];
      const double o = x, eps = 1e-6;
      x = o + eps;
      const double up = multi_dataset_nll(m, cb);
      x = o - eps;
      const double dn = multi_dataset_nll(m, cb);
      x = o;
      CHECK(rel(g.unaries[b][i], (up - dn) / (2 * eps)) < 1e-5);
    }
    // node a lives only in the first dataset
    CHECK(g2.unaries[m.find_node("a")] == std::vector<double>(g2.unaries[0].size(), 0.0));
  }
  SUBCASE("shared node probabilities do not depend on the context") {
    const std::vector<double> f{0.2, -0.4};
    const auto p1 = build_potentials(m, 0, f), p2 = build_potentials(m, 1, f);
    CHECK(p1.unary[1] == p2.unary[0]);
  }
  SUBCASE("level count conflicts are configuration errors") {
    CHECK_THROWS_AS(m.add_node("b", 4), ConfigError);
  }
}
