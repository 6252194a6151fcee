#include <chrono>
#include <cmath>
#include <random>

#include "doctest.h"

#include "ccnn/errors.hpp"
#include "ccnn/infer.hpp"
#include "ccnn/objective.hpp"
#include "support.hpp"

using namespace ccnn;
using testing::random_model;

namespace {

LogPotentials random_potentials(std::mt19937_64& rng, const std::vector<int>& levels, double theta_range) {
  const auto m = random_model(rng, levels, 2, fully_connected_edges(static_cast<int>(levels.size())), theta_range);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::vector<double> f{g(rng), g(rng)};
  return build_potentials(m, 0, f);
}

}  // namespace

TEST_CASE("edge-free model decodes to per-node argmax") {
  std::mt19937_64 rng(1);
  const auto m = random_model(rng, {3, 5, 4}, 2, {});
  const auto x = ImageTensor::from_features(std::vector<double>{0.4, -1.1});
  const auto pot = build_potentials(m, 0, x.values);
  const auto dd = dd_map(m, 0, x);
  const auto ex = exact_map(m, 0, x);
  const auto un = unary_argmax(m, 0, x);
  for (int q = 0; q < 3; ++q) CHECK(ex.labels[q] == argmax_level(level_probs(x.values, m.unaries[q])));
  CHECK(dd.labels == ex.labels);
  CHECK(un.labels == ex.labels);
  CHECK(dd.certificate);
  CHECK(dd.iterations == 1);
  CHECK(ex.score == doctest::Approx(pot.score(ex.labels)));
}

TEST_CASE("strong positive dependence overrides a weak unary preference") {
  CrfModel m;
  m.encoder = EncoderParams::passthrough(1);
  m.add_node("a", 2);
  m.add_node("b", 2);
  // node a slightly prefers level 2, node b prefers level 1
  m.unaries[0] = OrdinalUnaryParams::from_natural(std::vector<double>{-0.1}, std::vector<double>{0.0}, 1.0);
  m.unaries[1] = OrdinalUnaryParams::from_natural(std::vector<double>{0.3}, std::vector<double>{0.0}, 1.0);
  m.add_context("c", {"a", "b"}, {{0, 1}}, 30.0);
  const auto x = ImageTensor::from_features(std::vector<double>{0.0});
  const auto un = unary_argmax(m, 0, x);
  CHECK(un.labels == std::vector<Level>{1, 0});
  const auto ex = exact_map(m, 0, x);
  CHECK(ex.labels == std::vector<Level>{0, 0});
  const auto dd = dd_map(m, 0, x);
  CHECK(dd.labels == ex.labels);
  CHECK(dd.score == doctest::Approx(ex.score).epsilon(1e-12));
}

TEST_CASE("six nodes with six levels decode exactly within a second") {
  std::mt19937_64 rng(2);
  const auto pot = random_potentials(rng, std::vector<int>(6, 6), 6.0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto ex = exact_map(pot);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 1.0);
  CHECK(ex.labels.size() == 6);
  CHECK(ex.score == doctest::Approx(pot.score(ex.labels)));
}

TEST_CASE("independent edges leave the unary argmax optimal") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_model(rng, {3, 4, 3, 5}, 2, fully_connected_edges(4));
    for (auto& e : m.contexts[0].edges) e.theta = 0.0;
    std::normal_distribution<double> g(0.0, 1.0);
    const auto x = ImageTensor::from_features(std::vector<double>{g(rng), g(rng)});
    const auto dd = dd_map(m, 0, x);
    CHECK(dd.labels == unary_argmax(m, 0, x).labels);
    CHECK(dd.labels == exact_map(m, 0, x).labels);
  }
}

TEST_CASE("dual decomposition never beats the exact optimum") {
  std::mt19937_64 rng(4);
  int certified = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto pot = random_potentials(rng, {2 + trial % 4, 3, 4, 2 + trial % 3}, 10.0);
    const auto ex = exact_map(pot);
    const auto dd = dd_map(pot);
    CHECK(dd.score <= ex.score + 1e-9);
    CHECK(dd.score == doctest::Approx(pot.score(dd.labels)).epsilon(1e-12));
    if (dd.certificate) {
      ++certified;
      CHECK(dd.score == doctest::Approx(ex.score).epsilon(1e-9));
    }
  }
  CHECK(certified > 0);
}

TEST_CASE("ties resolve to the lowest level") {
  LogPotentials pot;
  pot.unary = {{std::log(0.5), std::log(0.5)}};
  CHECK(exact_map(pot).labels == std::vector<Level>{0});
  CHECK(unary_argmax(pot).labels == std::vector<Level>{0});
  CHECK(dd_map(pot).labels == std::vector<Level>{0});
}

TEST_CASE("adding a constant to a potential table does not change the decoding") {
  std::mt19937_64 rng(5);
  auto pot = random_potentials(rng, {3, 3, 4}, 8.0);
  const auto before = exact_map(pot);
  const auto dd_before = dd_map(pot);
  for (auto& v : pot.unary[1]) v += 3.7;
  for (auto& v : pot.pairs[0].table) v -= 12.0;
  CHECK(exact_map(pot).labels == before.labels);
  CHECK(dd_map(pot).labels == dd_before.labels);
}

TEST_CASE("decoder names") {
  CHECK(parse_decode_method("exact") == DecodeMethod::Exact);
  CHECK(parse_decode_method("dd") == DecodeMethod::DualDecomposition);
  CHECK(parse_decode_method("unary") == DecodeMethod::UnaryArgmax);
  CHECK(to_string(DecodeMethod::DualDecomposition) == "dd");
  CHECK_THROWS_AS(parse_decode_method("qp"), ConfigError);
}

TEST_CASE("exact decoding refuses oversized label spaces") {
  LogPotentials pot;
  pot.unary.assign(8, std::vector<double>(6, 0.0));
  CHECK_THROWS_AS(exact_map(pot), CapacityError);
  CHECK_NOTHROW(dd_map(pot));
  CHECK_NOTHROW(unary_argmax(pot));
}
