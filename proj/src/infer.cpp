#include "ccnn/infer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "ccnn/errors.hpp"
#include "ccnn/objective.hpp"

namespace ccnn {

std::string to_string(DecodeMethod m) {
  switch (m) {
    case DecodeMethod::Exact: return "exact";
    case DecodeMethod::DualDecomposition: return "dd";
    case DecodeMethod::UnaryArgmax: return "unary";
  }
  return "?";
}

DecodeMethod parse_decode_method(const std::string& name) {
  if (name == "exact") return DecodeMethod::Exact;
  if (name == "dd") return DecodeMethod::DualDecomposition;
  if (name == "unary") return DecodeMethod::UnaryArgmax;
  throw ConfigError("unknown decoder '" + name + "' (expected exact, dd or unary)");
}

DecodeResult exact_map(const LogPotentials& pot) {
  const std::size_t count = pot.configuration_count();
  if (count > kEnumerationLimit)
    throw CapacityError("exact decoding needs " + std::to_string(count) + " configurations (limit " +
                        std::to_string(kEnumerationLimit) + ")");
  const int Q = pot.size();
  DecodeResult best{std::vector<Level>(Q, 0), -std::numeric_limits<double>::infinity(), DecodeMethod::Exact, true,
                    1};
  std::vector<Level> y(Q, 0);
  for (std::size_t n = 0; n < count; ++n) {
    const double s = pot.score(y);
    if (s > best.score) {
      best.score = s;
      best.labels = y;
    }
    for (int q = Q - 1; q >= 0; --q) {
      if (++y[q] < static_cast<Level>(pot.unary[q].size())) break;
      y[q] = 0;
    }
  }
  return best;
}

DecodeResult unary_argmax(const LogPotentials& pot) {
  DecodeResult r;
  r.method = DecodeMethod::UnaryArgmax;
  r.iterations = 1;
  for (const auto& u : pot.unary) r.labels.push_back(argmax_level(u));
  r.score = pot.score(r.labels);
  return r;
}

namespace {

// Coordinate ascent: re-optimize one node at a time given the rest.
void polish(const LogPotentials& pot, const std::vector<std::vector<int>>& incident, std::vector<Level>& y) {
  bool improved = true;
  for (int sweep = 0; improved && sweep < 50; ++sweep) {
    improved = false;
    for (int q = 0; q < pot.size(); ++q) {
      const int L = static_cast<int>(pot.unary[q].size());
      Level best_l = y[q];
      double best = -std::numeric_limits<double>::infinity();
      for (Level l = 0; l < L; ++l) {
        double s = pot.unary[q][l];
        for (int pi : incident[q]) {
          const auto& p = pot.pairs[pi];
          s += p.r == q ? p.at(l, y[p.s]) : p.at(y[p.r], l);
        }
        if (s > best + 1e-12) {
          best = s;
          best_l = l;
        }
      }
      if (best_l != y[q]) {
        y[q] = best_l;
        improved = true;
      }
    }
  }
}

}  // namespace

DecodeResult dd_map(const LogPotentials& pot, const DualDecompositionOptions& options) {
  const int Q = pot.size();
  const int E = static_cast<int>(pot.pairs.size());
  if (E == 0) {
    auto r = unary_argmax(pot);
    r.method = DecodeMethod::DualDecomposition;
    r.certificate = true;
    return r;
  }
  std::vector<std::vector<int>> incident(Q);
  for (int e = 0; e < E; ++e) {
    incident[pot.pairs[e].r].push_back(e);
    incident[pot.pairs[e].s].push_back(e);
  }
  // multipliers[e][0] for endpoint r, [1] for endpoint s, one entry per level
  std::vector<std::array<std::vector<double>, 2>> lambda(E);
  for (int e = 0; e < E; ++e) {
    lambda[e][0].assign(pot.unary[pot.pairs[e].r].size(), 0.0);
    lambda[e][1].assign(pot.unary[pot.pairs[e].s].size(), 0.0);
  }
  auto share = [&](int q, Level l) {
    return incident[q].empty() ? pot.unary[q][l] : pot.unary[q][l] / static_cast<double>(incident[q].size());
  };

  DecodeResult best;
  best.method = DecodeMethod::DualDecomposition;
  best.score = -std::numeric_limits<double>::infinity();
  best.certificate = false;

  std::vector<std::array<Level, 2>> choice(E);
  std::vector<Level> isolated(Q, 0);
  for (int q = 0; q < Q; ++q)
    if (incident[q].empty()) isolated[q] = argmax_level(pot.unary[q]);

  for (int t = 0; t < options.max_iterations; ++t) {
    best.iterations = t + 1;
    for (int e = 0; e < E; ++e) {
      const auto& p = pot.pairs[e];
      double m = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < p.rows; ++i) {
        const double ui = share(p.r, i) + lambda[e][0][i];
        for (int j = 0; j < p.cols; ++j) {
          const double v = p.at(i, j) + ui + share(p.s, j) + lambda[e][1][j];
          if (v > m) {
            m = v;
            choice[e] = {i, j};
          }
        }
      }
    }

    bool agree = true;
    std::vector<Level> y(Q);
    for (int q = 0; q < Q; ++q) {
      if (incident[q].empty()) {
        y[q] = isolated[q];
        continue;
      }
      // majority vote, ties to the smaller level
      std::vector<int> votes(pot.unary[q].size(), 0);
      Level first = -1;
      for (int e : incident[q]) {
        const Level l = choice[e][pot.pairs[e].r == q ? 0 : 1];
        if (first < 0) first = l;
        if (l != first) agree = false;
        ++votes[l];
      }
      y[q] = static_cast<Level>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }

    if (agree) {
      best.labels = y;
      best.score = pot.score(y);
      best.certificate = true;
      return best;
    }
    polish(pot, incident, y);
    if (const double s = pot.score(y); s > best.score) {
      best.score = s;
      best.labels = y;
    }

    const double step = options.initial_step / (1.0 + t);
    for (int q = 0; q < Q; ++q) {
      if (incident[q].size() < 2) continue;
      std::vector<double> mean(pot.unary[q].size(), 0.0);
      for (int e : incident[q]) mean[choice[e][pot.pairs[e].r == q ? 0 : 1]] += 1.0;
      for (auto& m : mean) m /= static_cast<double>(incident[q].size());
      for (int e : incident[q]) {
        const int side = pot.pairs[e].r == q ? 0 : 1;
        auto& lam = lambda[e][side];
        for (std::size_t l = 0; l < lam.size(); ++l) {
          const double x = static_cast<Level>(l) == choice[e][side] ? 1.0 : 0.0;
          lam[l] -= step * (x - mean[l]);
        }
      }
    }
  }
  return best;
}

DecodeResult decode(const LogPotentials& pot, DecodeMethod method, const DualDecompositionOptions& options) {
  switch (method) {
    case DecodeMethod::Exact: return exact_map(pot);
    case DecodeMethod::DualDecomposition: return dd_map(pot, options);
    case DecodeMethod::UnaryArgmax: return unary_argmax(pot);
  }
  throw ConfigError("unknown decoder");
}

DecodeResult exact_map(const CrfModel& model, int context, const ImageTensor& input) {
  return exact_map(build_potentials(model, context, forward(inference_input(model, input), model.encoder)));
}

DecodeResult dd_map(const CrfModel& model, int context, const ImageTensor& input,
                    const DualDecompositionOptions& options) {
  return dd_map(build_potentials(model, context, forward(inference_input(model, input), model.encoder)), options);
}

DecodeResult unary_argmax(const CrfModel& model, int context, const ImageTensor& input) {
  return unary_argmax(build_potentials(model, context, forward(inference_input(model, input), model.encoder)));
}

}  // namespace ccnn
