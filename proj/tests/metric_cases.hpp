#pragma once

#include <string>
#include <vector>

namespace ccnn::testing {

// Reference values from an exact rational two-way ANOVA.
struct MetricCase {
  std::string name;
  std::vector<double> a;
  std::vector<double> b;
  double icc;
  double mae;
};

inline std::vector<MetricCase> metric_cases() {
  std::vector<MetricCase> c = {
      {"identity", {1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}, 1.0, 0.0},
      {"reversal", {1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}, -1.0, 2.4},
      {"shift", {1, 2, 3, 4, 5}, {3, 4, 5, 6, 7}, 1.0, 2.0},
      {"ones_twos", {1, 1, 1, 2}, {2, 2, 1, 2}, 0.3333333333333333, 0.5},
      {"mae_pair", {1, 3}, {2, 5}, 0.9230769230769231, 1.5},
      {"six_levels", {0, 1, 2, 3, 4, 5, 5, 4}, {0, 2, 2, 3, 3, 5, 4, 4}, 0.9296636085626911, 0.375},
      {"sparse_hits", {0, 0, 0, 0, 1, 0, 0, 3, 0, 0}, {0, 0, 1, 0, 1, 0, 0, 2, 0, 0}, 0.84375, 0.2},
      {"constant_pred", {0, 1, 2, 3}, {2, 2, 2, 2}, 0.0, 1.0},
      {"negative", {1, 2, 3, 4, 5, 6}, {2, 1, 4, 3, 6, 5}, 0.8285714285714286, 1.0},
      {"scaled", {1, 2, 3, 4}, {2, 4, 6, 8}, 0.8, 2.5},
      {"random_a", {3, 1, 4, 1, 5, 9, 2, 6, 5, 3}, {2, 7, 1, 8, 2, 8, 1, 8, 2, 8}, 0.10065359477124183, 3.2},
      {"random_b", {5, 0, 2, 4, 1, 3, 5, 2, 0, 1, 4, 3}, {4, 1, 2, 5, 1, 3, 4, 2, 1, 0, 4, 2}, 0.8882907133243607,
       0.5833333333333334},
      {"two_points", {0, 5}, {1, 3}, 0.6896551724137931, 1.5},
      {"near_perfect", {0, 1, 2, 3, 4, 5, 0, 1, 2, 3}, {0, 1, 2, 3, 4, 5, 0, 1, 2, 4}, 0.9828571428571429, 0.1},
      {"halves", {0.5, 1.5, 2.5}, {0.25, 1.75, 2.25}, 0.96, 0.25},
      {"decimals", {0.1, 0.7, 0.3, 0.9}, {0.2, 0.6, 0.5, 0.8}, 0.8851063829787233, 0.125},
      {"large_offset", {100, 101, 102, 103, 104}, {0, 1, 2, 3, 5}, 0.967741935483871, 99.8},
      {"anti_partial", {0, 1, 2, 3, 4, 5}, {3, 3, 2, 2, 1, 0}, -0.863013698630137, 2.3333333333333335},
      {"mostly_zero", {0, 0, 0, 0, 0, 0, 0, 1}, {0, 0, 0, 0, 0, 0, 1, 1}, 0.631578947368421, 0.125},
  };
  MetricCase lng{"long", {}, {}, 0.5428571428571428, 1.3333333333333333};
  for (int i = 0; i < 30; ++i) {
    lng.a.push_back(i % 6);
    lng.b.push_back((i * 5 + 2) % 6);
  }
  c.push_back(lng);
  return c;
}

}  // namespace ccnn::testing
