#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ccnn/ordinal.hpp"

namespace ccnn {

struct IccResult {
  double value = 0.0;
  // Set when the two-way mean squares sum to zero (e.g. both raters constant)
  // or fewer than two targets remain; value is then 0.
  bool degenerate = false;
  std::size_t count = 0;  // targets used
};

// ICC(3,1), two-way mixed, consistency, single rater, between two raters.
IccResult icc31(std::span<const double> a, std::span<const double> b);
// Pairs with a missing label on either side are dropped.
IccResult icc31(std::span<const Level> truth, std::span<const Level> pred);

// Throws ArgumentError when no pair remains.
double mean_absolute_error(std::span<const double> a, std::span<const double> b);
double mean_absolute_error(std::span<const Level> truth, std::span<const Level> pred);

struct NodeMetrics {
  std::string node;
  IccResult icc;
  double mae = 0.0;  // NaN when every pair has a missing side
};

struct EvalReport {
  std::string dataset;
  std::string decoder;
  std::vector<NodeMetrics> nodes;

  double average_icc() const;
  double average_mae() const;
};

// truth[i] / pred[i] hold the labels of instance i in node order.
EvalReport evaluate(const std::string& dataset, const std::string& decoder, const std::vector<std::string>& node_names,
                    const std::vector<std::vector<Level>>& truth, const std::vector<std::vector<Level>>& pred);

// CSV with one row per node and a final "average" row.
void write_eval_csv(const EvalReport& report, std::ostream& out);

}  // namespace ccnn
