#include "ccnn/metrics.hpp"

#include <cmath>
#include <ostream>

#include "ccnn/errors.hpp"

namespace ccnn {

IccResult icc31(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("icc31: rater vectors differ in length");
  const std::size_t n = a.size();
  IccResult r;
  r.count = n;
  // fewer than two targets carry no between-target information
  if (n < 2) {
    r.degenerate = true;
    return r;
  }
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  const double grand = 0.5 * (ma + mb);
  double ss_rows = 0.0, ss_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double row = 0.5 * (a[i] + b[i]);
    ss_rows += (row - grand) * (row - grand);
    const double ea = a[i] - row - ma + grand;
    const double eb = b[i] - row - mb + grand;
    ss_err += ea * ea + eb * eb;
  }
  const double bms = 2.0 * ss_rows / static_cast<double>(n - 1);
  const double ems = ss_err / static_cast<double>(n - 1);
  const double denom = bms + ems;
  if (!(denom > 1e-300)) {
    r.degenerate = true;
    return r;
  }
  r.value = (bms - ems) / denom;
  return r;
}

namespace {

void paired_levels(std::span<const Level> truth, std::span<const Level> pred, std::vector<double>& a,
                   std::vector<double>& b) {
  if (truth.size() != pred.size()) throw ArgumentError("label vectors differ in length");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kMissing || pred[i] == kMissing) continue;
    a.push_back(truth[i]);
    b.push_back(pred[i]);
  }
}

}  // namespace

IccResult icc31(std::span<const Level> truth, std::span<const Level> pred) {
  std::vector<double> a, b;
  paired_levels(truth, pred, a, b);
  return icc31(a, b);
}

double mean_absolute_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("mae: vectors differ in length");
  if (a.empty()) throw ArgumentError("mae: no non-missing pairs");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double mean_absolute_error(std::span<const Level> truth, std::span<const Level> pred) {
  std::vector<double> a, b;
  paired_levels(truth, pred, a, b);
  return mean_absolute_error(a, b);
}

double EvalReport::average_icc() const {
  if (nodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& n : nodes) s += n.icc.value;
  return s / static_cast<double>(nodes.size());
}

double EvalReport::average_mae() const {
  if (nodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& n : nodes) s += n.mae;
  return s / static_cast<double>(nodes.size());
}

EvalReport evaluate(const std::string& dataset, const std::string& decoder, const std::vector<std::string>& node_names,
                    const std::vector<std::vector<Level>>& truth, const std::vector<std::vector<Level>>& pred) {
  if (truth.size() != pred.size()) throw ArgumentError("evaluate: truth and prediction counts differ");
  EvalReport rep{dataset, decoder, {}};
  for (std::size_t q = 0; q < node_names.size(); ++q) {
    std::vector<Level> t, p;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i].size() != node_names.size() || pred[i].size() != node_names.size())
        throw ArgumentError("evaluate: label vector length differs from node count");
      t.push_back(truth[i][q]);
      p.push_back(pred[i][q]);
    }
    const auto icc = icc31(t, p);
    rep.nodes.push_back({node_names[q], icc, icc.count > 0 ? mean_absolute_error(t, p) : std::nan("")});
  }
  return rep;
}

void write_eval_csv(const EvalReport& report, std::ostream& out) {
  out << "# format_version=1\n";
  out << "dataset,decoder,node,icc,mae,count,degenerate\n";
  const auto old = out.precision(10);
  for (const auto& n : report.nodes)
    out << report.dataset << ',' << report.decoder << ',' << n.node << ',' << n.icc.value << ',' << n.mae << ','
        << n.icc.count << ',' << (n.icc.degenerate ? 1 : 0) << '\n';
  out << report.dataset << ',' << report.decoder << ",average," << report.average_icc() << ','
      << report.average_mae() << ",,\n";
  out.precision(old);
}

}  // namespace ccnn
