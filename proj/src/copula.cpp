#include "ccnn/copula.hpp"

#include <algorithm>
#include <cmath>

#include "ccnn/errors.hpp"
#include "ccnn/normal.hpp"

namespace ccnn {
namespace {

// Below this |theta| the derivative in theta is taken from the Taylor
// expansion of C around theta = 0; the closed form cancels there.
constexpr double kSeriesTheta = 1e-2;
// Beyond this |theta| negative parameters are evaluated by reflection.
constexpr double kReflectTheta = 50.0;
// Forward step used for dC/dtheta inside the independence band.
constexpr double kIndependenceStep = 1e-4;

double log_add_exp(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

double sigmoid_of_diff(double a, double b) {
  // 1 / (1 + exp(b - a)), safe for infinite arguments
  if (a == -INFINITY && b == -INFINITY) return 0.5;
  if (b == -INFINITY) return 1.0;
  if (a == -INFINITY) return 0.0;
  const double d = b - a;
  if (d > 0) {
    const double e = std::exp(-d);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(d));
}

// log(1 - exp(-x)) for x > 0
double log1mexp(double x) { return x > 0.6931 ? std::log1p(-std::exp(-x)) : std::log(-std::expm1(-x)); }

// Interior point, theta > 0. Returns value, du, dv, dtheta.
CopulaPartials frank_positive(double u, double v, double theta, bool want_partials) {
  CopulaPartials out;
  // g = 1 + ab/c with a = e^{-theta u} - 1 etc.; C = -log(g)/theta
  const double a = std::expm1(-theta * u), b = std::expm1(-theta * v), c = std::expm1(-theta);
  const double ratio = a * b / c;  // in (-1, 0]
  double log_g;
  // log(p(1-q)) and log(q - r), with p = e^{-theta u}, q = e^{-theta v}, r = e^{-theta}
  const double A = -theta * u + log1mexp(theta * v);
  const double B = -theta * v + log1mexp(theta * (1.0 - v));
  const double logD = log1mexp(theta);
  if (ratio > -0.5) log_g = std::log1p(ratio);
  else log_g = log_add_exp(A, B) - logD;
  out.value = -log_g / theta;
  if (!want_partials) return out;

  out.du = sigmoid_of_diff(A, B);
  const double A2 = -theta * v + log1mexp(theta * u);
  const double B2 = -theta * u + log1mexp(theta * (1.0 - u));
  out.dv = sigmoid_of_diff(A2, B2);

  if (theta < kSeriesTheta) return out;  // dtheta filled by the caller
  const double dA = -u + v / std::expm1(theta * v);
  const double dB = -v + (1.0 - v) / std::expm1(theta * (1.0 - v));
  const double dlogD = 1.0 / std::expm1(theta);
  const double dlog_g = out.du * dA + (1.0 - out.du) * dB - dlogD;
  out.dtheta = log_g / (theta * theta) - dlog_g / theta;
  return out;
}

// Interior point, theta = -t with 0 < t <= kReflectTheta.
CopulaPartials frank_negative(double u, double v, double t, bool want_partials) {
  CopulaPartials out;
  const double a = std::expm1(t * u), b = std::expm1(t * v), c = std::expm1(t);
  const double log_g = std::log1p(a * b / c);
  out.value = log_g / t;
  if (!want_partials) return out;
  const double denom = c + a * b;
  out.du = std::exp(t * u) * b / denom;
  out.dv = std::exp(t * v) * a / denom;
  if (t < kSeriesTheta) return out;
  const double dnum = std::exp(t) + u * std::exp(t * u) * b + v * std::exp(t * v) * a;
  const double dlog_g = dnum / denom - std::exp(t) / c;
  const double dC_dt = -log_g / (t * t) + dlog_g / t;
  out.dtheta = -dC_dt;
  return out;
}

// d C / d theta from the expansion around theta = 0.
double series_dtheta(double u, double v, double theta) {
  const double uu = u * (u - 1.0), vv = v * (v - 1.0);
  const double c1 = uu * vv / 2.0;
  const double c2 = uu * (2 * u - 1) * vv * (2 * v - 1) / 12.0;
  const double c3 = uu * vv *
                    (6 * u * u * v * v - 6 * u * u * v + u * u - 6 * u * v * v + 6 * u * v - u + v * v - v) /
                    24.0;
  const double c4 = uu * (2 * u - 1) * vv * (2 * v - 1) *
                    (36 * u * u * v * v - 36 * u * u * v + 3 * u * u - 36 * u * v * v + 36 * u * v - 3 * u +
                     3 * v * v - 3 * v - 1) /
                    720.0;
  return c1 + theta * (2 * c2 + theta * (3 * c3 + theta * 4 * c4));
}

CopulaPartials frank_interior(double u, double v, double theta, bool want_partials) {
  if (std::abs(theta) < kIndependenceTheta) {
    CopulaPartials out{u * v, v, u, 0.0};
    if (want_partials) {
      const double ahead = frank_interior(u, v, kIndependenceStep, false).value;
      out.dtheta = (ahead - u * v) / kIndependenceStep;
    }
    return out;
  }
  CopulaPartials out;
  if (theta > 0) {
    out = frank_positive(u, v, theta, want_partials);
  } else if (-theta <= kReflectTheta) {
    out = frank_negative(u, v, -theta, want_partials);
  } else {
    // C_{-t}(u, v) = u - C_t(u, 1 - v)
    const auto r = frank_positive(u, 1.0 - v, -theta, want_partials);
    out.value = u - r.value;
    out.du = 1.0 - r.du;
    out.dv = r.dv;
    out.dtheta = r.dtheta;
  }
  if (want_partials && std::abs(theta) < kSeriesTheta) out.dtheta = series_dtheta(u, v, theta);
  return out;
}

}  // namespace

CopulaPartials FrankCopula::partials(double u, double v, double theta) const {
  u = std::clamp(u, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  // Boundary values are parameter free: C(0,v) = C(u,0) = 0, C(1,v) = v,
  // C(u,1) = u. Only the partial along the free argument is reported.
  if (u == 0.0 || v == 0.0) return {0.0, 0.0, 0.0, 0.0};
  if (u == 1.0) return {v, 0.0, 1.0, 0.0};
  if (v == 1.0) return {u, 1.0, 0.0, 0.0};
  auto out = frank_interior(u, v, theta, true);
  out.value = std::clamp(out.value, std::max(u + v - 1.0, 0.0), std::min(u, v));
  return out;
}

double FrankCopula::cdf(double u, double v, double theta) const {
  u = std::clamp(u, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  if (u == 0.0 || v == 0.0) return 0.0;
  if (u == 1.0) return v;
  if (v == 1.0) return u;
  const double c = frank_interior(u, v, theta, false).value;
  return std::clamp(c, std::max(u + v - 1.0, 0.0), std::min(u, v));
}

const BivariateCopula& frank_copula() {
  static const FrankCopula instance;
  return instance;
}

double frank_cdf(double u, double v, double theta) { return frank_copula().cdf(u, v, theta); }

std::vector<double> JointTable::row_sums() const {
  std::vector<double> s(rows, 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) s[i] += at(i, j);
  return s;
}

std::vector<double> JointTable::col_sums() const {
  std::vector<double> s(cols, 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) s[j] += at(i, j);
  return s;
}

double JointTable::total() const {
  double t = 0.0;
  for (double p : probs) t += p;
  return t;
}

std::vector<double> marginal_cdf(std::span<const double> f, const OrdinalUnaryParams& phi) {
  const auto z = z_scores(f, phi);
  std::vector<double> u(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) u[k] = normal_cdf(z[k]);
  return u;
}

JointTable joint_table_from_cdfs(std::span<const double> u, std::span<const double> v, double theta,
                                 const BivariateCopula& family) {
  const int R = static_cast<int>(u.size()) - 1, S = static_cast<int>(v.size()) - 1;
  if (R < 1 || S < 1) throw ArgumentError("marginal cdf grids need at least two points");
  std::vector<double> grid(static_cast<std::size_t>(R + 1) * (S + 1));
  for (int i = 0; i <= R; ++i)
    for (int j = 0; j <= S; ++j) grid[static_cast<std::size_t>(i) * (S + 1) + j] = family.cdf(u[i], v[j], theta);
  auto C = [&](int i, int j) { return grid[static_cast<std::size_t>(i) * (S + 1) + j]; };
  JointTable t{R, S, std::vector<double>(static_cast<std::size_t>(R) * S)};
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < S; ++j) {
      const double p = C(i + 1, j + 1) - C(i, j + 1) - C(i + 1, j) + C(i, j);
      t.probs[static_cast<std::size_t>(i) * S + j] = std::max(p, 0.0);
    }
  return t;
}

JointTable pairwise_joint_table(std::span<const double> f, const OrdinalUnaryParams& phi_r,
                                const OrdinalUnaryParams& phi_s, double theta, const BivariateCopula& family) {
  return joint_table_from_cdfs(marginal_cdf(f, phi_r), marginal_cdf(f, phi_s), theta, family);
}

namespace {

double cell_value(std::span<const double> u, std::span<const double> v, double theta, Level lr, Level ls,
                  const BivariateCopula& family) {
  return family.cdf(u[lr + 1], v[ls + 1], theta) - family.cdf(u[lr], v[ls + 1], theta) -
         family.cdf(u[lr + 1], v[ls], theta) + family.cdf(u[lr], v[ls], theta);
}

void check_levels(const OrdinalUnaryParams& phi_r, const OrdinalUnaryParams& phi_s, Level lr, Level ls) {
  if (lr < 0 || lr >= phi_r.levels() || ls < 0 || ls >= phi_s.levels())
    throw ArgumentError("level pair (" + std::to_string(lr + 1) + "," + std::to_string(ls + 1) +
                        ") out of range");
}

}  // namespace

double pairwise_log_prob(std::span<const double> f, const OrdinalUnaryParams& phi_r,
                         const OrdinalUnaryParams& phi_s, double theta, Level l_r, Level l_s,
                         const BivariateCopula& family) {
  check_levels(phi_r, phi_s, l_r, l_s);
  const auto u = marginal_cdf(f, phi_r);
  const auto v = marginal_cdf(f, phi_s);
  return std::log(std::max(cell_value(u, v, theta, l_r, l_s, family), kProbFloor));
}

PairGradient copula_gradients(std::span<const double> f, const OrdinalUnaryParams& phi_r,
                              const OrdinalUnaryParams& phi_s, double theta, Level l_r, Level l_s,
                              const BivariateCopula& family) {
  check_levels(phi_r, phi_s, l_r, l_s);
  const auto zr = z_scores(f, phi_r);
  const auto zs = z_scores(f, phi_s);
  std::vector<double> u(zr.size()), v(zs.size());
  for (std::size_t k = 0; k < zr.size(); ++k) u[k] = normal_cdf(zr[k]);
  for (std::size_t k = 0; k < zs.size(); ++k) v[k] = normal_cdf(zs[k]);

  const int i0 = l_r, i1 = l_r + 1, j0 = l_s, j1 = l_s + 1;
  const auto c11 = family.partials(u[i1], v[j1], theta);
  const auto c01 = family.partials(u[i0], v[j1], theta);
  const auto c10 = family.partials(u[i1], v[j0], theta);
  const auto c00 = family.partials(u[i0], v[j0], theta);

  PairGradient g;
  g.raw_r.assign(phi_r.raw().size(), 0.0);
  g.raw_s.assign(phi_s.raw().size(), 0.0);
  g.feature.assign(f.size(), 0.0);
  const double p = c11.value - c01.value - c10.value + c00.value;
  if (p <= kProbFloor) {
    g.log_prob = std::log(kProbFloor);
    return g;
  }
  g.log_prob = std::log(p);
  g.theta = (c11.dtheta - c01.dtheta - c10.dtheta + c00.dtheta) / p;

  std::vector<double> dzr(zr.size(), 0.0), dzs(zs.size(), 0.0);
  dzr[i1] = (c11.du - c10.du) / p * normal_pdf(zr[i1]);
  dzr[i0] = (c00.du - c01.du) / p * normal_pdf(zr[i0]);
  dzs[j1] = (c11.dv - c01.dv) / p * normal_pdf(zs[j1]);
  dzs[j0] = (c00.dv - c10.dv) / p * normal_pdf(zs[j0]);
  accumulate_z_gradient(f, phi_r, zr, dzr, g.raw_r, g.feature);
  accumulate_z_gradient(f, phi_s, zs, dzs, g.raw_s, g.feature);
  return g;
}

double kendall_tau(const JointTable& t) {
  double tau = 0.0;
  for (int i = 0; i < t.rows; ++i)
    for (int j = 0; j < t.cols; ++j)
      for (int k = 0; k < t.rows; ++k)
        for (int l = 0; l < t.cols; ++l) {
          const int s = (i > k) - (i < k);
          const int w = (j > l) - (j < l);
          tau += t.at(i, j) * t.at(k, l) * s * w;
        }
  return tau;
}

}  // namespace ccnn
