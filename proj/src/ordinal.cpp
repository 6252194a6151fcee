#include "ccnn/ordinal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ccnn/errors.hpp"
#include "ccnn/normal.hpp"

namespace ccnn {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

void check_dims(std::span<const double> f, const OrdinalUnaryParams& phi) {
  if (static_cast<int>(f.size()) != phi.feature_dim())
    throw ConfigError("feature vector has length " + std::to_string(f.size()) + ", unary expects " +
                      std::to_string(phi.feature_dim()));
}

void check_level(const OrdinalUnaryParams& phi, Level l) {
  if (l < 0 || l >= phi.levels())
    throw ArgumentError("level " + std::to_string(l + 1) + " outside 1.." + std::to_string(phi.levels()));
}

}  // namespace

double normal_quantile(double p) {
  p = std::clamp(p, 1e-300, 1.0 - 1e-16);
  double x = 0.0;
  for (int it = 0; it < 100; ++it) {
    const double err = (x > 0.0 ? -(normal_sf(x) - (1.0 - p)) : normal_cdf(x) - p);
    const double step = err / std::max(normal_pdf(x), 1e-300);
    x -= std::clamp(step, -2.0, 2.0);
    if (std::abs(step) < 1e-14 * std::max(1.0, std::abs(x))) break;
  }
  return x;
}

OrdinalUnaryParams::OrdinalUnaryParams(int levels, int feature_dim) : levels_(levels) {
  if (levels < 2) throw ConfigError("an ordinal output needs at least 2 levels");
  if (feature_dim < 0) throw ConfigError("negative feature_dim");
  raw_.assign(static_cast<std::size_t>(levels + feature_dim), 0.0);
  std::vector<double> psi(levels - 1);
  for (int k = 0; k < levels - 1; ++k) psi[k] = levels == 2 ? 0.0 : -1.0 + 2.0 * k / (levels - 2);
  set_thresholds(psi);
}

OrdinalUnaryParams OrdinalUnaryParams::from_natural(std::span<const double> thresholds,
                                                    std::span<const double> beta, double sigma) {
  OrdinalUnaryParams p(static_cast<int>(thresholds.size()) + 1, static_cast<int>(beta.size()));
  p.set_thresholds(thresholds);
  p.set_sigma(sigma);
  std::copy(beta.begin(), beta.end(), p.beta().begin());
  return p;
}

std::vector<double> OrdinalUnaryParams::thresholds() const {
  std::vector<double> psi(levels_ - 1);
  psi[0] = raw_[0];
  for (int k = 1; k < levels_ - 1; ++k) psi[k] = psi[k - 1] + std::exp(raw_[k]);
  return psi;
}

double OrdinalUnaryParams::sigma() const { return std::exp(raw_[sigma_index()]); }

void OrdinalUnaryParams::set_thresholds(std::span<const double> psi) {
  if (static_cast<int>(psi.size()) != levels_ - 1) throw ConfigError("expected L-1 thresholds");
  for (std::size_t k = 0; k < psi.size(); ++k)
    if (!std::isfinite(psi[k])) throw ConfigError("thresholds must be finite");
  raw_[0] = psi[0];
  for (std::size_t k = 1; k < psi.size(); ++k) {
    if (!(psi[k] > psi[k - 1])) throw ConfigError("thresholds must be strictly increasing");
    raw_[k] = std::log(psi[k] - psi[k - 1]);
  }
}

void OrdinalUnaryParams::set_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be positive and finite");
  raw_[sigma_index()] = std::log(sigma);
}

std::vector<double> z_scores(std::span<const double> f, const OrdinalUnaryParams& phi) {
  check_dims(f, phi);
  const int L = phi.levels();
  const double eta = dot(phi.beta(), f);
  const double sigma = phi.sigma();
  const auto psi = phi.thresholds();
  std::vector<double> z(L + 1);
  z[0] = -std::numeric_limits<double>::infinity();
  z[L] = std::numeric_limits<double>::infinity();
  for (int k = 1; k < L; ++k) z[k] = (psi[k - 1] - eta) / sigma;
  return z;
}

std::vector<double> level_probs(std::span<const double> f, const OrdinalUnaryParams& phi) {
  const auto z = z_scores(f, phi);
  std::vector<double> p(phi.levels());
  for (int l = 0; l < phi.levels(); ++l) p[l] = std::max(0.0, normal_interval(z[l], z[l + 1]));
  return p;
}

double unary_log_prob(std::span<const double> f, const OrdinalUnaryParams& phi, Level l) {
  check_level(phi, l);
  const auto z = z_scores(f, phi);
  return std::log(std::max(normal_interval(z[l], z[l + 1]), kProbFloor));
}

void accumulate_z_gradient(std::span<const double> f, const OrdinalUnaryParams& phi,
                           std::span<const double> z, std::span<const double> dz,
                           std::span<double> raw_grad, std::span<double> feature_grad) {
  const int L = phi.levels();
  const double sigma = phi.sigma();
  const auto raw = phi.raw();
  // d/dpsi_k and d/d(beta.f) of the finite z entries.
  std::vector<double> dpsi(L - 1, 0.0);
  double deta = 0.0, dlog_sigma = 0.0;
  for (int k = 1; k < L; ++k) {
    if (dz[k] == 0.0) continue;
    dpsi[k - 1] = dz[k] / sigma;
    deta -= dz[k] / sigma;
    dlog_sigma -= dz[k] * z[k];
  }
  // psi_k = d_0 + sum_{j=1}^{k-1} exp(d_j), psi_k stored at index k-1
  double tail = 0.0;
  for (int j = L - 2; j >= 1; --j) {
    tail += dpsi[j];
    raw_grad[j] += std::exp(raw[j]) * tail;
  }
  raw_grad[0] += tail + dpsi[0];
  raw_grad[phi.sigma_index()] += dlog_sigma;
  const auto beta = phi.beta();
  for (std::size_t j = 0; j < f.size(); ++j) {
    raw_grad[L + j] += deta * f[j];
    if (!feature_grad.empty()) feature_grad[j] += deta * beta[j];
  }
}

UnaryGradient unary_gradients(std::span<const double> f, const OrdinalUnaryParams& phi, Level l) {
  check_level(phi, l);
  const auto z = z_scores(f, phi);
  const double p = normal_interval(z[l], z[l + 1]);
  UnaryGradient g;
  g.raw.assign(phi.raw().size(), 0.0);
  g.feature.assign(f.size(), 0.0);
  if (p <= kProbFloor) {
    g.log_prob = std::log(kProbFloor);
    return g;  // clamped: locally constant
  }
  g.log_prob = std::log(p);
  std::vector<double> dz(z.size(), 0.0);
  dz[l + 1] = normal_pdf(z[l + 1]) / p;
  dz[l] = -normal_pdf(z[l]) / p;
  accumulate_z_gradient(f, phi, z, dz, g.raw, g.feature);
  return g;
}

Level argmax_level(std::span<const double> probs) {
  Level best = 0;
  for (std::size_t l = 1; l < probs.size(); ++l)
    if (probs[l] > probs[best]) best = static_cast<Level>(l);
  return best;
}

}  // namespace ccnn
