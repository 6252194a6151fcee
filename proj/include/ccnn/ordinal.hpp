#pragma once

#include <span>
#include <vector>

#include "ccnn/tensor.hpp"

namespace ccnn {

// Ordinal level, 0-based internally (files and reports use 1..L).
using Level = int;
inline constexpr Level kMissing = -1;

// Probabilities below this floor are clamped before taking logs.
inline constexpr double kProbFloor = 1e-12;

// Probit threshold model for one output. Stored unconstrained so that plain
// SGD keeps the thresholds strictly increasing and the scale positive:
//
//   raw = [d_0, d_1, ..., d_{L-2}, log_sigma, beta_0, ..., beta_{D-1}]
//   psi_1 = d_0,  psi_{k+1} = psi_k + exp(d_k),  sigma = exp(log_sigma)
class OrdinalUnaryParams {
 public:
  OrdinalUnaryParams() = default;
  // Thresholds evenly spaced on [-1, 1], sigma 1, beta 0.
  OrdinalUnaryParams(int levels, int feature_dim);

  static OrdinalUnaryParams from_natural(std::span<const double> thresholds, std::span<const double> beta,
                                         double sigma);

  int levels() const { return levels_; }
  int feature_dim() const { return static_cast<int>(raw_.size()) - levels_; }

  std::vector<double> thresholds() const;
  double sigma() const;
  std::span<const double> beta() const { return std::span<const double>(raw_).subspan(levels_); }
  std::span<double> beta() { return std::span<double>(raw_).subspan(levels_); }

  void set_thresholds(std::span<const double> thresholds);
  void set_sigma(double sigma);

  std::span<double> raw() { return raw_; }
  std::span<const double> raw() const { return raw_; }

  std::size_t sigma_index() const { return static_cast<std::size_t>(levels_ - 1); }

 private:
  int levels_ = 0;
  std::vector<double> raw_;
};

// z_k = (psi_k - beta.f) / sigma for k = 0..L, with z_0 = -inf, z_L = +inf.
std::vector<double> z_scores(std::span<const double> f, const OrdinalUnaryParams& phi);

// Pr(y = l | f) = Phi(z_{l+1}) - Phi(z_l), l = 0..L-1.
std::vector<double> level_probs(std::span<const double> f, const OrdinalUnaryParams& phi);

double unary_log_prob(std::span<const double> f, const OrdinalUnaryParams& phi, Level l);

struct UnaryGradient {
  double log_prob = 0.0;
  std::vector<double> raw;      // d log P / d raw phi
  std::vector<double> feature;  // d log P / d f
};

UnaryGradient unary_gradients(std::span<const double> f, const OrdinalUnaryParams& phi, Level l);

// Chain rule from d(loss)/d(z_k), k = 0..L (entries at the infinite ends are
// ignored), to the raw parameters and the features. Results are added into
// raw_grad and feature_grad (feature_grad may be empty to skip it).
void accumulate_z_gradient(std::span<const double> f, const OrdinalUnaryParams& phi,
                           std::span<const double> z, std::span<const double> dz,
                           std::span<double> raw_grad, std::span<double> feature_grad);

// Per-output independent argmax, first maximal level on ties.
Level argmax_level(std::span<const double> probs);

}  // namespace ccnn
