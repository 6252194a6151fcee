#pragma once

#include <cmath>
#include <numbers>

namespace ccnn {

inline double normal_pdf(double z) {
  if (std::isinf(z)) return 0.0;
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

// Standard normal cdf. erfc keeps full relative precision in the lower tail.
inline double normal_cdf(double z) {
  if (z == -INFINITY) return 0.0;
  if (z == INFINITY) return 1.0;
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

// Upper tail 1 - Phi(z) without cancellation.
inline double normal_sf(double z) { return normal_cdf(-z); }

// Phi(b) - Phi(a) for a <= b, evaluated on the tail where it does not cancel.
inline double normal_interval(double a, double b) {
  if (a > 0.0) return normal_sf(a) - normal_sf(b);
  return normal_cdf(b) - normal_cdf(a);
}

// Inverse cdf by Newton iteration on normal_cdf. p is clamped to (1e-300, 1).
double normal_quantile(double p);

}  // namespace ccnn
