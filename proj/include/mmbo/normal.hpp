#ifndef MMBO_NORMAL_HPP
#define MMBO_NORMAL_HPP

#include <cmath>
#include <numbers>

namespace mmbo {

inline constexpr double log_sqrt_2pi = 0.91893853320467274178;

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x - log_sqrt_2pi); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Mills ratio Phi(-t) / phi(t) for t > 0 by Laplace's continued fraction.
inline double mills_ratio(double t) {
  double frac = t;
  for (int k = 60; k >= 1; --k) {
    frac = t + k / frac;
  }
  return 1.0 / frac;
}

/// log Phi(x). Below -8 the erfc route loses relative accuracy long before it
/// underflows, so the tail is evaluated through the Mills ratio.
inline double log_normal_cdf(double x) {
  if (x > 0.0) {
    return std::log1p(-normal_cdf(-x));
  }
  if (x >= -8.0) {
    return std::log(normal_cdf(x));
  }
  return -0.5 * x * x - log_sqrt_2pi + std::log(mills_ratio(-x));
}

/// d/dx log Phi(x) = phi(x) / Phi(x).
inline double d_log_normal_cdf(double x) {
  if (x >= -8.0) {
    return normal_pdf(x) / normal_cdf(x);
  }
  return 1.0 / mills_ratio(-x);
}

inline double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - log_sqrt_2pi;
}

}  // namespace mmbo

#endif  // MMBO_NORMAL_HPP
