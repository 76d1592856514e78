#pragma once

// Exact sampling density P(c, C, T) of the Pearson coefficient of T draws
// from a bivariate normal with correlation C (Hotelling's series form).

#include <cmath>
#include <numbers>

#include "urbanflow/error.hpp"

namespace urbanflow {

/// Gauss series 2F1(a, b; c; z) for |z| < 1. Stops once a term drops below
/// 1e-12 of the partial sum, scaled by (1 - z) to bound the geometric tail.
inline double hypergeometric_2f1(double a, double b, double c, double z) {
  require(std::abs(z) < 1.0, "hypergeometric_2f1: |z| must be < 1");
  double term = 1.0;
  double sum = 1.0;
  const double tail = std::max(1.0 - std::abs(z), 1e-300);
  for (int k = 0; k < 1'000'000; ++k) {
    term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * z;
    sum += term;
    if (std::abs(term) < 1e-12 * std::abs(sum) * tail) return sum;
  }
  throw NumericError("hypergeometric_2f1: series did not converge");
}

inline double sample_corr_density(double c, double C, int T) {
  require(std::abs(c) < 1.0 && std::abs(C) < 1.0, "sample_corr_density: |c| and |C| must be < 1");
  require(T >= 3, "sample_corr_density: needs T >= 3");
  const double n = T;
  const double log_norm = std::log(n - 2.0) + std::lgamma(n - 1.0) - 0.5 * std::log(2.0 * std::numbers::pi) -
                          std::lgamma(n - 0.5);
  const double log_body = 0.5 * (n - 1.0) * std::log1p(-C * C) + 0.5 * (n - 4.0) * std::log1p(-c * c) -
                          (n - 1.5) * std::log1p(-C * c);
  return std::exp(log_norm + log_body) * hypergeometric_2f1(0.5, 0.5, n - 0.5, 0.5 * (1.0 + C * c));
}

}  // namespace urbanflow
