#pragma once

// Small descriptive and goodness-of-fit helpers shared by the analysis and
// simulation modules.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "urbanflow/error.hpp"

namespace urbanflow::stats {

inline double mean(std::span<const double> xs) {
  require(!xs.empty(), "mean of empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Population variance (divisor n).
inline double variance(std::span<const double> xs) {
  const double m = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return acc / static_cast<double>(xs.size());
}

/// Median; even-sized samples take the midpoint of the two central values.
inline double median(std::vector<double> xs) {
  require(!xs.empty(), "median of empty sample");
  const std::size_t mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
  const double upper = xs[mid];
  if (xs.size() % 2 == 1) return upper;
  const double lower = *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

/// Pearson coefficient with divisor-n moments. Empty optional when either
/// series has zero variance.
inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && !a.empty(), "pearson: series length mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double da = a[k] - ma, db = b[k] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Centered moving average over `width` points, truncated at the ends.
inline std::vector<double> moving_average(std::span<const double> ys, std::size_t width) {
  if (width <= 1) return {ys.begin(), ys.end()};
  const auto n = static_cast<std::ptrdiff_t>(ys.size());
  const auto back = static_cast<std::ptrdiff_t>(width / 2);
  const auto fwd = static_cast<std::ptrdiff_t>(width) - back - 1;
  std::vector<double> out(ys.size());
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto lo = std::max<std::ptrdiff_t>(0, k - back);
    const auto hi = std::min<std::ptrdiff_t>(n - 1, k + fwd);
    double acc = 0.0;
    for (auto j = lo; j <= hi; ++j) acc += ys[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(k)] = acc / static_cast<double>(hi - lo + 1);
  }
  return out;
}

struct KsResult {
  double statistic = 0.0;
  std::size_t n = 0;
  double p_value = 1.0;
};

/// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_survival(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF. The p-value
/// uses the Stephens small-sample correction of the asymptotic law.
template <class Cdf>
KsResult ks_test(std::vector<double> sample, Cdf&& cdf) {
  require(!sample.empty(), "ks_test: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t k = 0; k < sample.size(); ++k) {
    const double f = cdf(sample[k]);
    d = std::max({d, f - static_cast<double>(k) / n, static_cast<double>(k + 1) / n - f});
  }
  const double sn = std::sqrt(n);
  return {d, sample.size(), kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)};
}

/// Upper-tail probability of a chi-square statistic.
inline double chi_square_p(double statistic, double dof) {
  require(dof > 0.0, "chi_square_p: dof must be positive");
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), statistic));
}

}  // namespace urbanflow::stats
