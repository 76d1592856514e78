#pragma once

// Empirical statistics of relative population flows: per-city moments, the
// variance scatter, distance-correlation records and their binning, lagged
// cross-sectional correlations, and the (ln r, c) histogram.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "urbanflow/corr_density.hpp"
#include "urbanflow/error.hpp"
#include "urbanflow/ingest.hpp"
#include "urbanflow/stats.hpp"

namespace urbanflow {

struct MomentSummary {
  Eigen::VectorXd mean_x;     // over T+1 points
  Eigen::VectorXd mean_xdot;  // over T points
  Eigen::VectorXd var_xdot;   // divisor T
  std::size_t T = 0;
};

inline MomentSummary city_moments(const RelativePanel& rel) {
  const std::size_t T = rel.change_count();
  require(T >= 2, "city_moments: needs at least 2 change observations");
  MomentSummary m;
  m.T = T;
  m.mean_x = rel.x.rowwise().mean();
  m.mean_xdot = rel.xdot.rowwise().mean();
  const Eigen::MatrixXd centered = rel.xdot.colwise() - m.mean_xdot;
  m.var_xdot = centered.array().square().rowwise().sum() / static_cast<double>(T);
  return m;
}

struct ScatterPoint {
  double mean_x = 0.0;
  double ratio = 0.0;  // V[xdot] / <x>
};

struct VarianceScatter {
  std::vector<ScatterPoint> points;
  std::vector<std::size_t> rows;  // panel row of each point
  std::size_t excluded = 0;       // cities with <x> = 0
};

inline VarianceScatter variance_scatter(const MomentSummary& m) {
  VarianceScatter s;
  for (Eigen::Index i = 0; i < m.mean_x.size(); ++i) {
    if (!(m.mean_x(i) > 0.0)) {
      ++s.excluded;
      continue;
    }
    s.points.push_back({m.mean_x(i), m.var_xdot(i) / m.mean_x(i)});
    s.rows.push_back(static_cast<std::size_t>(i));
  }
  return s;
}

struct CorrelationRecord {
  std::size_t i = 0;  // panel rows, i < j
  std::size_t j = 0;
  double r_km = 0.0;
  double c = 0.0;
};

struct PairwiseCorrelations {
  std::vector<CorrelationRecord> records;
  std::vector<std::size_t> retained;  // rows with <x> > min_x
  std::size_t dropped_pairs = 0;      // undefined coefficient (zero variance)
};

/// One record per unordered pair of cities whose mean share exceeds `min_x`.
inline PairwiseCorrelations pairwise_correlations(const RelativePanel& rel, const DistanceMatrix& d,
                                                  double min_x) {
  require(rel.change_count() >= 2, "pairwise_correlations: needs at least 2 change observations");
  require(d.r.rows() == static_cast<Eigen::Index>(rel.city_count()), "distance matrix size mismatch");
  PairwiseCorrelations out;
  const Eigen::VectorXd mean_x = rel.x.rowwise().mean();
  for (std::size_t i = 0; i < rel.city_count(); ++i)
    if (mean_x(static_cast<Eigen::Index>(i)) > min_x) out.retained.push_back(i);

  // Standardize each retained row once; the coefficient is then a dot product.
  const auto T = static_cast<double>(rel.change_count());
  const auto k = static_cast<Eigen::Index>(out.retained.size());
  Eigen::MatrixXd z(k, rel.xdot.cols());
  std::vector<bool> defined(out.retained.size());
  for (Eigen::Index a = 0; a < k; ++a) {
    const auto row = rel.xdot.row(static_cast<Eigen::Index>(out.retained[static_cast<std::size_t>(a)]));
    const Eigen::RowVectorXd centered = row.array() - row.mean();
    const double sd = std::sqrt(centered.squaredNorm() / T);
    defined[static_cast<std::size_t>(a)] = sd > 0.0;
    z.row(a) = sd > 0.0 ? Eigen::RowVectorXd(centered / sd) : Eigen::RowVectorXd::Zero(centered.size());
  }
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a + 1; b < k; ++b) {
      if (!defined[static_cast<std::size_t>(a)] || !defined[static_cast<std::size_t>(b)]) {
        ++out.dropped_pairs;
        continue;
      }
      const std::size_t i = out.retained[static_cast<std::size_t>(a)];
      const std::size_t j = out.retained[static_cast<std::size_t>(b)];
      const double c = std::clamp(z.row(a).dot(z.row(b)) / T, -1.0, 1.0);
      out.records.push_back({i, j, d.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), c});
    }
  }
  return out;
}

enum class Statistic { median, mean };

struct BinnedCurve {
  std::vector<double> center;  // bin centers on the binned axis
  std::vector<double> value;
  std::vector<std::size_t> count;
  Statistic statistic = Statistic::median;
  std::size_t smoothing = 0;  // moving-average width, 0 = none
};

struct BinSpec {
  double width = 0.1;
  double lo = 0.0;  // window on the binned axis, [lo, hi)
  double hi = 0.0;
  Statistic statistic = Statistic::median;
  std::size_t smoothing = 0;
};

/// Bins (abscissa, value) pairs: point falls in bin k if abscissa is in
/// [k w, (k+1) w). Only non-empty bins are reported, in order.
inline BinnedCurve bin_by_abscissa(std::span<const double> abscissa, std::span<const double> values,
                                   const BinSpec& spec) {
  require(spec.width > 0.0, "bin width must be positive");
  require(spec.hi > spec.lo, "empty window");
  require(abscissa.size() == values.size(), "abscissa/value size mismatch");
  std::map<long long, std::vector<double>> bins;
  for (std::size_t k = 0; k < abscissa.size(); ++k) {
    const double a = abscissa[k];
    if (!(a >= spec.lo && a < spec.hi)) continue;
    bins[static_cast<long long>(std::floor(a / spec.width))].push_back(values[k]);
  }
  require(!bins.empty(), "empty window: no points to bin");
  BinnedCurve curve;
  curve.statistic = spec.statistic;
  curve.smoothing = spec.smoothing;
  for (auto& [k, vs] : bins) {
    curve.center.push_back((static_cast<double>(k) + 0.5) * spec.width);
    curve.count.push_back(vs.size());
    curve.value.push_back(spec.statistic == Statistic::median ? stats::median(std::move(vs)) : stats::mean(vs));
  }
  if (spec.smoothing > 1) curve.value = stats::moving_average(curve.value, spec.smoothing);
  return curve;
}

/// Bins correlation records on ln r; the window is given in km.
inline BinnedCurve bin_statistic(std::span<const CorrelationRecord> records, double width_ln_r, double r_min_km,
                                 double r_max_km, Statistic statistic = Statistic::median,
                                 std::size_t smoothing = 0) {
  require(r_min_km > 0.0 && r_max_km > r_min_km, "empty window");
  std::vector<double> ln_r, c;
  ln_r.reserve(records.size());
  c.reserve(records.size());
  for (const auto& rec : records) {
    if (!(rec.r_km > 0.0)) continue;
    ln_r.push_back(std::log(rec.r_km));
    c.push_back(rec.c);
  }
  return bin_by_abscissa(ln_r, c, {width_ln_r, std::log(r_min_km), std::log(r_max_km), statistic, smoothing});
}

struct CrossSection {
  double mean = 0.0;
  double variance = 0.0;
};

/// Moments over cities of xdot(t); t is 1-based.
inline CrossSection cross_section_moments(const RelativePanel& rel, std::size_t t) {
  require(t >= 1 && t <= rel.change_count(), "cross_section_moments: t out of range");
  const auto col = rel.xdot.col(static_cast<Eigen::Index>(t - 1));
  const double n = static_cast<double>(col.size());
  const double mean = col.sum() / n;
  return {mean, (col.array() - mean).square().sum() / n};
}

struct LagCorrelation {
  std::size_t lag = 0;
  double mean = 0.0;    // c(lag)
  double stddev = 0.0;  // spread of the per-year coefficients
  std::size_t used = 0;
  std::size_t dropped = 0;  // zero-variance cross-sections
};

/// Average over t of the cross-city Pearson coefficient between xdot(t) and
/// xdot(t + lag).
inline LagCorrelation time_correlation(const RelativePanel& rel, std::size_t lag) {
  const std::size_t T = rel.change_count();
  require(lag >= 1 && lag + 1 <= T, "time_correlation: lag out of range");
  LagCorrelation out;
  out.lag = lag;
  std::vector<double> coeffs;
  for (std::size_t t = 0; t + lag < T; ++t) {
    const Eigen::VectorXd a = rel.xdot.col(static_cast<Eigen::Index>(t));
    const Eigen::VectorXd b = rel.xdot.col(static_cast<Eigen::Index>(t + lag));
    const auto c = stats::pearson({a.data(), static_cast<std::size_t>(a.size())},
                                  {b.data(), static_cast<std::size_t>(b.size())});
    if (c) {
      coeffs.push_back(*c);
    } else {
      ++out.dropped;
    }
  }
  out.used = coeffs.size();
  if (!coeffs.empty()) {
    out.mean = stats::mean(coeffs);
    out.stddev = std::sqrt(stats::variance(coeffs));
  } else {
    out.mean = std::nan("");
    out.stddev = std::nan("");
  }
  return out;
}

inline std::vector<LagCorrelation> lag_curve(const RelativePanel& rel, std::size_t max_lag) {
  std::vector<LagCorrelation> out;
  for (std::size_t lag = 1; lag <= max_lag; ++lag) out.push_back(time_correlation(rel, lag));
  return out;
}

struct PopulationCorrelation {
  BinnedCurve curve;  // center = ln <x> bin center, value = c(1), count = cities
  std::size_t skipped_bins = 0;
};

/// c(lag = 1) restricted to cities grouped in bins of ln <x>.
inline PopulationCorrelation correlation_by_population(const RelativePanel& rel, double width_ln_x) {
  require(width_ln_x > 0.0, "bin width must be positive");
  require(rel.change_count() >= 2, "correlation_by_population: needs at least 2 change observations");
  const Eigen::VectorXd mean_x = rel.x.rowwise().mean();
  std::map<long long, std::vector<std::size_t>> bins;
  for (std::size_t i = 0; i < rel.city_count(); ++i) {
    const double m = mean_x(static_cast<Eigen::Index>(i));
    if (m > 0.0) bins[static_cast<long long>(std::floor(std::log(m) / width_ln_x))].push_back(i);
  }
  PopulationCorrelation out;
  out.curve.statistic = Statistic::mean;
  for (const auto& [k, rows] : bins) {
    if (rows.size() < 2) {
      ++out.skipped_bins;
      continue;
    }
    const auto lc = time_correlation(select_cities(rel, rows), 1);
    if (lc.used == 0) {
      ++out.skipped_bins;
      continue;
    }
    out.curve.center.push_back((static_cast<double>(k) + 0.5) * width_ln_x);
    out.curve.value.push_back(lc.mean);
    out.curve.count.push_back(rows.size());
  }
  return out;
}

/// 2-D histogram over (ln r, c), each ln r column normalized to sum 1.
struct RCHistogram {
  double width_ln_r = 0.1;
  double width_c = 1.0 / 15.0;
  std::vector<double> ln_r_center;
  std::vector<double> c_center;
  Eigen::MatrixXd weight;                 // rows: ln r columns, cols: c bins
  std::vector<std::size_t> column_count;  // raw records per ln r column
};

inline std::size_t c_bin(double c, std::size_t bins, double width) {
  const auto k = static_cast<long long>(std::floor((c + 1.0) / width));
  return static_cast<std::size_t>(std::clamp<long long>(k, 0, static_cast<long long>(bins) - 1));
}

/// `smoothing` > 1 averages each column with its neighbours along ln r
/// (non-empty columns only).
inline RCHistogram rc_histogram(std::span<const CorrelationRecord> records, double width_ln_r, double width_c,
                                double ln_r_lo, double ln_r_hi, std::size_t smoothing = 0) {
  require(width_ln_r > 0.0 && width_c > 0.0, "histogram widths must be positive");
  require(ln_r_hi > ln_r_lo, "empty window");
  const auto k_lo = static_cast<long long>(std::floor(ln_r_lo / width_ln_r));
  const auto k_hi = static_cast<long long>(std::floor(ln_r_hi / width_ln_r));
  const auto columns = static_cast<std::size_t>(k_hi - k_lo + 1);
  const auto cbins = static_cast<std::size_t>(std::llround(2.0 / width_c));
  require(cbins >= 1, "c width too large");

  RCHistogram h;
  h.width_ln_r = width_ln_r;
  h.width_c = width_c;
  const double wc = 2.0 / static_cast<double>(cbins);
  for (std::size_t k = 0; k < columns; ++k) h.ln_r_center.push_back((static_cast<double>(k_lo + static_cast<long long>(k)) + 0.5) * width_ln_r);
  for (std::size_t b = 0; b < cbins; ++b) h.c_center.push_back(-1.0 + (static_cast<double>(b) + 0.5) * wc);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(columns), static_cast<Eigen::Index>(cbins));
  h.column_count.assign(columns, 0);
  std::size_t used = 0;
  for (const auto& rec : records) {
    if (!(rec.r_km > 0.0)) continue;
    const double lr = std::log(rec.r_km);
    if (!(lr >= ln_r_lo && lr < ln_r_hi)) continue;
    const auto col = static_cast<std::size_t>(static_cast<long long>(std::floor(lr / width_ln_r)) - k_lo);
    counts(static_cast<Eigen::Index>(col), static_cast<Eigen::Index>(c_bin(rec.c, cbins, wc))) += 1.0;
    ++h.column_count[col];
    ++used;
  }
  require(used > 0, "empty window: no records in histogram range");

  Eigen::MatrixXd normalized = Eigen::MatrixXd::Zero(counts.rows(), counts.cols());
  for (Eigen::Index k = 0; k < counts.rows(); ++k)
    if (h.column_count[static_cast<std::size_t>(k)] > 0) normalized.row(k) = counts.row(k) / counts.row(k).sum();
  if (smoothing <= 1) {
    h.weight = std::move(normalized);
    return h;
  }
  h.weight = Eigen::MatrixXd::Zero(counts.rows(), counts.cols());
  const auto back = static_cast<long long>(smoothing / 2);
  const auto fwd = static_cast<long long>(smoothing) - back - 1;
  for (long long k = 0; k < static_cast<long long>(columns); ++k) {
    if (h.column_count[static_cast<std::size_t>(k)] == 0) continue;
    std::size_t used_cols = 0;
    for (long long j = std::max(0LL, k - back); j <= std::min<long long>(static_cast<long long>(columns) - 1, k + fwd); ++j) {
      if (h.column_count[static_cast<std::size_t>(j)] == 0) continue;
      h.weight.row(k) += normalized.row(j);
      ++used_cols;
    }
    h.weight.row(k) /= static_cast<double>(used_cols);
  }
  return h;
}

/// Probability mass of P(c, C, T) in each c bin of width `width_c` on (-1, 1).
inline std::vector<double> theoretical_c_column(double C, int T, double width_c) {
  const auto cbins = static_cast<std::size_t>(std::llround(2.0 / width_c));
  const double wc = 2.0 / static_cast<double>(cbins);
  std::vector<double> mass(cbins);
  auto f = [&](double c) { return std::abs(c) < 1.0 ? sample_corr_density(c, C, T) : 0.0; };
  for (std::size_t b = 0; b < cbins; ++b) {
    const double lo = -1.0 + static_cast<double>(b) * wc;
    mass[b] = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, lo + wc, 15, 1e-12);
  }
  return mass;
}

inline void write_curve_csv(std::ostream& os, const BinnedCurve& curve) {
  os << "bin_center,statistic,count\n";
  os.precision(17);
  for (std::size_t k = 0; k < curve.center.size(); ++k)
    os << curve.center[k] << ',' << curve.value[k] << ',' << curve.count[k] << '\n';
}

inline void write_rc_csv(std::ostream& os, const RCHistogram& h) {
  os << "ln_r,c,weight\n";
  os.precision(17);
  for (std::size_t k = 0; k < h.ln_r_center.size(); ++k)
    for (std::size_t b = 0; b < h.c_center.size(); ++b)
      os << h.ln_r_center[k] << ',' << h.c_center[b] << ','
         << h.weight(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(b)) << '\n';
}

}  // namespace urbanflow
