#pragma once

// Least-squares fits of the three empirical laws:
//   variance law   V[xdot]/<x> = sigma^2 <x> + sigma_half^2
//   lorentzian     C(r) = C0 / (1 + |r/r0|^alpha)
//   exponential    c(dt) = a exp(-gamma dt)

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "urbanflow/empirics.hpp"
#include "urbanflow/error.hpp"
#include "urbanflow/nls.hpp"
#include "urbanflow/stats.hpp"

namespace urbanflow {

enum class FitModel { variance_law, lorentzian, exponential };

inline std::string_view to_string(FitModel m) {
  switch (m) {
    case FitModel::variance_law: return "variance_law";
    case FitModel::lorentzian: return "lorentzian";
    case FitModel::exponential: return "exponential";
  }
  return "unknown";
}

struct FitParam {
  std::string name;
  double value = 0.0;
  double stderr_ = 0.0;
};

struct FitResult {
  FitModel model = FitModel::variance_law;
  std::vector<FitParam> params;
  double r2 = 0.0;
  std::size_t n_points = 0;
  bool converged = false;
  double gradient_norm = 0.0;
  int iterations = 0;
  std::map<std::string, std::string> metadata;

  const FitParam& at(std::string_view name) const {
    for (const auto& p : params)
      if (p.name == name) return p;
    throw std::out_of_range("no fit parameter named " + std::string(name));
  }
  double value(std::string_view name) const { return at(name).value; }
  double stderr_of(std::string_view name) const { return at(name).stderr_; }
};

inline nlohmann::json to_json(const FitResult& fit) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["model"] = std::string(to_string(fit.model));
  j["params"] = nlohmann::json::object();
  j["stderr"] = nlohmann::json::object();
  for (const auto& p : fit.params) {
    j["params"][p.name] = num(p.value);
    j["stderr"][p.name] = num(p.stderr_);
  }
  j["r2"] = num(fit.r2);
  j["n_points"] = fit.n_points;
  j["converged"] = fit.converged;
  j["metadata"] = fit.metadata;
  return j;
}

namespace detail {

inline double r_squared(std::span<const double> observed, std::span<const double> predicted) {
  const double m = stats::mean(observed);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    ss_res += (observed[k] - predicted[k]) * (observed[k] - predicted[k]);
    ss_tot += (observed[k] - m) * (observed[k] - m);
  }
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
}

inline double safe_sqrt(double v) { return v >= 0.0 ? std::sqrt(v) : std::nan(""); }

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double se_intercept = 0.0;
  double se_slope = 0.0;
};

inline LinearFit ordinary_least_squares(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = stats::mean(x), my = stats::mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  require(sxx > 0.0, "degenerate design: all abscissae equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (x.size() > 2) {
    double ssr = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double e = y[k] - fit.intercept - fit.slope * x[k];
      ssr += e * e;
    }
    const double s2 = ssr / (n - 2.0);
    fit.se_slope = std::sqrt(s2 / sxx);
    fit.se_intercept = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  }
  return fit;
}

}  // namespace detail

struct VarianceLawOptions {
  bool bin_medians = true;  // fit to per-bin medians of the scatter
  double width_ln_x = 0.5;
};

/// Fits sigma^2 and sigma_half^2 (linear in <x>) by least squares on the
/// log ordinate. Reports sigma and sigma_half.
inline FitResult fit_variance_law(std::span<const ScatterPoint> scatter, const VarianceLawOptions& opt = {}) {
  require(scatter.size() >= 3, "fit_variance_law: needs at least 3 points");
  for (const auto& p : scatter) require(p.mean_x > 0.0, "fit_variance_law: abscissae must be positive");
  const auto [mn, mx] = std::minmax_element(scatter.begin(), scatter.end(),
                                            [](const auto& a, const auto& b) { return a.mean_x < b.mean_x; });
  require(mx->mean_x > mn->mean_x, "degenerate design: all abscissae equal");

  std::vector<double> xs, ys;
  if (opt.bin_medians) {
    // Median abscissa paired with median ordinate per ln <x> bin.
    std::map<long long, std::pair<std::vector<double>, std::vector<double>>> bins;
    for (const auto& p : scatter) {
      auto& [bx, by] = bins[static_cast<long long>(std::floor(std::log(p.mean_x) / opt.width_ln_x))];
      bx.push_back(p.mean_x);
      by.push_back(p.ratio);
    }
    for (auto& [k, b] : bins) {
      const double y = stats::median(b.second);
      if (y > 0.0) {
        xs.push_back(stats::median(b.first));
        ys.push_back(y);
      }
    }
  } else {
    for (const auto& p : scatter)
      if (p.ratio > 0.0) {
        xs.push_back(p.mean_x);
        ys.push_back(p.ratio);
      }
  }
  require(xs.size() >= 3, "fit_variance_law: fewer than 3 usable (positive) points");
  require(*std::max_element(xs.begin(), xs.end()) > *std::min_element(xs.begin(), xs.end()),
          "degenerate design: all abscissae equal");

  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  const std::size_t first = order.front(), last = order.back();

  // Initial guess from the endpoint slope.
  double slope = (ys[last] - ys[first]) / (xs[last] - xs[first]);
  if (!(slope > 0.0)) slope = 0.5 * ys[last] / xs[last];
  double offset = ys[first] - slope * xs[first];
  if (!(offset > 0.0)) offset = 0.5 * ys[first];

  std::vector<double> log_y(ys.size());
  for (std::size_t k = 0; k < ys.size(); ++k) log_y[k] = std::log(ys[k]);
  auto residual = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t k = 0; k < xs.size(); ++k)
      r(static_cast<Eigen::Index>(k)) = std::log(std::max(p(0) * xs[k] + p(1), 1e-300)) - log_y[k];
    return r;
  };
  Bounds bounds{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity())};
  const auto nls = nls_minimize(residual, Eigen::Vector2d(slope, offset), bounds);

  const double s2 = nls.params(0), h2 = nls.params(1);
  FitResult fit;
  fit.model = FitModel::variance_law;
  const double sigma = std::sqrt(s2), sigma_half = std::sqrt(h2);
  // d sqrt(v) = dv / (2 sqrt(v))
  fit.params = {{"sigma", sigma, sigma > 0 ? detail::safe_sqrt(nls.covariance(0, 0)) / (2 * sigma) : std::nan("")},
                {"sigma_half", sigma_half,
                 sigma_half > 0 ? detail::safe_sqrt(nls.covariance(1, 1)) / (2 * sigma_half) : std::nan("")}};
  std::vector<double> pred(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) pred[k] = std::log(std::max(s2 * xs[k] + h2, 1e-300));
  fit.r2 = detail::r_squared(log_y, pred);
  fit.n_points = xs.size();
  fit.converged = nls.converged;
  fit.gradient_norm = nls.gradient_norm;
  fit.iterations = nls.iterations;
  fit.metadata["ordinate_space"] = "log";
  fit.metadata["input"] = opt.bin_medians ? "binned_medians" : "raw_points";
  return fit;
}

struct LorentzianOptions {
  std::optional<double> fixed_alpha;
};

inline double lorentzian(double r, double c0, double r0, double alpha) {
  return c0 / (1.0 + std::pow(std::abs(r / r0), alpha));
}

/// Fits C0 / (1 + |r/r0|^alpha) to a curve binned on ln r (centers are ln r).
inline FitResult fit_lorentzian(const BinnedCurve& curve, const LorentzianOptions& opt = {}) {
  require(curve.center.size() >= 4, "fit_lorentzian: needs at least 4 bins");
  std::vector<double> r(curve.center.size());
  for (std::size_t k = 0; k < r.size(); ++k) r[k] = std::exp(curve.center[k]);
  const auto& y = curve.value;
  if (opt.fixed_alpha) require(*opt.fixed_alpha > 0.0 && *opt.fixed_alpha <= 6.0, "alpha must be in (0, 6]");

  // Initial guess: curve max, abscissa of half max, alpha = 2.
  std::vector<std::size_t> order(r.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return r[a] < r[b]; });
  std::size_t peak = order.front();
  for (auto k : order)
    if (y[k] > y[peak]) peak = k;
  const double c0 = std::clamp(y[peak], 1e-3, 1.0);
  double r_half = r[order.back()];
  for (std::size_t q = 1; q < order.size(); ++q) {
    const auto a = order[q - 1], b = order[q];
    if (r[a] >= r[peak] && y[a] > 0.5 * y[peak] && y[b] <= 0.5 * y[peak]) {
      const double t = (y[a] - 0.5 * y[peak]) / (y[a] - y[b]);
      r_half = r[a] + t * (r[b] - r[a]);
      break;
    }
  }
  const double alpha0 = opt.fixed_alpha.value_or(2.0);
  const bool free_alpha = !opt.fixed_alpha;

  auto residual = [&](const Eigen::VectorXd& p) {
    const double alpha = free_alpha ? p(2) : alpha0;
    Eigen::VectorXd res(static_cast<Eigen::Index>(r.size()));
    for (std::size_t k = 0; k < r.size(); ++k)
      res(static_cast<Eigen::Index>(k)) = lorentzian(r[k], p(0), p(1), alpha) - y[k];
    return res;
  };
  const Eigen::Index np = free_alpha ? 3 : 2;
  Eigen::VectorXd p0(np), lo(np), hi(np);
  p0.head(2) << c0, r_half;
  lo.head(2) << 0.0, 1e-9;
  hi.head(2) << 1.0, std::numeric_limits<double>::infinity();
  if (free_alpha) {
    p0(2) = alpha0;
    lo(2) = 1e-6;
    hi(2) = 6.0;
  }
  const auto nls = nls_minimize(residual, p0, Bounds{lo, hi});

  FitResult fit;
  fit.model = FitModel::lorentzian;
  fit.params = {{"C0", nls.params(0), detail::safe_sqrt(nls.covariance(0, 0))},
                {"r0", nls.params(1), detail::safe_sqrt(nls.covariance(1, 1))},
                {"alpha", free_alpha ? nls.params(2) : alpha0, free_alpha ? detail::safe_sqrt(nls.covariance(2, 2)) : 0.0}};
  std::vector<double> pred(r.size());
  for (std::size_t k = 0; k < r.size(); ++k) pred[k] = lorentzian(r[k], fit.params[0].value, fit.params[1].value, fit.params[2].value);
  fit.r2 = detail::r_squared(y, pred);
  fit.n_points = r.size();
  fit.converged = nls.converged;
  fit.gradient_norm = nls.gradient_norm;
  fit.iterations = nls.iterations;
  fit.metadata["alpha"] = free_alpha ? "free" : "frozen";
  return fit;
}

struct ExponentialOptions {
  bool refine = true;  // direct NLS after the log-linear start
};

/// Fits a exp(-gamma dt). The log-linear regression of ln c on dt over the
/// positive points gives the start (or the answer when refine = false).
inline FitResult fit_exponential(std::span<const double> lags, std::span<const double> values,
                                 const ExponentialOptions& opt = {}) {
  require(lags.size() == values.size(), "fit_exponential: size mismatch");
  require(lags.size() >= 3, "fit_exponential: needs at least 3 lags");
  std::vector<double> pos_t, pos_log;
  for (std::size_t k = 0; k < values.size(); ++k)
    if (values[k] > 0.0) {
      pos_t.push_back(lags[k]);
      pos_log.push_back(std::log(values[k]));
    }
  require(!pos_t.empty(), "fit_exponential: all values are <= 0");

  double a0 = *std::max_element(values.begin(), values.end());
  double g0 = 0.1;
  detail::LinearFit lin;
  const bool have_line = pos_t.size() >= 2 &&
                         *std::max_element(pos_t.begin(), pos_t.end()) > *std::min_element(pos_t.begin(), pos_t.end());
  if (have_line) {
    lin = detail::ordinary_least_squares(pos_t, pos_log);
    a0 = std::exp(lin.intercept);
    g0 = std::max(-lin.slope, 0.0);
  }
  require(have_line || opt.refine, "fit_exponential: log-linear path needs at least 2 positive points");

  FitResult fit;
  fit.model = FitModel::exponential;
  fit.n_points = lags.size();
  if (!opt.refine) {
    fit.params = {{"a", a0, a0 * lin.se_intercept}, {"gamma", g0, lin.se_slope}};
    fit.converged = true;
    fit.metadata["path"] = "log_linear";
  } else {
    auto residual = [&](const Eigen::VectorXd& p) {
      Eigen::VectorXd r(static_cast<Eigen::Index>(lags.size()));
      for (std::size_t k = 0; k < lags.size(); ++k)
        r(static_cast<Eigen::Index>(k)) = p(0) * std::exp(-p(1) * lags[k]) - values[k];
      return r;
    };
    Bounds bounds{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity())};
    const auto nls = nls_minimize(residual, Eigen::Vector2d(a0, g0), bounds);
    fit.params = {{"a", nls.params(0), detail::safe_sqrt(nls.covariance(0, 0))},
                  {"gamma", nls.params(1), detail::safe_sqrt(nls.covariance(1, 1))}};
    fit.converged = nls.converged;
    fit.gradient_norm = nls.gradient_norm;
    fit.iterations = nls.iterations;
    fit.metadata["path"] = "log_linear+nls";
  }
  std::vector<double> pred(lags.size());
  for (std::size_t k = 0; k < lags.size(); ++k) pred[k] = fit.params[0].value * std::exp(-fit.params[1].value * lags[k]);
  fit.r2 = detail::r_squared(values, pred);
  const double g = fit.params[1].value;
  fit.metadata["tau"] = g > 0.0 ? std::to_string(1.0 / g) : "inf";
  return fit;
}

}  // namespace urbanflow
