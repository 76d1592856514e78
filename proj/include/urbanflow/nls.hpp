#pragma once

// Bound-constrained Levenberg-Marquardt with central-difference Jacobians.

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "urbanflow/error.hpp"

namespace urbanflow {

struct Bounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  static Bounds unbounded(Eigen::Index n) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {Eigen::VectorXd::Constant(n, -inf), Eigen::VectorXd::Constant(n, inf)};
  }
  Eigen::VectorXd clip(const Eigen::VectorXd& p) const { return p.cwiseMax(lower).cwiseMin(upper); }
};

struct NlsOptions {
  int max_iterations = 500;
  double step_tolerance = 1e-10;      // max_k |dp_k| / |p_k|
  double gradient_tolerance = 1e-10;  // scaled gradient, see NlsResult
  double jacobian_step = 1e-6;        // relative
};

struct NlsResult {
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;  // s^2 (J^T J)^{-1}, s^2 = SSR / (m - p)
  double cost = 0.0;           // 0.5 * SSR
  /// Largest |cos| between the residual vector and a free Jacobian column.
  /// Scale free; zero at an interior stationary point.
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

template <class Residual>
Eigen::MatrixXd numeric_jacobian(Residual& f, const Eigen::VectorXd& p, const Eigen::VectorXd& r0, const Bounds& b,
                                 double rel_step) {
  Eigen::MatrixXd J(r0.size(), p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double h = rel_step * std::max(std::abs(p(k)), 1e-8);
    Eigen::VectorXd lo = p, hi = p;
    hi(k) = std::min(p(k) + h, b.upper(k));
    lo(k) = std::max(p(k) - h, b.lower(k));
    const double span = hi(k) - lo(k);
    if (!(span > 0.0)) {
      J.col(k).setZero();
      continue;
    }
    const Eigen::VectorXd rh = hi(k) == p(k) ? r0 : Eigen::VectorXd(f(hi));
    const Eigen::VectorXd rl = lo(k) == p(k) ? r0 : Eigen::VectorXd(f(lo));
    J.col(k) = (rh - rl) / span;
  }
  return J;
}

// A parameter pinned at a bound whose descent direction points outward is
// not free.
inline bool is_free(double p, double g, double lower, double upper) {
  if (p <= lower && g > 0.0) return false;
  if (p >= upper && g < 0.0) return false;
  return true;
}

inline double scaled_gradient(const Eigen::MatrixXd& J, const Eigen::VectorXd& r, const Eigen::VectorXd& p,
                              const Bounds& b) {
  const double rn = r.norm();
  if (rn == 0.0) return 0.0;
  const Eigen::VectorXd g = J.transpose() * r;
  double worst = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double cn = J.col(k).norm();
    if (cn == 0.0 || !is_free(p(k), g(k), b.lower(k), b.upper(k))) continue;
    worst = std::max(worst, std::abs(g(k)) / (cn * rn));
  }
  return worst;
}

inline bool finite(const Eigen::VectorXd& v) { return v.allFinite(); }

// Residuals at roundoff level against the parameter sensitivities |J_k p_k|:
// their direction is noise, so the cosine test says nothing.
inline bool negligible_residual(const Eigen::MatrixXd& J, const Eigen::VectorXd& r, const Eigen::VectorXd& p) {
  double scale = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) scale = std::max(scale, J.col(k).norm() * std::abs(p(k)));
  return r.norm() <= 1e-12 * scale;
}

}  // namespace detail

/// Minimizes 0.5 * |f(p)|^2 subject to lower <= p <= upper. `f` maps a
/// parameter vector to a residual vector of fixed length. Deterministic for a
/// given p0 and data.
template <class Residual>
NlsResult nls_minimize(Residual&& f, const Eigen::VectorXd& p0, const Bounds& bounds, const NlsOptions& opt = {}) {
  require(bounds.lower.size() == p0.size() && bounds.upper.size() == p0.size(), "nls: bounds size mismatch");
  NlsResult res;
  Eigen::VectorXd p = bounds.clip(p0);
  Eigen::VectorXd r = f(p);
  if (!detail::finite(r)) throw NumericError("nls: residuals are not finite at the initial point");
  require(r.size() >= 1, "nls: empty residual vector");
  double cost = 0.5 * r.squaredNorm();
  double lambda = 1e-6;
  Eigen::MatrixXd J = detail::numeric_jacobian(f, p, r, bounds, opt.jacobian_step);

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    Eigen::VectorXd g = J.transpose() * r;
    res.gradient_norm = detail::scaled_gradient(J, r, p, bounds);
    if (res.gradient_norm <= opt.gradient_tolerance || detail::negligible_residual(J, r, p)) {
      res.converged = true;
      break;
    }
    // Parameters held at a bound by the gradient are frozen for this step.
    Eigen::MatrixXd JtJ = J.transpose() * J;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      if (detail::is_free(p(k), g(k), bounds.lower(k), bounds.upper(k))) continue;
      g(k) = 0.0;
      JtJ.row(k).setZero();
      JtJ.col(k).setZero();
      JtJ(k, k) = 1.0;
    }
    const double diag_scale = std::max(JtJ.diagonal().maxCoeff(), 1e-300);

    bool accepted = false;
    double rel_step = 0.0;
    while (!accepted && lambda < 1e20) {
      Eigen::MatrixXd A = JtJ;
      for (Eigen::Index k = 0; k < A.rows(); ++k)
        A(k, k) += lambda * std::max(JtJ(k, k), 1e-12 * diag_scale);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
      Eigen::VectorXd step;
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) step = ldlt.solve(-g);
      if (step.size() == 0 || !step.allFinite()) step = -g / (lambda * diag_scale);  // gradient fallback

      const Eigen::VectorXd trial = bounds.clip(p + step);
      const Eigen::VectorXd rt = f(trial);
      const double ct = detail::finite(rt) ? 0.5 * rt.squaredNorm() : std::numeric_limits<double>::infinity();
      if (ct <= cost) {
        rel_step = 0.0;
        for (Eigen::Index k = 0; k < p.size(); ++k) {
          const double dp = std::abs(trial(k) - p(k));
          if (dp > 0.0) rel_step = std::max(rel_step, dp / std::max(std::abs(p(k)), 1e-300));
        }
        p = trial;
        r = rt;
        cost = ct;
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) {  // damping exhausted: no descent left at this precision
      res.converged = detail::negligible_residual(J, r, p);
      break;
    }
    J = detail::numeric_jacobian(f, p, r, bounds, opt.jacobian_step);
    if (rel_step <= opt.step_tolerance) {
      res.iterations += 1;
      res.gradient_norm = detail::scaled_gradient(J, r, p, bounds);
      res.converged = res.gradient_norm <= std::sqrt(opt.gradient_tolerance) || detail::negligible_residual(J, r, p);
      break;
    }
  }
  if (!res.converged) res.gradient_norm = detail::scaled_gradient(J, r, p, bounds);

  res.params = p;
  res.cost = cost;
  const auto m = r.size();
  const auto n = p.size();
  const double s2 = m > n ? 2.0 * cost / static_cast<double>(m - n) : std::numeric_limits<double>::quiet_NaN();
  const Eigen::MatrixXd JtJ = J.transpose() * J;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(JtJ);
  res.covariance = s2 * cod.pseudoInverse();
  return res;
}

}  // namespace urbanflow
