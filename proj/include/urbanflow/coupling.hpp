#pragma once

// Lorentzian force coupling R, the unit-diagonal force correlation Q = R R^T
// (normalized), its normal modes, and the stationary lag correlation of the
// damped velocities.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "urbanflow/error.hpp"
#include "urbanflow/ingest.hpp"

namespace urbanflow {

/// Coupling kernel 2 (2 / (pi r0^2))^{1/4} / (1 + 4 (r/r0)^2).
inline double coupling_kernel(double r_km, double r0_km) {
  const double prefactor = 2.0 * std::pow(2.0 / (std::numbers::pi * r0_km * r0_km), 0.25);
  const double s = r_km / r0_km;
  return prefactor / (1.0 + 4.0 * s * s);
}

inline Eigen::MatrixXd build_R(std::span<const PlanarPoint> positions, double r0_km) {
  require(r0_km > 0.0, "build_R: r0 must be positive");
  const auto n = static_cast<Eigen::Index>(positions.size());
  Eigen::MatrixXd R(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j)
      R(i, j) = R(j, i) = coupling_kernel(
          planar_km(positions[static_cast<std::size_t>(i)], positions[static_cast<std::size_t>(j)]), r0_km);
  return R;
}

/// Q_ij = (R R^T)_ij / sqrt((R R^T)_ii (R R^T)_jj); the diagonal is set to
/// exactly 1.
inline Eigen::MatrixXd build_Q(const Eigen::MatrixXd& R) {
  require(R.rows() == R.cols(), "build_Q: R must be square");
  Eigen::MatrixXd Q = R * R.transpose();
  const Eigen::VectorXd d = Q.diagonal();
  require((d.array() > 0.0).all(), "build_Q: zero diagonal in R R^T");
  const Eigen::VectorXd inv = d.cwiseSqrt().cwiseInverse();
  Q = inv.asDiagonal() * Q * inv.asDiagonal();
  Q = 0.5 * (Q + Q.transpose());
  Q.diagonal().setOnes();
  return Q;
}

struct NormalModes {
  Eigen::VectorXd eigenvalues;  // descending
  Eigen::MatrixXd basis;        // rows are eigenvectors: A Q A^T = diag
};

/// Symmetric eigendecomposition. Each eigenvector is signed so that its
/// largest-magnitude component (first one on ties) is positive.
inline NormalModes eigendecompose(const Eigen::MatrixXd& Q) {
  require(Q.rows() == Q.cols(), "eigendecompose: matrix must be square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Q);
  if (solver.info() != Eigen::Success) throw NumericError("eigendecompose: solver failed");
  const auto n = Q.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return solver.eigenvalues()(a) > solver.eigenvalues()(b); });
  NormalModes modes{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto src = order[static_cast<std::size_t>(k)];
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index big = 0;
    for (Eigen::Index c = 1; c < n; ++c)
      if (std::abs(v(c)) > std::abs(v(big)) * (1.0 + 1e-12)) big = c;
    if (v(big) < 0.0) v = -v;
    modes.eigenvalues(k) = solver.eigenvalues()(src);
    modes.basis.row(k) = v.transpose();
  }
  return modes;
}

struct CouplingSet {
  std::vector<PlanarPoint> positions;
  double r0_km = 0.0;
  Eigen::MatrixXd R;
  Eigen::MatrixXd Q;
  NormalModes modes;
};

inline CouplingSet make_coupling(std::vector<PlanarPoint> positions, double r0_km) {
  CouplingSet set;
  set.R = build_R(positions, r0_km);
  set.Q = build_Q(set.R);
  set.modes = eigendecompose(set.Q);
  set.positions = std::move(positions);
  set.r0_km = r0_km;
  return set;
}

/// Target of the continuum-limit check: 1 / (1 + (r/r0)^2).
inline double continuum_target(double r_km, double r0_km) {
  const double s = r_km / r0_km;
  return 1.0 / (1.0 + s * s);
}

struct ContinuumGrid {
  double spacing_km = 0.0;  // h
  double extent_km = 0.0;   // L, side of the square (or length of the line)
  double r0_km = 0.0;
  int dimensions = 2;  // 2 = square grid, 1 = line
};

struct ContinuumCheck {
  double max_deviation = 0.0;  // over r <= L/3 from the central node
  double r_at_max = 0.0;
  std::size_t nodes = 0;
};

/// Builds R on a regular grid (odd node count per side, centered), normalizes
/// Q and compares the central row with the continuum target. Only the
/// central row and the diagonal of R R^T are needed; the grid symmetry about
/// the center reduces the row to one octant.
inline ContinuumCheck continuum_Q_check(const ContinuumGrid& g) {
  require(g.r0_km > 0.0 && g.spacing_km > 0.0, "continuum_Q_check: r0 and spacing must be positive");
  require(g.spacing_km <= g.r0_km / 10.0 * (1.0 + 1e-12), "continuum_Q_check: grid too coarse (need h <= r0/10)");
  require(g.extent_km >= 6.0 * g.r0_km * (1.0 - 1e-12), "continuum_Q_check: grid too small (need L >= 6 r0)");
  require(g.dimensions == 1 || g.dimensions == 2, "continuum_Q_check: dimensions must be 1 or 2");

  long long m = std::llround(g.extent_km / g.spacing_km);
  if (m % 2 == 0) ++m;
  const long long half = m / 2;
  const double h = g.spacing_km;
  const long long span = 2 * half;  // offsets in [-span, span]
  const bool flat = g.dimensions == 1;

  // Kernel by integer offset, squared kernel summed-area table for the diagonal.
  const long long w = 2 * span + 1;
  const long long wy = flat ? 1 : w;
  std::vector<double> K(static_cast<std::size_t>(w * wy));
  auto kidx = [&](long long dx, long long dy) { return static_cast<std::size_t>((dx + span) * wy + (flat ? 0 : dy + span)); };
  for (long long dx = -span; dx <= span; ++dx)
    for (long long dy = flat ? 0 : -span; dy <= (flat ? 0 : span); ++dy)
      K[kidx(dx, dy)] = coupling_kernel(h * std::hypot(static_cast<double>(dx), static_cast<double>(dy)), g.r0_km);

  std::vector<double> sat(static_cast<std::size_t>((w + 1) * (wy + 1)), 0.0);
  auto sidx = [&](long long a, long long b) { return static_cast<std::size_t>(a * (wy + 1) + b); };
  for (long long a = 0; a < w; ++a)
    for (long long b = 0; b < wy; ++b) {
      const double k = K[static_cast<std::size_t>(a * wy + b)];
      sat[sidx(a + 1, b + 1)] = k * k + sat[sidx(a, b + 1)] + sat[sidx(a + 1, b)] - sat[sidx(a, b)];
    }
  // Sum of K^2 over all grid nodes seen from node (ix, iy): offsets ix - k.
  auto diag = [&](long long ix, long long iy) {
    const long long a0 = ix - half + span, a1 = ix + half + span;  // inclusive offset-index range
    const long long b0 = flat ? 0 : iy - half + span, b1 = flat ? 0 : iy + half + span;
    return sat[sidx(a1 + 1, b1 + 1)] - sat[sidx(a0, b1 + 1)] - sat[sidx(a1 + 1, b0)] + sat[sidx(a0, b0)];
  };

  const double center_diag = diag(0, 0);
  const double r_max = g.extent_km / 3.0;
  const auto reach = static_cast<long long>(std::floor(r_max / h));
  ContinuumCheck out;
  out.nodes = static_cast<std::size_t>(flat ? m : m * m);
  for (long long jx = 0; jx <= std::min(reach, half); ++jx) {
    for (long long jy = 0; jy <= (flat ? 0 : jx); ++jy) {
      const double r = h * std::hypot(static_cast<double>(jx), static_cast<double>(jy));
      if (r > r_max) continue;
      double cross = 0.0;
      for (long long kx = -half; kx <= half; ++kx)
        for (long long ky = flat ? 0 : -half; ky <= (flat ? 0 : half); ++ky)
          cross += K[kidx(kx, ky)] * K[kidx(jx - kx, jy - ky)];
      const double q = cross / std::sqrt(center_diag * diag(jx, jy));
      const double dev = std::abs(q - continuum_target(r, g.r0_km));
      if (dev > out.max_deviation) {
        out.max_deviation = dev;
        out.r_at_max = r;
      }
    }
  }
  return out;
}

/// C_ij(dt) = Q_ij exp(-gamma_j dt) 2 sqrt(gamma_i gamma_j) / (gamma_i + gamma_j).
inline Eigen::MatrixXd analytic_correlation(const Eigen::MatrixXd& Q, std::span<const double> gamma, double dt) {
  require(Q.rows() == Q.cols() && static_cast<std::size_t>(Q.rows()) == gamma.size(),
          "analytic_correlation: size mismatch");
  require(dt >= 0.0, "analytic_correlation: dt must be >= 0");
  for (double g : gamma) require(g > 0.0, "analytic_correlation: gamma must be positive");
  Eigen::MatrixXd C(Q.rows(), Q.cols());
  for (Eigen::Index i = 0; i < Q.rows(); ++i)
    for (Eigen::Index j = 0; j < Q.cols(); ++j) {
      const double gi = gamma[static_cast<std::size_t>(i)], gj = gamma[static_cast<std::size_t>(j)];
      C(i, j) = Q(i, j) * std::exp(-gj * dt) * 2.0 * std::sqrt(gi * gj) / (gi + gj);
    }
  return C;
}

/// Mode export, one row per (city, mode) for modes [first, first + count).
inline void write_modes_csv(std::ostream& os, std::span<const std::string> ids, std::span<const PlanarPoint> positions,
                            const NormalModes& modes, std::size_t first, std::size_t count) {
  require(first + count <= static_cast<std::size_t>(modes.basis.rows()), "write_modes_csv: mode index out of range");
  os << "city_id,x_km,y_km,mode_index,component\n";
  os.precision(17);
  for (std::size_t k = first; k < first + count; ++k)
    for (std::size_t i = 0; i < ids.size(); ++i)
      os << ids[i] << ',' << positions[i].x_km << ',' << positions[i].y_km << ',' << k + 1 << ','
         << modes.basis(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) << '\n';
}

}  // namespace urbanflow
