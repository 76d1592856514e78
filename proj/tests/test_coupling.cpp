#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "urbanflow/coupling.hpp"

using namespace urbanflow;

namespace {

std::vector<PlanarPoint> random_points(std::mt19937_64& rng, int n, double box = 250.0) {
  std::uniform_real_distribution<double> u(0.0, box);
  std::vector<PlanarPoint> pts(static_cast<std::size_t>(n));
  for (auto& p : pts) p = {u(rng), u(rng)};
  return pts;
}

Eigen::MatrixXd random_Q(std::mt19937_64& rng, int n) { return build_Q(build_R(random_points(rng, n), 74.0)); }

// Central row of the normalized grid Q, by direct summation over all nodes.
double brute_force_grid_deviation(double h, double extent, double r0) {
  long long m = std::llround(extent / h);
  if (m % 2 == 0) ++m;
  const long long half = m / 2;
  std::vector<std::pair<double, double>> nodes;
  for (long long a = -half; a <= half; ++a)
    for (long long b = -half; b <= half; ++b) nodes.emplace_back(a * h, b * h);
  const double pref = 2.0 * std::pow(2.0 / (std::numbers::pi * r0 * r0), 0.25);
  auto R = [&](const auto& p, const auto& q) {
    const double dx = p.first - q.first, dy = p.second - q.second;
    return pref / (1.0 + 4.0 * (dx * dx + dy * dy) / (r0 * r0));
  };
  const std::pair<double, double> center{0.0, 0.0};
  auto gram = [&](const auto& p, const auto& q) {
    double s = 0;
    for (const auto& k : nodes) s += R(p, k) * R(k, q);
    return s;
  };
  const double d0 = gram(center, center);
  double worst = 0;
  for (const auto& j : nodes) {
    const double r = std::hypot(j.first, j.second);
    if (r > extent / 3.0 || j.first < 0 || j.second < 0 || j.second > j.first) continue;
    const double q = gram(center, j) / std::sqrt(d0 * gram(j, j));
    worst = std::max(worst, std::abs(q - 1.0 / (1.0 + r * r / (r0 * r0))));
  }
  return worst;
}

}  // namespace

TEST(Kernel, ValuesAtZeroAndHalfScale) {
  const double r0 = 74.0, at0 = 2.0 * std::pow(2.0 / (std::numbers::pi * r0 * r0), 0.25);
  EXPECT_DOUBLE_EQ(coupling_kernel(0.0, r0), at0);
  EXPECT_DOUBLE_EQ(coupling_kernel(r0 / 2.0, r0), at0 / 2.0);
}

TEST(BuildR, MatchesScalarLoop) {
  std::mt19937_64 rng(1);
  const auto pts = random_points(rng, 5);
  const auto R = build_R(pts, 74.0);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double dx = pts[i].x_km - pts[j].x_km, dy = pts[i].y_km - pts[j].y_km;
      const double want = 2.0 * std::pow(2.0 / (std::numbers::pi * 74.0 * 74.0), 0.25) / (1.0 + 4.0 * (dx * dx + dy * dy) / (74.0 * 74.0));
      EXPECT_NEAR(R(i, j), want, 1e-14 * want);
    }
  EXPECT_THROW(build_R(pts, 0.0), ValidationError);
}

TEST(BuildR, SymmetricPositiveMaximalOnDiagonal) {
  std::mt19937_64 rng(2);
  const auto R = build_R(random_points(rng, 20), 30.0);
  EXPECT_EQ(R, R.transpose());
  EXPECT_GT(R.minCoeff(), 0.0);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(R.row(i).maxCoeff(), R(i, i));
}

TEST(BuildQ, TrivialCases) {
  const std::vector<PlanarPoint> one{{1, 2}};
  EXPECT_EQ(build_Q(build_R(one, 10.0)), Eigen::MatrixXd::Ones(1, 1));
  const std::vector<PlanarPoint> same{{5, 5}, {5, 5}, {5, 5}};
  EXPECT_LT((build_Q(build_R(same, 10.0)) - Eigen::MatrixXd::Ones(3, 3)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(BuildQ, UnitDiagonalSymmetricPsd) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto Q = random_Q(rng, 6);
    EXPECT_EQ(Q, Q.transpose());
    for (int i = 0; i < 6; ++i) EXPECT_EQ(Q(i, i), 1.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(BuildQ, RigidMotionInvariance) {
  std::mt19937_64 rng(4);
  const auto pts = random_points(rng, 15);
  const double th = 0.7, c = std::cos(th), s = std::sin(th);
  std::vector<PlanarPoint> moved;
  for (const auto& p : pts) moved.push_back({c * p.x_km - s * p.y_km + 1000.0, s * p.x_km + c * p.y_km - 40.0});
  EXPECT_LT((build_Q(build_R(pts, 74.0)) - build_Q(build_R(moved, 74.0))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Eigen, Identity) {
  const auto modes = eigendecompose(Eigen::MatrixXd::Identity(4, 4));
  EXPECT_TRUE(modes.eigenvalues.isOnes(1e-14));
  // Degenerate spectrum: compare the projector, not the vectors.
  EXPECT_TRUE((modes.basis.transpose() * modes.basis).isIdentity(1e-12));
}

TEST(Eigen, AllOnes) {
  const auto modes = eigendecompose(Eigen::MatrixXd::Ones(3, 3));
  EXPECT_NEAR(modes.eigenvalues(0), 3.0, 1e-12);
  EXPECT_NEAR(modes.eigenvalues(1), 0.0, 1e-12);
  EXPECT_NEAR(modes.eigenvalues(2), 0.0, 1e-12);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(modes.basis(0, i), 1.0 / std::sqrt(3.0), 1e-12);
  // Null space projector.
  const Eigen::MatrixXd P = modes.basis.bottomRows(2).transpose() * modes.basis.bottomRows(2);
  EXPECT_LT((P - (Eigen::MatrixXd::Identity(3, 3) - Eigen::MatrixXd::Ones(3, 3) / 3.0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Eigen, ReconstructionOrderAndSigns) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto Q = random_Q(rng, 30);
    const auto m = eigendecompose(Q);
    const Eigen::MatrixXd& A = m.basis;
    EXPECT_LT((A * A.transpose() - Eigen::MatrixXd::Identity(30, 30)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((A.transpose() * m.eigenvalues.asDiagonal() * A - Q).cwiseAbs().maxCoeff(), 1e-8);
    Eigen::MatrixXd D = A * Q * A.transpose();
    D.diagonal().setZero();
    EXPECT_LT(D.cwiseAbs().maxCoeff(), 1e-8);
    for (int k = 1; k < 30; ++k) EXPECT_GE(m.eigenvalues(k - 1), m.eigenvalues(k));
    EXPECT_NEAR(m.eigenvalues.sum(), 30.0, 1e-9);
    EXPECT_GE(m.eigenvalues.minCoeff(), -1e-12);
    for (int k = 0; k < 30; ++k) {
      Eigen::Index big;
      A.row(k).cwiseAbs().maxCoeff(&big);
      EXPECT_GT(A(k, big), 0.0);
    }
  }
}

TEST(Continuum, TargetValues) {
  EXPECT_EQ(continuum_target(0.0, 74.0), 1.0);
  EXPECT_EQ(continuum_target(74.0, 74.0), 0.5);
}

TEST(Continuum, Preconditions) {
  EXPECT_THROW(continuum_Q_check({74.0 / 5, 8 * 74.0, 74.0, 2}), ValidationError);
  EXPECT_THROW(continuum_Q_check({74.0 / 12, 4 * 74.0, 74.0, 2}), ValidationError);
}

TEST(Continuum, OneDimensionalIdentityHoldsAsLineGrows) {
  double previous = 1.0;
  for (double L : {6.0, 12.0, 24.0, 48.0, 96.0}) {
    const auto c = continuum_Q_check({74.0 / 10, L * 74.0, 74.0, 1});
    EXPECT_LT(c.max_deviation, previous);
    previous = c.max_deviation;
  }
  EXPECT_LT(previous, 2e-6);
}

TEST(Continuum, GridCodeMatchesBruteForce) {
  const double r0 = 74.0, h = r0 / 10, L = 6 * r0;
  const auto fast = continuum_Q_check({h, L, r0, 2});
  EXPECT_NEAR(fast.max_deviation, brute_force_grid_deviation(h, L, r0), 1e-12);
  EXPECT_EQ(fast.nodes, 61u * 61u);
}

TEST(Continuum, PlanarDeviationShrinksWithSpacing) {
  // The planar self-convolution is not a Lorentzian; the deviation converges
  // to a finite value as h -> 0.
  const double r0 = 74.0;
  double previous = 1.0;
  for (double div : {12.0, 24.0, 48.0}) {
    const double dev = continuum_Q_check({r0 / div, 8 * r0, r0, 2}).max_deviation;
    EXPECT_LT(dev, previous) << "h = r0/" << div;
    previous = dev;
  }
  EXPECT_NEAR(previous, 0.128, 0.002);
}

TEST(AnalyticCorrelation, UniformGammaAndZeroLag) {
  std::mt19937_64 rng(6);
  const auto Q = random_Q(rng, 8);
  const std::vector<double> g(8, 1.0 / 17.0);
  EXPECT_LT((analytic_correlation(Q, g, 0.0) - Q).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((analytic_correlation(Q, g, 3.0) - Q * std::exp(-3.0 / 17.0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AnalyticCorrelation, HeterogeneousFactorBounded) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lg(std::log(1e-3), std::log(10.0));
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(2, 2);
  for (int k = 0; k < 1000; ++k) {
    const std::vector<double> g{std::exp(lg(rng)), std::exp(lg(rng))};
    const auto C = analytic_correlation(ones, g, 0.0);
    EXPECT_GE(C(0, 1), 0.0);
    EXPECT_LE(C(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(C(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(C(0, 1), C(1, 0));
  }
  const std::vector<double> g{0.05, 0.1};
  const auto C = analytic_correlation(ones, g, 2.0);
  EXPECT_NE(C(0, 1), C(1, 0));
  EXPECT_THROW(analytic_correlation(ones, std::vector<double>{0.1, 0.0}, 1.0), ValidationError);
  EXPECT_THROW(analytic_correlation(ones, g, -1.0), ValidationError);
}

TEST(ModesCsv, ExportsRequestedRows) {
  const std::vector<PlanarPoint> pts{{0, 0}, {10, 0}, {0, 10}};
  const std::vector<std::string> ids{"a", "b", "c"};
  const auto modes = eigendecompose(build_Q(build_R(pts, 20.0)));
  std::ostringstream os;
  write_modes_csv(os, ids, pts, modes, 0, 2);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "city_id,x_km,y_km,mode_index,component");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6);
  EXPECT_THROW(write_modes_csv(os, ids, pts, modes, 2, 2), ValidationError);
}
