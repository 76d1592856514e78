#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "urbanflow/stats.hpp"

using namespace urbanflow;

TEST(Stats, MedianMidpointConvention) {
  EXPECT_EQ(stats::median({0.3, 0.1, 0.2}), 0.2);
  EXPECT_EQ(stats::median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_THROW(stats::median({}), ValidationError);
}

TEST(Stats, PopulationVariance) { EXPECT_DOUBLE_EQ(stats::variance(std::vector<double>{1, 3}), 1.0); }

TEST(Stats, PearsonExtremesAndZeroVariance) {
  const std::vector<double> a{1, 2, 4, 8}, b{-1, -2, -4, -8}, flat{3, 3, 3, 3};
  EXPECT_NEAR(*stats::pearson(a, a), 1.0, 1e-15);
  EXPECT_NEAR(*stats::pearson(a, b), -1.0, 1e-15);
  EXPECT_FALSE(stats::pearson(a, flat).has_value());
}

TEST(Stats, PearsonAffineProperty) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(20), b(20), a2(20), a3(20);
    for (auto& v : a) v = z(rng);
    for (auto& v : b) v = z(rng);
    const double s = scale(rng), shift = z(rng);
    for (std::size_t k = 0; k < a.size(); ++k) {
      a2[k] = s * a[k] + shift;
      a3[k] = -s * a[k] + shift;
    }
    const double c = *stats::pearson(a, b);
    EXPECT_NEAR(*stats::pearson(a2, b), c, 1e-12);
    EXPECT_NEAR(*stats::pearson(a3, b), -c, 1e-12);
  }
}

TEST(Stats, MovingAverageTruncatesAtEnds) {
  const std::vector<double> y{1, 2, 3, 4, 5};
  const auto m = stats::moving_average(y, 3);
  EXPECT_DOUBLE_EQ(m[0], 1.5);
  EXPECT_DOUBLE_EQ(m[2], 3.0);
  EXPECT_DOUBLE_EQ(m[4], 4.5);
  EXPECT_EQ(stats::moving_average(y, 1), y);
}

TEST(Stats, ChiSquareTail) {
  EXPECT_NEAR(stats::chi_square_p(3.841458820694124, 1.0), 0.05, 1e-9);
  EXPECT_NEAR(stats::chi_square_p(2.0, 2.0), std::exp(-1.0), 1e-12);
}

TEST(Stats, KolmogorovSurvivalKnownQuantiles) {
  EXPECT_NEAR(stats::kolmogorov_survival(1.3581), 0.05, 1e-4);
  EXPECT_NEAR(stats::kolmogorov_survival(1.6276), 0.01, 1e-4);
}

TEST(Stats, KsAcceptsAndRejects) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(5000);
  for (auto& v : s) v = u(rng);
  auto cdf = [](double x) { return std::clamp(x, 0.0, 1.0); };
  EXPECT_GT(stats::ks_test(s, cdf).p_value, 0.01);
  for (auto& v : s) v = v * v;
  EXPECT_LT(stats::ks_test(s, cdf).p_value, 1e-6);
}

TEST(Stats, KsNullRejectionRateNearLevel) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int rejected = 0;
  const int trials = 2000;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<double> s(50);
    for (auto& v : s) v = u(rng);
    rejected += stats::ks_test(s, [](double x) { return x; }).p_value < 0.05;
  }
  // Binomial(2000, 0.05): mean 100, sd ~9.7.
  EXPECT_NEAR(rejected, 100, 40);
}
