#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "urbanflow/ingest.hpp"

using namespace urbanflow;
using testing_util::TempDir;

namespace {

constexpr const char* kPlanarHeader = "id,name,x_km,y_km\n";

CensusPanel load_planar(const TempDir& dir, const std::string& munis, const std::string& pops) {
  return load_census(dir.write("m.csv", kPlanarHeader + munis), dir.write("p.csv", "id,year,population\n" + pops),
                     Geometry::planar);
}

}  // namespace

TEST(LoadCensus, UniformInputGivesConstantTotal) {
  TempDir dir;
  std::string pops;
  for (const char* id : {"a", "b", "c"})
    for (int y = 2000; y < 2003; ++y) pops += std::string(id) + "," + std::to_string(y) + ",100\n";
  const auto panel = load_planar(dir, "a,A,0,0\nb,B,1,0\nc,C,0,1\n", pops);
  ASSERT_EQ(panel.year_count(), 3u);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(panel.total(t), 300.0);
}

TEST(LoadCensus, FiveCityHandTotals) {
  TempDir dir;
  const std::string pops =
      "a,2001,120\nb,2001,35\nc,2001,7\nd,2001,1000\ne,2001,0\n"
      "a,2002,118\nb,2002,40\nc,2002,9\nd,2002,990\ne,2002,3\n"
      "a,2003,125\nb,2003,38\nc,2003,11\nd,2003,1003\ne,2003,2\n";
  const auto panel = load_planar(dir, "a,A,0,0\nb,B,1,0\nc,C,2,0\nd,D,3,0\ne,E,4,0\n", pops);
  EXPECT_EQ(panel.total(0), 1162.0);
  EXPECT_EQ(panel.total(1), 1160.0);
  EXPECT_EQ(panel.total(2), 1179.0);
  EXPECT_EQ(panel.years(), (std::vector<int>{2001, 2002, 2003}));
}

TEST(LoadCensus, BundledFixtureFirstYearTotal) {
  const std::string dir = FIXTURE_DIR;
  const auto panel = load_census(dir + "/municipalities.csv", dir + "/populations.csv", Geometry::planar);
  EXPECT_EQ(panel.city_count(), 5u);
  EXPECT_EQ(panel.year_count(), 30u);
  EXPECT_EQ(panel.total(0), 400000.0 + 250000.0 + 150000.0 + 90000.0 + 50000.0);
}

TEST(LoadCensus, RowOrderDoesNotMatter) {
  TempDir dir;
  const auto a = load_planar(dir, "a,A,0,0\nb,B,1,0\n", "a,1,5\nb,1,6\na,2,7\nb,2,8\n");
  const auto b = load_planar(dir, "a,A,0,0\nb,B,1,0\n", "b,2,8\na,2,7\nb,1,6\na,1,5\n");
  EXPECT_EQ(a.population(), b.population());
}

TEST(LoadCensus, NonContiguousYears) {
  TempDir dir;
  try {
    load_planar(dir, "a,A,0,0\n", "a,1998,10\na,2000,11\n");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("non-contiguous years"), std::string::npos);
  }
}

TEST(LoadCensus, UnknownIdReportsLine) {
  TempDir dir;
  try {
    load_planar(dir, "a,A,0,0\n", "a,1,10\nzz,1,11\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("unknown municipality"), std::string::npos);
  }
}

TEST(LoadCensus, NegativePopulation) {
  TempDir dir;
  EXPECT_THROW(load_planar(dir, "a,A,0,0\n", "a,1,-1\n"), ParseError);
}

TEST(LoadCensus, MalformedRowReportsLine) {
  TempDir dir;
  try {
    load_planar(dir, "a,A,0,0\n", "a,1,10\na,2,ten\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(load_planar(dir, "a,A,0,0\n", "a,1\n"), ParseError);
}

TEST(LoadCensus, GapInCoverage) {
  TempDir dir;
  EXPECT_THROW(load_planar(dir, "a,A,0,0\nb,B,1,1\n", "a,1,10\nb,1,10\na,2,10\n"), ValidationError);
}

TEST(LoadCensus, DuplicateRowsAndIds) {
  TempDir dir;
  EXPECT_THROW(load_planar(dir, "a,A,0,0\n", "a,1,10\na,1,11\n"), ParseError);
  EXPECT_THROW(load_planar(dir, "a,A,0,0\na,B,1,1\n", "a,1,10\n"), ParseError);
}

TEST(LoadCensus, MissingFile) {
  EXPECT_THROW(load_census("/nonexistent/m.csv", "/nonexistent/p.csv"), ValidationError);
}

TEST(LoadCensus, SphericalHeaderAndRange) {
  TempDir dir;
  const auto m = dir.write("m.csv", "id,name,lon,lat\na,\"Town, North\",-3.7,40.4\nb,B,2.17,41.39\n");
  const auto p = dir.write("p.csv", "id,year,population\na,1,10\nb,1,20\n");
  const auto panel = load_census(m, p);
  EXPECT_EQ(panel.municipalities()[0].name, "Town, North");
  const auto bad = dir.write("bad.csv", "id,name,lon,lat\na,A,0,95\n");
  EXPECT_THROW(load_census(bad, p), ParseError);
}

TEST(ToRelative, SingleCity) {
  const CensusPanel panel({1, 2, 3}, {{"a", "A", PlanarPoint{0, 0}}}, Eigen::RowVector3d(5, 7, 9));
  const auto rel = to_relative(panel);
  EXPECT_TRUE(rel.x.isOnes());
  EXPECT_TRUE(rel.xdot.isZero(0.0));
}

TEST(ToRelative, ConstantPopulations) {
  Eigen::MatrixXd X(2, 3);
  X << 10, 10, 10, 30, 30, 30;
  const CensusPanel panel({1, 2, 3}, {{"a", "A", PlanarPoint{0, 0}}, {"b", "B", PlanarPoint{1, 0}}}, X);
  EXPECT_TRUE(to_relative(panel).xdot.isZero(0.0));
}

TEST(ToRelative, HandArithmetic) {
  Eigen::MatrixXd X(2, 2);
  X << 100, 200, 100, 100;
  const CensusPanel panel({1, 2}, {{"a", "A", PlanarPoint{0, 0}}, {"b", "B", PlanarPoint{1, 0}}}, X);
  const auto rel = to_relative(panel);
  EXPECT_DOUBLE_EQ(rel.x(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(rel.x(0, 1), 2.0 / 3.0);
  EXPECT_NEAR(rel.xdot(0, 0), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(rel.xdot(1, 0), -1.0 / 6.0, 1e-15);
}

TEST(ToRelative, ColumnSumsAndScaleInvariance) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1e5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 9, T = 2 + trial % 7;
    Eigen::MatrixXd X(n, T);
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < T; ++t) X(i, t) = (i == 0 && t == 0) ? 0.0 : u(rng);
    std::vector<Municipality> cities;
    for (int i = 0; i < n; ++i) cities.push_back({"c" + std::to_string(i), "", PlanarPoint{double(i), 0}});
    std::vector<int> years(T);
    for (int t = 0; t < T; ++t) years[t] = 2000 + t;
    const auto rel = to_relative(CensusPanel(years, cities, X));
    for (int t = 0; t < T; ++t) EXPECT_NEAR(rel.x.col(t).sum(), 1.0, 1e-12);
    for (int t = 0; t + 1 < T; ++t) EXPECT_NEAR(rel.xdot.col(t).sum(), 0.0, 1e-12);
    const auto scaled = to_relative(CensusPanel(years, cities, 37.5 * X));
    EXPECT_LT((scaled.x - rel.x).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(DistanceMatrix, Planar) {
  const std::vector<Municipality> c{{"a", "", PlanarPoint{0, 0}}, {"b", "", PlanarPoint{3, 4}}, {"c", "", PlanarPoint{3, 4}}};
  const auto d = distance_matrix(c, Geometry::planar);
  EXPECT_DOUBLE_EQ(d.r(0, 1), 5.0);
  EXPECT_EQ(d.r(1, 2), 0.0);
}

TEST(DistanceMatrix, OneDegreeOfLatitude) {
  const std::vector<Municipality> c{{"a", "", GeoPoint{0, 0}}, {"b", "", GeoPoint{0, 1}}};
  EXPECT_NEAR(distance_matrix(c, Geometry::spherical).r(0, 1), 111.19, 0.1);
}

TEST(DistanceMatrix, MixedKindsRejected) {
  const std::vector<Municipality> c{{"a", "", GeoPoint{0, 0}}, {"b", "", PlanarPoint{0, 1}}};
  EXPECT_THROW(distance_matrix(c, Geometry::spherical), ValidationError);
  EXPECT_THROW(distance_matrix(c, Geometry::planar), ValidationError);
}

TEST(DistanceMatrix, SymmetricZeroDiagonal) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lon(-180, 180), lat(-90, 90);
  std::vector<Municipality> geo, flat;
  for (int i = 0; i < 12; ++i) {
    geo.push_back({"g" + std::to_string(i), "", GeoPoint{lon(rng), lat(rng)}});
    flat.push_back({"p" + std::to_string(i), "", PlanarPoint{lon(rng), lat(rng)}});
  }
  for (const auto& d : {distance_matrix(geo, Geometry::spherical), distance_matrix(flat, Geometry::planar)}) {
    EXPECT_EQ(d.r, d.r.transpose());
    EXPECT_TRUE(d.r.diagonal().isZero(0.0));
  }
}
