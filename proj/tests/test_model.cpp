#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "rssfield/model.hpp"

using namespace rssfield;

TEST(PairwiseDistance, SpecialCases) {
  EXPECT_EQ(pairwise_distance({0, 0}, {0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(pairwise_distance({0, 0}, {3, 4}), 5.0);
}

TEST(PairwiseDistance, MatchesCoordinateFormula) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1000.0, 1000.0);
  for (int i = 0; i < 100; ++i) {
    const Position a{u(rng), u(rng)};
    const Position b{u(rng), u(rng)};
    EXPECT_NEAR(pairwise_distance(a, b), oracle::dist({a.x, a.y}, {b.x, b.y}), 1e-9);
    EXPECT_DOUBLE_EQ(pairwise_distance(a, b), pairwise_distance(b, a));
  }
}

TEST(PairwiseDistance, TriangleInequality) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 500; ++i) {
    const Position a{u(rng), u(rng)}, b{u(rng), u(rng)}, c{u(rng), u(rng)};
    EXPECT_LE(pairwise_distance(a, c), pairwise_distance(a, b) + pairwise_distance(b, c) + 1e-12);
  }
}

TEST(LogDistanceFeature, Values) {
  EXPECT_EQ(log_distance_feature(1.0), 0.0);
  EXPECT_DOUBLE_EQ(log_distance_feature(10.0), 10.0);
  EXPECT_NEAR(log_distance_feature(13.16), oracle::db10(13.16), 1e-12);
  EXPECT_NEAR(log_distance_feature(13.16), 11.192, 1e-3);
}

TEST(LogDistanceFeature, RejectsNonPositive) {
  EXPECT_THROW(log_distance_feature(0.0), DomainError);
  EXPECT_THROW(log_distance_feature(-3.0), DomainError);
}

TEST(LogDistanceFeature, StrictlyIncreasing) {
  double prev = log_distance_feature(1e-3);
  for (double d = 2e-3; d < 1e4; d *= 1.37) {
    const double v = log_distance_feature(d);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(RhoU, ReferenceValues) {
  EXPECT_NEAR(rho_u_from(3.5, 13.16), 200.0, 0.1);
  EXPECT_NEAR(rho_u_from(3.5, 75.0), 1140.0, 1.0);
  EXPECT_EQ(rho_u_from(0.0, 50.0), 0.0);
}

TEST(RhoU, LinearInEachArgument) {
  EXPECT_NEAR(rho_u_from(7.0, 13.16), 2.0 * rho_u_from(3.5, 13.16), 1e-9);
  EXPECT_NEAR(rho_u_from(3.5, 3.0 * 13.16), 3.0 * rho_u_from(3.5, 13.16), 1e-9);
}

TEST(Distances, ClampedAtOneMeter) {
  EXPECT_EQ(clamped_distance({0, 0}, {0.2, 0.1}), kMinDistance);
  const std::vector<Position> pts{{0, 0}, {3, 4}, {0.5, 0}};
  const Vector d = distances_to({0, 0}, pts);
  EXPECT_EQ(d[0], 1.0);
  EXPECT_DOUBLE_EQ(d[1], 5.0);
  EXPECT_EQ(d[2], 1.0);
}

TEST(Grid, UniformLayoutAndInvariants) {
  const Grid g = Grid::uniform({0, 0, 500, 500}, 34, 32);
  EXPECT_EQ(g.size(), 1088u);
  EXPECT_DOUBLE_EQ(g[0].x, 500.0 / 34 / 2);
  EXPECT_DOUBLE_EQ(g[0].y, 500.0 / 32 / 2);
  EXPECT_DOUBLE_EQ(g[1].y, g[0].y);
  EXPECT_THROW(Grid(std::vector<Position>{}), DomainError);
  EXPECT_THROW(Grid(std::vector<Position>{{1, 1}, {2, 2}, {1, 1}}), DomainError);
  EXPECT_THROW(Grid(std::vector<Position>{{1, std::nan("")}}), DomainError);
}

TEST(Snapshot, Validation) {
  MeasurementSnapshot s;
  s.sensors = {{1, {0, 0}, -50}, {2, {1, 1}, -60}};
  EXPECT_NO_THROW(s.validate());
  s.sensors.push_back({1, {2, 2}, -70});
  EXPECT_THROW(s.validate(), DomainError);
  s.sensors.pop_back();
  s.sensors.push_back({3, {2, 2}, std::numeric_limits<double>::infinity()});
  EXPECT_THROW(s.validate(), DomainError);
  s.sensors.pop_back();
  s.t = -1;
  EXPECT_THROW(s.validate(), DomainError);
}

TEST(PropagationParams, Validation) {
  PropagationParams p;
  EXPECT_NO_THROW(p.validate());
  p.sigma_v = -1.0;
  EXPECT_THROW(p.validate(), DomainError);
}
