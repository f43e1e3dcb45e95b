#include <gtest/gtest.h>

#include <algorithm>
#include <memory>
#include <numeric>

#include "oracles.hpp"
#include "rssfield/baseline.hpp"
#include "rssfield/synth.hpp"

using namespace rssfield;

namespace {

std::vector<Position> random_points(Rng& rng, int n, double lo, double hi) {
  std::vector<Position> out;
  for (int i = 0; i < n; ++i) out.push_back({uniform(rng, lo, hi), uniform(rng, lo, hi)});
  return out;
}

std::vector<oracle::Pt> pts_of(std::span<const Position> v) {
  std::vector<oracle::Pt> out;
  for (const auto& p : v) out.push_back({p.x, p.y});
  return out;
}

}  // namespace

TEST(Variogram, ZeroResidualsGiveZeroSill) {
  Rng rng = make_rng(1);
  const auto pts = random_points(rng, 40, 0, 100);
  const VariogramModel m = fit_variogram(Vector::Zero(40), pts);
  EXPECT_NEAR(m.sill, 0.0, 1e-12);
  EXPECT_NEAR(m.nugget, 0.0, 1e-12);
}

TEST(Variogram, DuplicatesOnlyFeedTheZeroBin) {
  Rng rng = make_rng(2);
  auto pts = random_points(rng, 20, 0, 100);
  Vector r = standard_normal(rng, 20);
  const EmpiricalVariogram base = empirical_variogram(r, pts);
  pts.push_back(pts[0]);
  Vector r2(21);
  r2 << r, r[0] + 2.0;
  const EmpiricalVariogram dup = empirical_variogram(r2, pts);
  EXPECT_EQ(base.zero_count, 0.0);
  EXPECT_EQ(dup.zero_count, 1.0);
  EXPECT_DOUBLE_EQ(dup.zero_gamma, 0.5 * 4.0);
  // Pairs at positive lag: the duplicate adds 19 new ones, none at lag zero.
  const double base_pairs = std::accumulate(base.count.begin(), base.count.end(), 0.0);
  const double dup_pairs = std::accumulate(dup.count.begin(), dup.count.end(), 0.0);
  EXPECT_LE(dup_pairs - base_pairs, 19.0);
}

TEST(Variogram, RecoversShadowingModel) {
  const Scenario s = Scenario::paper_default();
  const auto corr = std::make_shared<const GridCorrelation>(s.grid, 50.0);
  std::vector<double> sills, ranges;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(70, static_cast<std::uint64_t>(seed));
    const ShadowingField field(corr, std::sqrt(10.0), rng);
    const auto pts = random_points(rng, 218, 0, 500);
    const Vector v = field.sample_at(pts, rng);
    const VariogramModel m = fit_variogram(v, pts);
    sills.push_back(m.sill + m.nugget);
    ranges.push_back(m.range);
  }
  std::sort(sills.begin(), sills.end());
  std::sort(ranges.begin(), ranges.end());
  const double sill = 0.5 * (sills[9] + sills[10]);
  const double range = 0.5 * (ranges[9] + ranges[10]);
  EXPECT_GT(sill, 5.0);
  EXPECT_LT(sill, 15.0);
  EXPECT_GT(range, 25.0);
  EXPECT_LT(range, 100.0);
}

TEST(Variogram, TooFewPoints) {
  const std::vector<Position> pts{{0, 0}, {1, 0}, {2, 0}};
  EXPECT_THROW(fit_variogram(Vector::Zero(3), pts), DegenerateError);
}

TEST(Kriging, ExactInterpolationWithoutNugget) {
  Rng rng = make_rng(3);
  const auto pts = random_points(rng, 12, 0, 100);
  const Vector vals = standard_normal(rng, 12);
  const OrdinaryKriging ok(pts, {0.0, 4.0, 30.0});
  const Matrix sol = ok.solve(std::span<const Position>(pts.data(), 1));
  EXPECT_NEAR(sol.col(0).head(12).dot(vals), vals[0], 1e-9);
}

TEST(Kriging, FourPointSystemMatchesDirectSolve) {
  const std::vector<Position> pts{{0, 0}, {10, 0}, {0, 15}, {12, 9}};
  Vector vals(4);
  vals << 1.0, -0.5, 2.0, 0.3;
  const Position target{4, 5};
  const VariogramModel m{0.3, 5.0, 20.0};
  const Matrix sol = OrdinaryKriging(pts, m).solve(std::span<const Position>(&target, 1));
  const oracle::Krige o = oracle::krige(pts_of(pts), vals, {4, 5}, 0.3, 5.0, 20.0);
  EXPECT_LT((sol.col(0).head(4) - o.weights).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(sol.col(0).head(4).dot(vals), o.prediction, 1e-10);
}

TEST(Okd, MatchesOracleAndWeightsSumToOne) {
  Rng rng = make_rng(4);
  TrainingSet train;
  train.positions = random_points(rng, 30, 0, 200);
  HyperEstimate h;
  h.mu_P = -10;
  h.mu_alpha = 3.5;
  h.tx = {100, 100};
  train.z = prior_mean(train.positions, h) + 2.0 * standard_normal(rng, 30);
  const Grid g = Grid::uniform({0, 0, 200, 200}, 5, 5);
  const VariogramModel m{0.5, 4.0, 40.0};
  const OkdResult r = okd_predict(train, g, h, &m);
  const Vector resid = train.z - prior_mean(train.positions, h);
  const Vector trend = prior_mean(g.nodes(), h);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const oracle::Krige o = oracle::krige(pts_of(train.positions), resid, {g[i].x, g[i].y}, 0.5, 4.0, 40.0);
    EXPECT_NEAR(r.prediction[k], trend[k] + o.prediction, 1e-8);
    EXPECT_NEAR(r.variance[k], o.variance, 1e-8);
    EXPECT_NEAR(r.weight_sums[k], 1.0, 1e-8);
  }
  EXPECT_FALSE(r.singular);
}

TEST(Okd, FittedVariogramPathRuns) {
  const Scenario s = Scenario::paper_default();
  Rng rng = make_rng(5);
  const auto [snap, truth] = sample_snapshot(s, 0, rng);
  HyperEstimate h;
  h.mu_P = -10;
  h.mu_alpha = 3.5;
  h.tx = s.params.tx;
  const OkdResult r = okd_predict(TrainingSet::from(snap), s.grid, h);
  EXPECT_EQ(r.prediction.size(), 1088);
  EXPECT_TRUE(r.variance.allFinite());
  EXPECT_LT((r.weight_sums.array() - 1.0).abs().maxCoeff(), 1e-8);
}
