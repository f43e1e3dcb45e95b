#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "rssfield/linalg.hpp"
#include "rssfield/model.hpp"
#include "rssfield/rng.hpp"

namespace rssfield {

// Sensor dynamics between time steps.
struct StaticSensors {};
struct Intermittent {
  double drop_fraction = 0.2;
};
struct Moving {
  double step_std = 5.0;  // meters per step, per axis
};
struct PowerSchedule {
  std::vector<std::pair<int, double>> entries;  // (t, P dBm), t strictly increasing
};
using Dynamics = std::variant<StaticSensors, Intermittent, Moving, PowerSchedule>;

/// Ground-truth world used by the generator.
struct Scenario {
  PropagationParams params;
  Rect area{0.0, 0.0, 500.0, 500.0};
  Grid grid = Grid::uniform(Rect{0.0, 0.0, 500.0, 500.0}, 34, 32);
  int n_sensors = 218;
  std::uint64_t seed = 1;
  Dynamics dynamics = StaticSensors{};

  /// 500 m x 500 m, transmitter at the centre, 1088 nodes, 218 sensors.
  static Scenario paper_default() { return Scenario{}; }

  void validate() const {
    params.validate();
    if (n_sensors < 0) throw DomainError("Scenario: n_sensors must be >= 0");
    if (!(area.width() > 0.0) || !(area.height() > 0.0)) {
      throw DomainError("Scenario: area must have positive extent");
    }
    if (params.sigma_v > 0.0 && !(params.d_corr > 0.0)) {
      throw DomainError("Scenario: d_corr must be > 0 when sigma_v > 0");
    }
    if (const auto* d = std::get_if<Intermittent>(&dynamics)) {
      if (!(d->drop_fraction >= 0.0 && d->drop_fraction < 1.0)) {
        throw DomainError("Scenario: drop_fraction must lie in [0, 1)");
      }
    } else if (const auto* m = std::get_if<Moving>(&dynamics)) {
      if (!(m->step_std >= 0.0)) throw DomainError("Scenario: step_std must be >= 0");
    } else if (const auto* s = std::get_if<PowerSchedule>(&dynamics)) {
      for (std::size_t i = 1; i < s->entries.size(); ++i) {
        if (s->entries[i].first <= s->entries[i - 1].first) {
          throw DomainError("Scenario: power schedule times must be strictly increasing");
        }
      }
    }
  }
};

struct GroundTruth {
  Vector grid_field;                          // f_g, dBm, shadowing included
  std::vector<Position> sensor_true_positions;
  Vector sensor_shadowing;                    // v at the reporting sensors
};

/// sigma_v^2 exp(-d_ij / d_corr).
inline Matrix shadowing_covariance(std::span<const Position> positions, double sigma_v,
                                   double d_corr) {
  const auto n = static_cast<Eigen::Index>(positions.size());
  Matrix k(n, n);
  const double var = sigma_v * sigma_v;
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = var;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double d = pairwise_distance(positions[static_cast<std::size_t>(i)],
                                         positions[static_cast<std::size_t>(j)]);
      const double v = d_corr > 0.0 ? var * std::exp(-d / d_corr) : 0.0;
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

inline Matrix cross_correlation(std::span<const Position> a, std::span<const Position> b,
                                double d_corr) {
  Matrix r(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::exp(-pairwise_distance(a[i], b[j]) / d_corr);
    }
  }
  return r;
}

/// Relative diagonal jitter on shadowing covariances before factorization.
inline constexpr double kShadowingJitter = 1e-8;

/// Cholesky factor of the grid's unit-variance shadowing correlation.
/// Depends only on geometry and d_corr, so replicates can share it.
class GridCorrelation {
 public:
  GridCorrelation(const Grid& grid, double d_corr)
      : nodes_(grid.nodes().begin(), grid.nodes().end()), d_corr_(d_corr) {
    if (!(d_corr > 0.0)) throw DomainError("GridCorrelation: d_corr must be > 0");
    Matrix r = shadowing_covariance(nodes_, 1.0, d_corr);
    r.diagonal().array() += kShadowingJitter;
    factor_ = jittered_cholesky(r, "grid shadowing covariance");
  }

  [[nodiscard]] double d_corr() const { return d_corr_; }
  [[nodiscard]] std::span<const Position> nodes() const { return nodes_; }
  [[nodiscard]] const JitteredCholesky& factor() const { return factor_; }

 private:
  std::vector<Position> nodes_;
  double d_corr_;
  JitteredCholesky factor_;
};

/// One realization of the shadowing field: drawn on the grid first, then at
/// any sensor location conditionally on the grid values. The sequence is an
/// exact draw from the joint Gaussian over grid and sensors.
class ShadowingField {
 public:
  ShadowingField(std::shared_ptr<const GridCorrelation> corr, double sigma_v, Rng& rng)
      : corr_(std::move(corr)), sigma_v_(sigma_v) {
    const auto m = static_cast<Eigen::Index>(corr_->nodes().size());
    if (sigma_v_ == 0.0) {
      grid_values_ = Vector::Zero(m);
      whitened_ = Vector::Zero(m);
      return;
    }
    const Vector e = standard_normal(rng, m);
    whitened_ = e;  // L^{-1} (v_g / sigma_v)
    grid_values_ = sigma_v_ * Vector(corr_->factor().llt.matrixL() * e);
  }

  [[nodiscard]] const Vector& grid_values() const { return grid_values_; }

  /// Jointly draw shadowing at `positions` given the grid values.
  [[nodiscard]] Vector sample_at(std::span<const Position> positions, Rng& rng) const {
    const auto n = static_cast<Eigen::Index>(positions.size());
    if (n == 0) return Vector(0);
    if (sigma_v_ == 0.0) return Vector::Zero(n);
    const double d_corr = corr_->d_corr();
    // V = L^{-1} R_gs
    Matrix v = cross_correlation(corr_->nodes(), positions, d_corr);
    corr_->factor().llt.matrixL().solveInPlace(v);
    const Vector mean = sigma_v_ * (v.transpose() * whitened_);
    Matrix cond = shadowing_covariance(positions, 1.0, d_corr);
    cond.diagonal().array() += kShadowingJitter;
    cond.noalias() -= v.transpose() * v;
    cond = 0.5 * (cond + cond.transpose());
    // Conditional correlation can be numerically tiny near grid nodes.
    cond.diagonal().array() += kShadowingJitter;
    const JitteredCholesky chol = jittered_cholesky(cond, "conditional shadowing covariance");
    const Vector e = standard_normal(rng, n);
    return mean + sigma_v_ * Vector(chol.llt.matrixL() * e);
  }

 private:
  std::shared_ptr<const GridCorrelation> corr_;
  double sigma_v_;
  Vector grid_values_;
  Vector whitened_;
};

/// EIRP at step t: the last scheduled value with time <= t, else the base power.
inline double power_at(const Scenario& scenario, int t) {
  double p = scenario.params.power;
  if (const auto* s = std::get_if<PowerSchedule>(&scenario.dynamics)) {
    for (const auto& [time, value] : s->entries) {
      if (time <= t) p = value;
    }
  }
  return p;
}

/// Number of sensors reporting under intermittent dropout: ceil((1 - f) N).
inline int reporting_count(int n, double drop_fraction) {
  const double keep = (1.0 - drop_fraction) * n;
  // Guard against (1 - f) * N landing a hair above an integer.
  const double rounded = std::round(keep);
  if (std::abs(keep - rounded) < 1e-9) return static_cast<int>(rounded);
  return static_cast<int>(std::ceil(keep));
}

/// Persistent sensor state across steps.
struct SensorPopulation {
  std::vector<Position> true_positions;
  Vector shadowing;  // v at the true positions
};

/// What the scenario looks like at step t.
struct StepPlan {
  std::vector<int> active;  // indices into the population
  double power = 0.0;
};

/// Applies the scenario dynamics for step t >= 1. Moving sensors take a
/// Gaussian random-walk step (reflected into the area) and get fresh
/// shadowing drawn from `field`; intermittent runs drop a random subset.
inline StepPlan advance_dynamics(const Scenario& scenario, int t, SensorPopulation& population,
                                 const ShadowingField* field, Rng& rng) {
  if (t < 1) throw DomainError("advance_dynamics: t must be >= 1");
  const int n = static_cast<int>(population.true_positions.size());
  StepPlan plan;
  plan.power = power_at(scenario, t);
  plan.active.resize(static_cast<std::size_t>(n));
  std::iota(plan.active.begin(), plan.active.end(), 0);

  if (const auto* drop = std::get_if<Intermittent>(&scenario.dynamics)) {
    const int keep = reporting_count(n, drop->drop_fraction);
    std::shuffle(plan.active.begin(), plan.active.end(), rng);
    plan.active.resize(static_cast<std::size_t>(keep));
    std::sort(plan.active.begin(), plan.active.end());
  } else if (const auto* mv = std::get_if<Moving>(&scenario.dynamics)) {
    if (mv->step_std > 0.0) {
      std::normal_distribution<double> step(0.0, mv->step_std);
      const Rect& a = scenario.area;
      auto reflect = [](double v, double lo, double hi) {
        const double span = hi - lo;
        double u = std::fmod(v - lo, 2.0 * span);
        if (u < 0.0) u += 2.0 * span;
        return lo + (u <= span ? u : 2.0 * span - u);
      };
      for (auto& p : population.true_positions) {
        p.x = reflect(p.x + step(rng), a.x_min, a.x_max);
        p.y = reflect(p.y + step(rng), a.y_min, a.y_max);
      }
      population.shadowing = field ? field->sample_at(population.true_positions, rng)
                                   : Vector(Vector::Zero(n));
    }
  }
  return plan;
}

/// A realized world evolving through time: fixed grid shadowing, a sensor
/// population and the scenario dynamics.
class World {
 public:
  World(Scenario scenario, std::shared_ptr<const GridCorrelation> corr, Rng& rng)
      : scenario_(std::move(scenario)) {
    scenario_.validate();
    const PropagationParams& p = scenario_.params;
    if (p.sigma_v > 0.0) {
      if (!corr || corr->d_corr() != p.d_corr || corr->nodes().size() != scenario_.grid.size()) {
        corr = std::make_shared<const GridCorrelation>(scenario_.grid, p.d_corr);
      }
      field_.emplace(std::move(corr), p.sigma_v, rng);
    }
    population_.true_positions.reserve(static_cast<std::size_t>(scenario_.n_sensors));
    for (int i = 0; i < scenario_.n_sensors; ++i) {
      population_.true_positions.push_back(
          {uniform(rng, scenario_.area.x_min, scenario_.area.x_max),
           uniform(rng, scenario_.area.y_min, scenario_.area.y_max)});
    }
    population_.shadowing = field_ ? field_->sample_at(population_.true_positions, rng)
                                   : Vector(Vector::Zero(scenario_.n_sensors));
    plan_.power = power_at(scenario_, 0);
    plan_.active.resize(static_cast<std::size_t>(scenario_.n_sensors));
    std::iota(plan_.active.begin(), plan_.active.end(), 0);
  }

  /// Moves to step t (t >= 1, strictly after the current step).
  void advance(int t, Rng& rng) {
    plan_ = advance_dynamics(scenario_, t, population_, field_ ? &*field_ : nullptr, rng);
    t_ = t;
  }

  /// Noisy reports for the current step plus the matching ground truth.
  [[nodiscard]] std::pair<MeasurementSnapshot, GroundTruth> observe(Rng& rng) const {
    const PropagationParams& p = scenario_.params;
    std::normal_distribution<double> normal(0.0, 1.0);
    MeasurementSnapshot snap;
    snap.t = t_;
    GroundTruth truth;
    const auto n_active = static_cast<Eigen::Index>(plan_.active.size());
    truth.sensor_shadowing.resize(n_active);
    for (Eigen::Index k = 0; k < n_active; ++k) {
      const int idx = plan_.active[static_cast<std::size_t>(k)];
      const Position x = population_.true_positions[static_cast<std::size_t>(idx)];
      const double v = population_.shadowing[idx];
      const double d = clamped_distance(x, p.tx);
      const double w = p.sigma_w * normal(rng);
      const Position reported{x.x + p.sigma_d * normal(rng), x.y + p.sigma_d * normal(rng)};
      snap.sensors.push_back({idx, reported, plan_.power - 10.0 * p.alpha * std::log10(d) + v + w});
      truth.sensor_true_positions.push_back(x);
      truth.sensor_shadowing[k] = v;
    }
    const auto m = static_cast<Eigen::Index>(scenario_.grid.size());
    truth.grid_field.resize(m);
    for (Eigen::Index g = 0; g < m; ++g) {
      const double d = clamped_distance(scenario_.grid[static_cast<std::size_t>(g)], p.tx);
      const double v = field_ ? field_->grid_values()[g] : 0.0;
      truth.grid_field[g] = plan_.power - 10.0 * p.alpha * std::log10(d) + v;
    }
    return {std::move(snap), std::move(truth)};
  }

  [[nodiscard]] const Scenario& scenario() const { return scenario_; }
  [[nodiscard]] const SensorPopulation& population() const { return population_; }
  [[nodiscard]] const StepPlan& plan() const { return plan_; }
  [[nodiscard]] int time() const { return t_; }

 private:
  Scenario scenario_;
  std::optional<ShadowingField> field_;
  SensorPopulation population_;
  StepPlan plan_;
  int t_ = 0;
};

/// Fresh world observed once, labelled step t and using the scheduled
/// power for t. Sensors are not evolved; use World for multi-step runs.
inline std::pair<MeasurementSnapshot, GroundTruth> sample_snapshot(const Scenario& scenario, int t,
                                                                   Rng& rng) {
  World world(scenario, nullptr, rng);
  auto out = world.observe(rng);
  out.first.t = t;
  const double dp = power_at(scenario, t) - power_at(scenario, 0);
  if (dp != 0.0) {
    for (auto& s : out.first.sensors) s.rss_dbm += dp;
    out.second.grid_field.array() += dp;
  }
  return out;
}

}  // namespace rssfield
