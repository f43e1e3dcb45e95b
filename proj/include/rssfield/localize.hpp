#pragma once

#include <cmath>
#include <optional>
#include <span>

#include "rssfield/error.hpp"
#include "rssfield/model.hpp"
#include "rssfield/optimize.hpp"

namespace rssfield {

/// Recursive weighted-centroid accumulator. Weights are linear received
/// power, 10^(z/10).
struct CentroidState {
  double weighted_x = 0.0;
  double weighted_y = 0.0;
  double total_weight = 0.0;

  [[nodiscard]] bool has_fix() const { return total_weight > 0.0; }

  [[nodiscard]] Position estimate() const {
    if (!has_fix()) throw NoFixError("centroid: no transmitter fix (no data accumulated)");
    return {weighted_x / total_weight, weighted_y / total_weight};
  }
};

/// Folds one snapshot into the accumulator. An empty snapshot returns the
/// state unchanged.
inline CentroidState centroid_update(CentroidState state, const MeasurementSnapshot& snapshot) {
  for (const auto& s : snapshot.sensors) {
    const double w = std::pow(10.0, s.rss_dbm / 10.0);
    state.weighted_x += w * s.position.x;
    state.weighted_y += w * s.position.y;
    state.total_weight += w;
  }
  return state;
}

inline Vector distances_to_estimate(const CentroidState& state,
                                    std::span<const Position> positions) {
  return distances_to(state.estimate(), positions);
}

struct TransmitterRefinement {
  Position position;
  double objective = 0.0;
  double initial_objective = 0.0;
  bool degenerate = false;  // fewer than three sensors, init returned
};

/// sum_i (z_i - mu_P + 10 mu_alpha log10 |x_i - x0|)^2 with clamped distances.
inline double transmitter_objective(std::span<const double> z, std::span<const Position> positions,
                                    double mu_p, double mu_alpha, Position x0) {
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double r = z[i] - mu_p + 10.0 * mu_alpha * std::log10(clamped_distance(positions[i], x0));
    sum += r * r;
  }
  return sum;
}

struct RefineOptions {
  std::optional<Rect> area;  // refined position is kept inside this rectangle
  int max_iter = 200;
  double rel_tol = 1e-6;
  double initial_step = 10.0;  // meters
};

/// Least-squares refinement of the transmitter position for fixed
/// (mu_P, mu_alpha). Simplex descent started at `init`.
inline TransmitterRefinement refine_transmitter(std::span<const double> z,
                                                std::span<const Position> positions, double mu_p,
                                                double mu_alpha, Position init,
                                                const RefineOptions& options = {}) {
  if (z.size() != positions.size()) {
    throw DomainError("refine_transmitter: z and positions differ in length");
  }
  TransmitterRefinement out;
  out.position = init;
  out.initial_objective = transmitter_objective(z, positions, mu_p, mu_alpha, init);
  out.objective = out.initial_objective;
  if (z.size() < 3) {
    out.degenerate = true;
    return out;
  }
  auto project = [&](const Vector& v) {
    const Position p{v[0], v[1]};
    return options.area ? options.area->clamp(p) : p;
  };
  auto f = [&](const Vector& v) {
    return transmitter_objective(z, positions, mu_p, mu_alpha, project(v));
  };
  const Position start = options.area ? options.area->clamp(init) : init;
  const MinimizeResult r = nelder_mead(f, Eigen::Vector2d(start.x, start.y),
                                       Eigen::Vector2d::Constant(options.initial_step),
                                       options.max_iter, options.rel_tol);
  if (r.f <= out.initial_objective) {
    out.position = project(r.x);
    out.objective = r.f;
  }
  return out;
}

inline TransmitterRefinement refine_transmitter(const MeasurementSnapshot& snapshot, double mu_p,
                                                double mu_alpha, Position init,
                                                const RefineOptions& options = {}) {
  const Vector z = snapshot.rss();
  const auto positions = snapshot.positions();
  return refine_transmitter(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())),
                            positions, mu_p, mu_alpha, init, options);
}

}  // namespace rssfield
