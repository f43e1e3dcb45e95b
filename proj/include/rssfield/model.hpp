#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rssfield/error.hpp"

namespace rssfield {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Planar location in meters.
struct Position {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Position&, const Position&) = default;
};

/// Axis-aligned rectangle, used for the experiment area.
struct Rect {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  [[nodiscard]] bool contains(Position p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
  [[nodiscard]] Position clamp(Position p) const {
    return {std::clamp(p.x, x_min, x_max), std::clamp(p.y, y_min, y_max)};
  }
  [[nodiscard]] double width() const { return x_max - x_min; }
  [[nodiscard]] double height() const { return y_max - y_min; }
  [[nodiscard]] Position center() const {
    return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)};
  }
};

/// Distances below this are clamped before logarithms or 1/d^2 terms.
inline constexpr double kMinDistance = 1.0;

inline double pairwise_distance(Position a, Position b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

inline double clamped_distance(Position a, Position b) {
  return std::max(kMinDistance, pairwise_distance(a, b));
}

/// 10 log10(d). Throws DomainError for d <= 0.
inline double log_distance_feature(double d_hat) {
  if (!(d_hat > 0.0)) {
    throw DomainError("log_distance_feature: distance must be positive, got " +
                      std::to_string(d_hat));
  }
  return 10.0 * std::log10(d_hat);
}

/// Scale of the location-induced error, sigma_u = rho_u / d_hat.
inline double rho_u_from(double alpha, double sigma_d) {
  return 10.0 * alpha * sigma_d * std::log10(std::numbers::e);
}

/// Clamped distances from every position to `anchor`.
inline Vector distances_to(Position anchor, std::span<const Position> positions) {
  Vector d(static_cast<Eigen::Index>(positions.size()));
  for (std::size_t i = 0; i < positions.size(); ++i) {
    d[static_cast<Eigen::Index>(i)] = clamped_distance(positions[i], anchor);
  }
  return d;
}

/// Element-wise 10 log10(d).
inline Vector log_distance_features(const Vector& d) {
  Vector q(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) q[i] = log_distance_feature(d[i]);
  return q;
}

/// Fixed set of estimation nodes. Order never changes.
class Grid {
 public:
  explicit Grid(std::vector<Position> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.empty()) throw DomainError("Grid: at least one node is required");
    std::vector<Position> sorted = nodes_;
    std::sort(sorted.begin(), sorted.end(), [](Position a, Position b) {
      return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
      if (sorted[i] == sorted[i + 1]) throw DomainError("Grid: duplicate node");
    }
    for (const auto& p : nodes_) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw DomainError("Grid: non-finite node coordinate");
      }
    }
  }

  // Cell-centred nx-by-ny lattice over `area`, row-major in y.
  static Grid uniform(const Rect& area, int nx, int ny) {
    if (nx < 1 || ny < 1) throw DomainError("Grid::uniform: nx, ny must be >= 1");
    std::vector<Position> nodes;
    nodes.reserve(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
    const double dx = area.width() / nx;
    const double dy = area.height() / ny;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        nodes.push_back({area.x_min + (i + 0.5) * dx, area.y_min + (j + 0.5) * dy});
      }
    }
    return Grid(std::move(nodes));
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const Position& operator[](std::size_t i) const { return nodes_[i]; }
  [[nodiscard]] std::span<const Position> nodes() const { return nodes_; }

 private:
  std::vector<Position> nodes_;
};

struct SensorReport {
  int sensor_id = 0;
  Position position;  // reported (estimated) position
  double rss_dbm = 0.0;
};

/// One time step of crowdsourced reports.
struct MeasurementSnapshot {
  int t = 0;
  std::vector<SensorReport> sensors;

  [[nodiscard]] std::size_t size() const { return sensors.size(); }
  [[nodiscard]] bool empty() const { return sensors.empty(); }

  [[nodiscard]] std::vector<Position> positions() const {
    std::vector<Position> out;
    out.reserve(sensors.size());
    for (const auto& s : sensors) out.push_back(s.position);
    return out;
  }

  [[nodiscard]] Vector rss() const {
    Vector z(static_cast<Eigen::Index>(sensors.size()));
    for (std::size_t i = 0; i < sensors.size(); ++i) {
      z[static_cast<Eigen::Index>(i)] = sensors[i].rss_dbm;
    }
    return z;
  }

  void validate() const {
    if (t < 0) throw DomainError("MeasurementSnapshot: negative time index");
    std::unordered_set<int> ids;
    for (const auto& s : sensors) {
      if (!std::isfinite(s.rss_dbm)) {
        throw DomainError("MeasurementSnapshot: non-finite rss for sensor " +
                          std::to_string(s.sensor_id));
      }
      if (!std::isfinite(s.position.x) || !std::isfinite(s.position.y)) {
        throw DomainError("MeasurementSnapshot: non-finite position for sensor " +
                          std::to_string(s.sensor_id));
      }
      if (!ids.insert(s.sensor_id).second) {
        throw DomainError("MeasurementSnapshot: duplicate sensor id " +
                          std::to_string(s.sensor_id));
      }
    }
  }
};

/// Log-distance path loss with correlated shadowing.
struct PropagationParams {
  double alpha = 3.5;                 // path-loss exponent
  double power = -10.0;               // EIRP, dBm
  double sigma_v = std::sqrt(10.0);   // shadowing std, dB
  double d_corr = 50.0;               // shadowing decorrelation distance, m
  double sigma_w = std::sqrt(7.0);    // additive noise std, dB
  double sigma_d = 13.16;             // location error std, m
  Position tx{250.0, 250.0};

  void validate() const {
    if (!(alpha >= 0.0)) throw DomainError("PropagationParams: alpha must be >= 0");
    if (!(sigma_v >= 0.0) || !(sigma_w >= 0.0) || !(sigma_d >= 0.0) || !(d_corr >= 0.0)) {
      throw DomainError("PropagationParams: standard deviations and d_corr must be >= 0");
    }
  }
};

/// Measurement noise seen by the estimator: sigma_w^2 + rho_u^2 / d_hat^2 per sensor.
/// rho_u is kept numerically as given (dB·m).
struct NoiseModel {
  double rho_u = 0.0;
  double sigma_w = 0.0;
};

}  // namespace rssfield
