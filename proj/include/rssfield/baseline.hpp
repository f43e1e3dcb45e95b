#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rssfield/empbayes.hpp"
#include "rssfield/error.hpp"
#include "rssfield/gp.hpp"
#include "rssfield/linalg.hpp"
#include "rssfield/model.hpp"

namespace rssfield {

/// Exponential semivariogram gamma(h) = nugget + sill (1 - exp(-h / range))
/// for h > 0, gamma(0) = 0. `sill` is the partial sill.
struct VariogramModel {
  double nugget = 0.0;
  double sill = 0.0;
  double range = 1.0;

  [[nodiscard]] double operator()(double h) const {
    if (h <= 0.0) return 0.0;
    return nugget + sill * (1.0 - std::exp(-h / range));
  }
};

struct EmpiricalVariogram {
  std::vector<double> lag;    // mean pair distance per usable bin
  std::vector<double> gamma;  // semivariance per usable bin
  std::vector<double> count;  // pairs per usable bin
  double zero_gamma = 0.0;    // semivariance of coincident pairs
  double zero_count = 0.0;
  double max_lag = 0.0;
};

struct VariogramOptions {
  int bins = 15;
  int min_pairs_per_bin = 3;
  int min_usable_bins = 3;
  int min_points = 10;
};

/// Distances below this count as coincident and feed the nugget only.
inline constexpr double kCoincidentDistance = 1e-9;

/// Binned semivariogram up to half the largest pairwise distance. When too
/// few bins hold enough pairs the bins are widened (15 -> 7 -> 3).
inline EmpiricalVariogram empirical_variogram(const Vector& residuals,
                                              std::span<const Position> positions,
                                              const VariogramOptions& opts = {}) {
  const auto n = static_cast<Eigen::Index>(positions.size());
  if (residuals.size() != n) throw DomainError("variogram: residuals and positions differ");
  if (n < opts.min_points) {
    throw DegenerateError("variogram: at least " + std::to_string(opts.min_points) +
                          " points are required, got " + std::to_string(n));
  }
  double dmax = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      dmax = std::max(dmax, pairwise_distance(positions[static_cast<std::size_t>(i)],
                                              positions[static_cast<std::size_t>(j)]));
    }
  }
  const double h_max = 0.5 * dmax;
  if (!(h_max > 0.0)) throw DegenerateError("variogram: all points coincide");

  for (int bins = opts.bins; bins >= 3; bins = (bins - 1) / 2) {
    std::vector<double> sum_h(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> sum_g(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> cnt(static_cast<std::size_t>(bins), 0.0);
    EmpiricalVariogram ev;
    ev.max_lag = h_max;
    double zero_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < i; ++j) {
        const double h = pairwise_distance(positions[static_cast<std::size_t>(i)],
                                           positions[static_cast<std::size_t>(j)]);
        const double half_sq = 0.5 * (residuals[i] - residuals[j]) * (residuals[i] - residuals[j]);
        if (h < kCoincidentDistance) {
          zero_sum += half_sq;
          ev.zero_count += 1.0;
          continue;
        }
        if (h > h_max) continue;
        const auto b = std::min(bins - 1, static_cast<int>(h / h_max * bins));
        sum_h[static_cast<std::size_t>(b)] += h;
        sum_g[static_cast<std::size_t>(b)] += half_sq;
        cnt[static_cast<std::size_t>(b)] += 1.0;
      }
    }
    if (ev.zero_count > 0.0) ev.zero_gamma = zero_sum / ev.zero_count;
    for (std::size_t b = 0; b < cnt.size(); ++b) {
      if (cnt[b] >= opts.min_pairs_per_bin) {
        ev.lag.push_back(sum_h[b] / cnt[b]);
        ev.gamma.push_back(sum_g[b] / cnt[b]);
        ev.count.push_back(cnt[b]);
      }
    }
    if (static_cast<int>(ev.lag.size()) >= opts.min_usable_bins) return ev;
  }
  throw DegenerateError("variogram: too few pairs per distance bin even after widening");
}

namespace detail {

struct VariogramFit {
  VariogramModel model;
  double objective = 0.0;
};

inline VariogramFit fit_for_range(const EmpiricalVariogram& ev, double range) {
  const auto rows = static_cast<Eigen::Index>(ev.lag.size() + (ev.zero_count > 0.0 ? 1 : 0));
  Vector ones(rows);
  Vector shape(rows);
  Vector y(rows);
  Vector w(rows);
  Eigen::Index r = 0;
  for (std::size_t b = 0; b < ev.lag.size(); ++b, ++r) {
    ones[r] = 1.0;
    shape[r] = 1.0 - std::exp(-ev.lag[b] / range);
    y[r] = ev.gamma[b];
    w[r] = ev.count[b];
  }
  if (ev.zero_count > 0.0) {
    ones[r] = 1.0;
    shape[r] = 0.0;
    y[r] = ev.zero_gamma;
    w[r] = ev.zero_count;
  }
  const Nnls2Result fit = nnls2(ones, shape, y, &w);
  return {{fit.x1, fit.x2, range}, fit.objective};
}

}  // namespace detail

/// Pair-count-weighted least squares of the exponential family. Nugget and
/// sill are solved exactly (nonnegative) for each range; the range is found
/// by a log-spaced scan followed by golden-section refinement.
inline VariogramModel fit_variogram(const EmpiricalVariogram& ev) {
  const double lo = std::log(std::max(ev.lag.front() / 10.0, 1e-6));
  const double hi = std::log(10.0 * ev.max_lag);
  constexpr int kScan = 80;
  std::vector<double> grid(kScan);
  double best_obj = std::numeric_limits<double>::infinity();
  int best = 0;
  for (int i = 0; i < kScan; ++i) {
    grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (kScan - 1);
    const double obj = detail::fit_for_range(ev, std::exp(grid[static_cast<std::size_t>(i)])).objective;
    if (obj < best_obj) {
      best_obj = obj;
      best = i;
    }
  }
  double a = grid[static_cast<std::size_t>(std::max(0, best - 1))];
  double b = grid[static_cast<std::size_t>(std::min(kScan - 1, best + 1))];
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  auto f = [&](double lr) { return detail::fit_for_range(ev, std::exp(lr)).objective; };
  double fc = f(c);
  double fd = f(d);
  for (int it = 0; it < 60; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  const double refined = 0.5 * (a + b);
  detail::VariogramFit out = detail::fit_for_range(ev, std::exp(refined));
  const detail::VariogramFit scanned =
      detail::fit_for_range(ev, std::exp(grid[static_cast<std::size_t>(best)]));
  if (scanned.objective < out.objective) out = scanned;
  return out.model;
}

inline VariogramModel fit_variogram(const Vector& residuals, std::span<const Position> positions,
                                    const VariogramOptions& opts = {}) {
  return fit_variogram(empirical_variogram(residuals, positions, opts));
}

/// Ordinary kriging with a fixed variogram. Solves the bordered system
///   [Gamma 1; 1^T 0] [w; mu] = [gamma_0; 1]
/// once per set of targets; weights sum to one.
class OrdinaryKriging {
 public:
  OrdinaryKriging(std::span<const Position> positions, const VariogramModel& model)
      : positions_(positions.begin(), positions.end()), model_(model) {
    const auto n = static_cast<Eigen::Index>(positions_.size());
    if (n == 0) throw DegenerateError("kriging: no data points");
    system_.resize(n + 1, n + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        system_(i, j) = model_(pairwise_distance(positions_[static_cast<std::size_t>(i)],
                                                 positions_[static_cast<std::size_t>(j)]));
      }
      system_(i, n) = 1.0;
      system_(n, i) = 1.0;
    }
    system_(n, n) = 0.0;
    lu_.compute(system_);
    singular_ = !(lu_.rcond() > 1e-13);
    if (singular_) cod_.compute(system_);
  }

  /// Right-hand sides [gamma(x_i, target); 1] for each target as columns.
  [[nodiscard]] Matrix rhs(std::span<const Position> targets) const {
    const auto n = static_cast<Eigen::Index>(positions_.size());
    Matrix b(n + 1, static_cast<Eigen::Index>(targets.size()));
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto col = static_cast<Eigen::Index>(t);
      for (Eigen::Index i = 0; i < n; ++i) {
        b(i, col) = model_(pairwise_distance(positions_[static_cast<std::size_t>(i)], targets[t]));
      }
      b(n, col) = 1.0;
    }
    return b;
  }

  /// Columns hold [w; mu] per target.
  [[nodiscard]] Matrix solve(std::span<const Position> targets) const {
    return solve_rhs(rhs(targets));
  }

  [[nodiscard]] Matrix solve_rhs(const Matrix& b) const {
    return singular_ ? Matrix(cod_.solve(b)) : Matrix(lu_.solve(b));
  }

  [[nodiscard]] const Matrix& system() const { return system_; }
  [[nodiscard]] bool singular() const { return singular_; }

 private:
  std::vector<Position> positions_;
  VariogramModel model_;
  Matrix system_;
  Eigen::PartialPivLU<Matrix> lu_;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod_;
  bool singular_ = false;
};

struct OkdResult {
  Vector prediction;   // dBm per grid node
  Vector variance;     // ordinary-kriging variance, dB^2
  Vector weight_sums;  // sum of kriging weights per node (1 up to round-off)
  VariogramModel variogram;
  bool singular = false;  // pseudo-inverse fallback was used
};

/// Detrends z by the empirical-Bayes path-loss mean, krigs the residuals onto
/// the grid and adds the trend back. If `variogram` is null it is fitted to
/// the residuals.
inline OkdResult okd_predict(const TrainingSet& train, const Grid& grid, const HyperEstimate& hyper,
                             const VariogramModel* variogram = nullptr,
                             const VariogramOptions& opts = {}) {
  const Vector residual = train.z - prior_mean(train.positions, hyper);
  OkdResult out;
  out.variogram = variogram ? *variogram : fit_variogram(residual, train.positions, opts);
  const OrdinaryKriging ok(train.positions, out.variogram);
  out.singular = ok.singular();
  const auto nodes = grid.nodes();
  const Matrix b = ok.rhs(nodes);
  const Matrix sol = ok.solve_rhs(b);
  const auto n = static_cast<Eigen::Index>(train.size());
  const auto weights = sol.topRows(n);
  out.prediction = prior_mean(nodes, hyper) + weights.transpose() * residual;
  out.weight_sums = weights.colwise().sum().transpose();
  out.variance = (weights.cwiseProduct(b.topRows(n)).colwise().sum() + sol.row(n)).transpose();
  return out;
}

}  // namespace rssfield
