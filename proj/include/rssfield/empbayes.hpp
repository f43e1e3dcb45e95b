#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>

#include "rssfield/error.hpp"
#include "rssfield/linalg.hpp"
#include "rssfield/localize.hpp"
#include "rssfield/model.hpp"
#include "rssfield/synth.hpp"

namespace rssfield {

/// Lower bound on the mean path-loss exponent.
inline constexpr double kMinPathLossExponent = 2.0;

/// Estimated hyper-parameters of the priors on P and alpha, plus the
/// transmitter position they were computed against.
struct HyperEstimate {
  double mu_P = 0.0;
  double mu_alpha = kMinPathLossExponent;
  double var_P = 0.0;
  double var_alpha = 0.0;
  Position tx;
  bool has_variances = false;  // var_* came from the empirical-Bayes variance fit
};

enum class MeanWeighting {
  distance_squared,  // residual i scaled by d_i, i.e. weight d_i^2
  uniform,
};

struct MeanEstimate {
  double mu_P = 0.0;
  double mu_alpha = 0.0;
  bool constraint_active = false;
};

/// Weighted least squares for z ~ mu_P - q mu_alpha subject to
/// mu_alpha >= 2, solved in closed form.
inline MeanEstimate estimate_means(const Vector& z, const Vector& q_hat, const Vector& d_hat,
                                   MeanWeighting weighting = MeanWeighting::distance_squared) {
  const Eigen::Index n = z.size();
  if (q_hat.size() != n || d_hat.size() != n) {
    throw DomainError("estimate_means: z, q_hat and d_hat differ in length");
  }
  if (n < 2) {
    throw DegenerateError("estimate_means: at least two sensors are required, got " +
                          std::to_string(n));
  }
  const Vector w = weighting == MeanWeighting::distance_squared
                       ? Vector(d_hat.array().square())
                       : Vector(Vector::Ones(n));
  const double sw = w.sum();
  const double q_bar = w.dot(q_hat) / sw;
  const double z_bar = w.dot(z) / sw;
  const Vector qc = q_hat.array() - q_bar;
  const Vector zc = z.array() - z_bar;
  const double sqq = w.dot(qc.cwiseProduct(qc));
  const double scale = w.dot(q_hat.cwiseProduct(q_hat));
  if (!(sqq > 1e-12 * std::max(scale, 1e-300))) {
    throw DegenerateError(
        "estimate_means: rank-deficient design (all log-distances equal; sensors equidistant "
        "from the transmitter)");
  }
  MeanEstimate out;
  out.mu_alpha = -w.dot(qc.cwiseProduct(zc)) / sqq;
  if (out.mu_alpha < kMinPathLossExponent) {
    out.mu_alpha = kMinPathLossExponent;
    out.constraint_active = true;
  }
  out.mu_P = z_bar + out.mu_alpha * q_bar;
  return out;
}

struct VarianceEstimate {
  double var_P = 0.0;
  double var_alpha = 0.0;
};

/// Nonnegative fit of diag((z - mu_z)(z - mu_z)^T - Sigma_given) against the
/// columns [1, q o q]. Only the diagonal of `sigma_given` is used.
inline VarianceEstimate estimate_variances(const Vector& z, double mu_p, double mu_alpha,
                                           const Vector& q_hat, const Matrix& sigma_given) {
  const Eigen::Index n = z.size();
  if (q_hat.size() != n || sigma_given.rows() != n || sigma_given.cols() != n) {
    throw DomainError("estimate_variances: inconsistent dimensions");
  }
  const Vector residual = z - (Vector::Constant(n, mu_p) - mu_alpha * q_hat);
  const Vector target = residual.array().square().matrix() - sigma_given.diagonal();
  const Nnls2Result fit = nnls2(Vector::Ones(n), q_hat.array().square().matrix(), target);
  return {fit.x1, fit.x2};
}

/// Known part of the measurement covariance given alpha and P:
/// rho_u^2 D_hat + Sigma_v + sigma_w^2 I.
inline Matrix conditional_measurement_covariance(std::span<const Position> positions,
                                                 const Vector& d_hat, double sigma_v,
                                                 double d_corr, const NoiseModel& noise) {
  Matrix s = shadowing_covariance(positions, sigma_v, d_corr);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    s(i, i) += noise.sigma_w * noise.sigma_w + noise.rho_u * noise.rho_u / (d_hat[i] * d_hat[i]);
  }
  return s;
}

/// Known shadowing statistics; enables the empirical-Bayes variance path.
struct ShadowingModel {
  double sigma_v = 0.0;
  double d_corr = 1.0;
};

struct EmpiricalBayesConfig {
  std::optional<Rect> area;             // keeps the refined transmitter inside
  std::optional<Position> known_tx;     // bypasses localization entirely
  std::optional<ShadowingModel> shadowing;  // set => estimate var_P, var_alpha here
  NoiseModel noise;                     // used with `shadowing`
  MeanWeighting weighting = MeanWeighting::distance_squared;
  int max_passes = 50;                  // refine-then-re-estimate passes
  double tx_tolerance = 1e-9;           // meters; stop when the refined fix moves less
};

struct EmpiricalBayesResult {
  HyperEstimate hyper;
  CentroidState centroid;  // accumulator after folding in the snapshot
  Position centroid_fix;   // initial (unrefined) transmitter estimate
  int passes = 0;
  bool refinement_degenerate = false;
};

/// Centroid initialization, mean estimation, then alternating transmitter
/// refinement and mean re-estimation until the fix stops moving.
inline EmpiricalBayesResult refine_all(const MeasurementSnapshot& snapshot,
                                       const CentroidState& centroid,
                                       const EmpiricalBayesConfig& config = {}) {
  if (snapshot.size() < 2) {
    throw DegenerateError("refine_all: at least two sensors are required, got " +
                          std::to_string(snapshot.size()));
  }
  EmpiricalBayesResult out;
  out.centroid = centroid_update(centroid, snapshot);
  const Vector z = snapshot.rss();
  const std::vector<Position> positions = snapshot.positions();
  const std::span<const double> z_span(z.data(), static_cast<std::size_t>(z.size()));

  Position tx = config.known_tx ? *config.known_tx : out.centroid.estimate();
  out.centroid_fix = tx;
  Vector d_hat = distances_to(tx, positions);
  MeanEstimate means = estimate_means(z, log_distance_features(d_hat), d_hat, config.weighting);

  if (!config.known_tx) {
    RefineOptions ropts;
    ropts.area = config.area;
    for (int pass = 0; pass < std::max(1, config.max_passes); ++pass) {
      const TransmitterRefinement r =
          refine_transmitter(z_span, positions, means.mu_P, means.mu_alpha, tx, ropts);
      out.passes = pass + 1;
      if (r.degenerate) {
        out.refinement_degenerate = true;
        break;
      }
      const double moved = pairwise_distance(r.position, tx);
      tx = r.position;
      d_hat = distances_to(tx, positions);
      means = estimate_means(z, log_distance_features(d_hat), d_hat, config.weighting);
      if (moved < config.tx_tolerance) break;
    }
  }

  out.hyper.mu_P = means.mu_P;
  out.hyper.mu_alpha = means.mu_alpha;
  out.hyper.tx = tx;
  if (config.shadowing) {
    const Vector q_hat = log_distance_features(d_hat);
    const Matrix given = conditional_measurement_covariance(
        positions, d_hat, config.shadowing->sigma_v, config.shadowing->d_corr, config.noise);
    const VarianceEstimate v = estimate_variances(z, means.mu_P, means.mu_alpha, q_hat, given);
    out.hyper.var_P = v.var_P;
    out.hyper.var_alpha = v.var_alpha;
    out.hyper.has_variances = true;
  }
  return out;
}

}  // namespace rssfield
