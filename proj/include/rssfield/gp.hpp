#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rssfield/empbayes.hpp"
#include "rssfield/error.hpp"
#include "rssfield/linalg.hpp"
#include "rssfield/model.hpp"
#include "rssfield/optimize.hpp"

namespace rssfield {

/// Composite kernel
///   k(a, b) = sigma_k^2 exp(-|a - b| / (2 l^2)) + sigma_alpha^2 q(a) q(b) + sigma_P^2
/// with q(x) = 10 log10 |x - tx|. The decay scale 2 l^2 is in meters.
struct KernelParams {
  double sigma_k = 1.0;
  double length_scale = 5.0;
  double sigma_alpha = 0.0;
  double sigma_P = 0.0;

  [[nodiscard]] double decay_scale() const { return 2.0 * length_scale * length_scale; }

  static KernelParams from_variances(double var_k, double decay_scale, double var_alpha,
                                     double var_p) {
    return {std::sqrt(var_k), std::sqrt(decay_scale / 2.0), std::sqrt(var_alpha),
            std::sqrt(var_p)};
  }

  void validate() const {
    if (!(sigma_k >= 0.0) || !(sigma_alpha >= 0.0) || !(sigma_P >= 0.0)) {
      throw DomainError("KernelParams: standard deviations must be >= 0");
    }
    if (!(length_scale > 0.0)) throw DomainError("KernelParams: length scale must be > 0");
  }
};

inline double q_feature(Position x, Position tx) {
  return log_distance_feature(clamped_distance(x, tx));
}

inline double kernel_eval(Position a, Position b, const KernelParams& p, Position tx) {
  return p.sigma_k * p.sigma_k * std::exp(-pairwise_distance(a, b) / p.decay_scale()) +
         p.sigma_alpha * p.sigma_alpha * q_feature(a, tx) * q_feature(b, tx) +
         p.sigma_P * p.sigma_P;
}

inline Vector q_features(std::span<const Position> positions, Position tx) {
  return log_distance_features(distances_to(tx, positions));
}

/// Cross-covariance K(a, b).
inline Matrix kernel_matrix(std::span<const Position> a, std::span<const Position> b,
                            const KernelParams& p, Position tx) {
  const Vector qa = q_features(a, tx);
  const Vector qb = q_features(b, tx);
  const double vk = p.sigma_k * p.sigma_k;
  const double scale = p.decay_scale();
  Matrix k(qa.size(), qb.size());
  for (Eigen::Index j = 0; j < qb.size(); ++j) {
    const Position bj = b[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < qa.size(); ++i) {
      k(i, j) = vk * std::exp(-pairwise_distance(a[static_cast<std::size_t>(i)], bj) / scale);
    }
  }
  k.noalias() += (p.sigma_alpha * p.sigma_alpha) * qa * qb.transpose();
  k.array() += p.sigma_P * p.sigma_P;
  return k;
}

/// Symmetric K(a, a).
inline Matrix kernel_matrix(std::span<const Position> a, const KernelParams& p, Position tx) {
  const Vector q = q_features(a, tx);
  const double vk = p.sigma_k * p.sigma_k;
  const double scale = p.decay_scale();
  const Eigen::Index n = q.size();
  Matrix k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    k(j, j) = vk;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = vk * std::exp(-pairwise_distance(a[static_cast<std::size_t>(i)],
                                                        a[static_cast<std::size_t>(j)]) /
                                     scale);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  k.noalias() += (p.sigma_alpha * p.sigma_alpha) * q * q.transpose();
  k.array() += p.sigma_P * p.sigma_P;
  return k;
}

/// m = mu_P - mu_alpha q_hat.
inline Vector prior_mean(std::span<const Position> positions, const HyperEstimate& hyper) {
  const Vector q = q_features(positions, hyper.tx);
  return Vector::Constant(q.size(), hyper.mu_P) - hyper.mu_alpha * q;
}

/// Diagonal of sigma_w^2 I + rho_u^2 D_hat.
inline Vector noise_variances(const Vector& d_hat, const NoiseModel& noise) {
  return (noise.sigma_w * noise.sigma_w +
          (noise.rho_u * noise.rho_u) / d_hat.array().square())
      .matrix();
}

inline Eigen::DiagonalMatrix<double, Eigen::Dynamic> noise_cov(const Vector& d_hat,
                                                              const NoiseModel& noise) {
  return Eigen::DiagonalMatrix<double, Eigen::Dynamic>(noise_variances(d_hat, noise));
}

/// Training outputs at estimated sensor positions.
struct TrainingSet {
  std::vector<Position> positions;
  Vector z;

  static TrainingSet from(const MeasurementSnapshot& snapshot) {
    return {snapshot.positions(), snapshot.rss()};
  }
  [[nodiscard]] std::size_t size() const { return positions.size(); }
};

/// Gaussian posterior over the grid nodes at one time step.
struct FieldPosterior {
  int t = 0;
  Vector mean;
  Matrix cov;  // empty when only the mean was requested
  HyperEstimate hyper;
  KernelParams kernel;
  double jitter = 0.0;

  [[nodiscard]] bool has_cov() const { return cov.size() > 0; }
};

/// The pieces of the static posterior: prior moments on the grid and the
/// data-driven corrections K_gX C^{-1} (z - m_X) and K_gX C^{-1} K_Xg.
struct StaticTerms {
  Vector prior_mean;  // m_Xg
  Matrix prior_cov;   // K_g (empty without covariance)
  Vector gain_mean;   // mu_post
  Matrix gain_cov;    // Sigma_post (empty without covariance)
  double jitter = 0.0;
};

inline StaticTerms static_terms(const TrainingSet& train, const Grid& grid,
                                const HyperEstimate& hyper, const KernelParams& kernel,
                                const NoiseModel& noise, bool with_cov = true) {
  StaticTerms out;
  const auto nodes = grid.nodes();
  const auto m = static_cast<Eigen::Index>(nodes.size());
  out.prior_mean = prior_mean(nodes, hyper);
  if (with_cov) out.prior_cov = kernel_matrix(nodes, kernel, hyper.tx);

  if (train.size() == 0) {
    out.gain_mean = Vector::Zero(m);
    if (with_cov) out.gain_cov = Matrix::Zero(m, m);
    return out;
  }
  if (static_cast<Eigen::Index>(train.size()) != train.z.size()) {
    throw DomainError("posterior: training positions and outputs differ in length");
  }
  Matrix c = kernel_matrix(train.positions, kernel, hyper.tx);
  c.diagonal() += noise_variances(distances_to(hyper.tx, train.positions), noise);
  const JitteredCholesky chol = jittered_cholesky(c, "training covariance K_X + Sigma_eps");
  out.jitter = chol.jitter;

  const Matrix k_xg = kernel_matrix(train.positions, nodes, kernel, hyper.tx);
  const Vector residual = train.z - prior_mean(train.positions, hyper);
  out.gain_mean = k_xg.transpose() * chol.solve(residual);
  if (with_cov) {
    Matrix w = k_xg;
    chol.llt.matrixL().solveInPlace(w);  // L^{-1} K_Xg
    out.gain_cov = w.transpose() * w;
  }
  return out;
}

inline FieldPosterior assemble_posterior(const StaticTerms& terms, const HyperEstimate& hyper,
                                         const KernelParams& kernel, int t = 0) {
  FieldPosterior post;
  post.t = t;
  post.hyper = hyper;
  post.kernel = kernel;
  post.jitter = terms.jitter;
  post.mean = terms.prior_mean + terms.gain_mean;
  if (terms.prior_cov.size() > 0) {
    post.cov = terms.prior_cov - terms.gain_cov;
    post.cov = 0.5 * (post.cov + post.cov.transpose());
  }
  return post;
}

/// mu_g = m_Xg + K_gX C^{-1}(z - m_X), Sigma_g = K_g - K_gX C^{-1} K_Xg,
/// with C = K_X + Sigma_eps factored by Cholesky.
inline FieldPosterior posterior(const TrainingSet& train, const Grid& grid,
                                const HyperEstimate& hyper, const KernelParams& kernel,
                                const NoiseModel& noise, bool with_cov = true, int t = 0) {
  return assemble_posterior(static_terms(train, grid, hyper, kernel, noise, with_cov), hyper,
                            kernel, t);
}

// ---------------------------------------------------------------------------
// Marginal likelihood.

/// Kernel parameters in the optimizer's coordinates:
/// [log sigma_k^2, log 2l^2, log sigma_alpha^2, log sigma_P^2].
using LogKernelParams = Eigen::Vector4d;

inline LogKernelParams to_log(const KernelParams& p) {
  auto lg = [](double v) { return std::log(std::max(v, 1e-300)); };
  return {lg(p.sigma_k * p.sigma_k), lg(p.decay_scale()), lg(p.sigma_alpha * p.sigma_alpha),
          lg(p.sigma_P * p.sigma_P)};
}

inline KernelParams from_log(const LogKernelParams& v) {
  return KernelParams::from_variances(std::exp(v[0]), std::exp(v[1]), std::exp(v[2]),
                                      std::exp(v[3]));
}

/// Negative log marginal likelihood of z - m_X under K_X + Sigma_eps, with
/// its gradient in log-parameter space. Geometry is cached at construction.
class MarginalLikelihood {
 public:
  MarginalLikelihood(const TrainingSet& train, const HyperEstimate& hyper, const NoiseModel& noise)
      : n_(static_cast<Eigen::Index>(train.size())) {
    if (train.z.size() != n_) throw DomainError("MarginalLikelihood: inconsistent training set");
    residual_ = train.z - prior_mean(train.positions, hyper);
    q_ = q_features(train.positions, hyper.tx);
    noise_ = noise_variances(distances_to(hyper.tx, train.positions), noise);
    dist_.resize(n_, n_);
    for (Eigen::Index j = 0; j < n_; ++j) {
      for (Eigen::Index i = 0; i < n_; ++i) {
        dist_(i, j) = pairwise_distance(train.positions[static_cast<std::size_t>(i)],
                                        train.positions[static_cast<std::size_t>(j)]);
      }
    }
  }

  [[nodiscard]] Eigen::Index size() const { return n_; }
  [[nodiscard]] const Vector& residual() const { return residual_; }

  /// NLML; +inf when the covariance cannot be factored.
  double operator()(const LogKernelParams& theta, LogKernelParams* grad = nullptr) const {
    const double vk = std::exp(theta[0]);
    const double scale = std::exp(theta[1]);
    const double va = std::exp(theta[2]);
    const double vp = std::exp(theta[3]);
    const Matrix e = (-dist_.array() / scale).exp().matrix();
    Matrix c = vk * e;
    c.noalias() += va * q_ * q_.transpose();
    c.array() += vp;
    c.diagonal() += noise_;

    Eigen::LLT<Matrix> llt(c);
    if (!detail::factor_ok(llt)) {
      if (grad) grad->setZero();
      return std::numeric_limits<double>::infinity();
    }
    const Vector a = llt.solve(residual_);
    const Matrix& l = llt.matrixLLT();
    const double logdet = 2.0 * l.diagonal().array().log().sum();
    const double value = 0.5 * residual_.dot(a) + 0.5 * logdet +
                         0.5 * static_cast<double>(n_) * std::log(2.0 * std::numbers::pi);
    if (grad) {
      // d NLML / d theta_j = 0.5 tr((C^{-1} - a a^T) dC/dtheta_j)
      const Matrix w = llt.solve(Matrix::Identity(n_, n_)) - a * a.transpose();
      const Matrix dk = vk * e;
      (*grad)[0] = 0.5 * w.cwiseProduct(dk).sum();
      (*grad)[1] = 0.5 * w.cwiseProduct(dk.cwiseProduct(dist_) / scale).sum();
      (*grad)[2] = 0.5 * va * q_.dot(w * q_);
      (*grad)[3] = 0.5 * vp * w.sum();
    }
    return value;
  }

 private:
  Eigen::Index n_;
  Vector residual_;
  Vector q_;
  Vector noise_;
  Matrix dist_;
};

inline double nlml(const TrainingSet& train, const HyperEstimate& hyper,
                   const KernelParams& kernel, const NoiseModel& noise) {
  return MarginalLikelihood(train, hyper, noise)(to_log(kernel));
}

struct KernelFitOptions {
  double min_variance = 1e-4;
  double max_variance = 1e4;
  double min_decay_scale = 1.0;     // meters
  double max_decay_scale = 2000.0;  // meters
  // When set, sigma_alpha / sigma_P are held at these variances and only
  // sigma_k and the decay scale are fitted.
  std::optional<double> frozen_var_alpha;
  std::optional<double> frozen_var_P;
  BoxOptions optimizer{200, 1e-6, 1e-10};
};

struct KernelFit {
  KernelParams params;
  double nlml = std::numeric_limits<double>::infinity();
  int best_start = -1;
  std::vector<KernelParams> starts;
  std::vector<double> start_nlml;  // NLML at each initialization
  std::vector<double> final_nlml;  // NLML at each local optimum
};

/// Freezes sigma_alpha and sigma_P to the empirical-Bayes variances when the
/// hyper estimate carries them.
inline KernelFitOptions fit_options_for(const HyperEstimate& hyper, KernelFitOptions opts = {}) {
  if (hyper.has_variances) {
    opts.frozen_var_alpha = hyper.var_alpha;
    opts.frozen_var_P = hyper.var_P;
  }
  return opts;
}

/// Deterministic initial points for the multi-start search.
inline std::vector<KernelParams> kernel_fit_starts(const Vector& residual,
                                                   const KernelFitOptions& opts) {
  double var = 1.0;
  if (residual.size() > 1) {
    const double mean = residual.mean();
    var = (residual.array() - mean).square().sum() / static_cast<double>(residual.size() - 1);
  }
  var = std::clamp(var, 1e-2, opts.max_variance);
  auto clampv = [&](double v) { return std::clamp(v, opts.min_variance, opts.max_variance); };
  auto clamps = [&](double s) { return std::clamp(s, opts.min_decay_scale, opts.max_decay_scale); };
  const std::array<std::array<double, 4>, 4> table{{
      {var / 2.0, 50.0, 1e-2, var / 4.0},
      {var, 200.0, 1e-3, 1.0},
      {var / 4.0, 10.0, 1e-1, var},
      {var, 1000.0, 1e-4, 1e-2},
  }};
  std::vector<KernelParams> out;
  for (const auto& row : table) {
    out.push_back(KernelParams::from_variances(
        clampv(row[0]), clamps(row[1]),
        opts.frozen_var_alpha ? *opts.frozen_var_alpha : clampv(row[2]),
        opts.frozen_var_P ? *opts.frozen_var_P : clampv(row[3])));
  }
  return out;
}

/// Minimizes the NLML over the kernel parameters: four deterministic starts,
/// projected BFGS in log space inside the variance and decay-scale bounds.
/// The selected optimum is the lowest NLML; ties go to the lowest start index.
inline KernelFit fit_kernel(const TrainingSet& train, const HyperEstimate& hyper,
                            const NoiseModel& noise, const KernelFitOptions& opts = {}) {
  if (train.size() < 3) {
    throw DegenerateError("fit_kernel: at least three training points are required, got " +
                          std::to_string(train.size()));
  }
  const MarginalLikelihood objective(train, hyper, noise);

  // Free coordinates of the log-parameter vector.
  std::vector<int> free_idx{0, 1};
  if (!opts.frozen_var_alpha) free_idx.push_back(2);
  if (!opts.frozen_var_P) free_idx.push_back(3);
  const auto nf = static_cast<Eigen::Index>(free_idx.size());

  Vector lo(nf);
  Vector hi(nf);
  for (Eigen::Index k = 0; k < nf; ++k) {
    const bool is_scale = free_idx[static_cast<std::size_t>(k)] == 1;
    lo[k] = std::log(is_scale ? opts.min_decay_scale : opts.min_variance);
    hi[k] = std::log(is_scale ? opts.max_decay_scale : opts.max_variance);
  }

  KernelFit fit;
  fit.starts = kernel_fit_starts(objective.residual(), opts);
  for (std::size_t s = 0; s < fit.starts.size(); ++s) {
    const LogKernelParams base = to_log(fit.starts[s]);
    auto expand = [&](const Vector& x) {
      LogKernelParams full = base;
      for (Eigen::Index k = 0; k < nf; ++k) full[free_idx[static_cast<std::size_t>(k)]] = x[k];
      return full;
    };
    auto fg = [&](const Vector& x, Vector& g) {
      LogKernelParams full_grad;
      const double v = objective(expand(x), &full_grad);
      g.resize(nf);
      for (Eigen::Index k = 0; k < nf; ++k) g[k] = full_grad[free_idx[static_cast<std::size_t>(k)]];
      return v;
    };
    Vector x0(nf);
    for (Eigen::Index k = 0; k < nf; ++k) x0[k] = base[free_idx[static_cast<std::size_t>(k)]];
    fit.start_nlml.push_back(objective(expand(x0.cwiseMax(lo).cwiseMin(hi))));
    const MinimizeResult r = minimize_box(fg, x0, lo, hi, opts.optimizer);
    fit.final_nlml.push_back(r.f);
    if (r.f < fit.nlml) {
      fit.nlml = r.f;
      fit.params = from_log(expand(r.x));
      fit.best_start = static_cast<int>(s);
    }
  }
  if (fit.best_start < 0) {
    throw NumericalError("fit_kernel: training covariance could not be factored at any start "
                         "(ill-conditioned)");
  }
  // Frozen components are restored exactly (log/exp round trip is lossy at 0).
  if (opts.frozen_var_alpha) fit.params.sigma_alpha = std::sqrt(*opts.frozen_var_alpha);
  if (opts.frozen_var_P) fit.params.sigma_P = std::sqrt(*opts.frozen_var_P);
  return fit;
}

}  // namespace rssfield
