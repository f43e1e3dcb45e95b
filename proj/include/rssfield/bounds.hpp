#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "rssfield/gp.hpp"
#include "rssfield/linalg.hpp"
#include "rssfield/model.hpp"

namespace rssfield {

/// Hybrid Cramér-Rao bound at one grid node: the GP posterior variance plus
/// g^T M^{-1} g for the deterministic mean hyper-parameters
/// (mu_P, mu_alpha, tx_x, tx_y).
struct HcrbReport {
  std::size_t node_index = 0;
  double gp_variance = 0.0;
  double added_term = 0.0;
  double bound = 0.0;
  Eigen::Vector4d g = Eigen::Vector4d::Zero();
  bool singular = false;  // M was rank-deficient; pseudo-inverse used
};

/// Relative eigenvalue cutoff for the pseudo-inverse of M.
inline constexpr double kHcrbPinvCutoff = 1e-10;

/// Shares the factorization of K_X + Sigma_eps and everything that does not
/// depend on the probed node.
class HcrbContext {
 public:
  HcrbContext(const TrainingSet& train, const Grid& grid, const HyperEstimate& hyper,
              const KernelParams& kernel, const NoiseModel& noise)
      : train_(train), grid_(grid), hyper_(hyper), kernel_(kernel) {
    const auto n = static_cast<Eigen::Index>(train.size());
    if (train.z.size() != n) throw DomainError("hcrb: inconsistent training set");
    if (n == 0) throw DegenerateError("hcrb: no training data");

    const Position x0 = hyper.tx;
    const Vector d_hat = distances_to(x0, train.positions);
    const Vector q_hat = log_distance_features(d_hat);
    c_ = -10.0 * hyper.mu_alpha * std::log10(std::numbers::e);

    Matrix cov = kernel_matrix(train.positions, kernel, x0);
    cov.diagonal() += noise_variances(d_hat, noise);
    chol_ = jittered_cholesky(cov, "training covariance K_X + Sigma_eps");

    // B = [1, -q_hat, A], A = c D_hat (J diag(x0) - X_hat): d m_X / d(mu_P, mu_alpha, x0).
    b_.resize(n, 4);
    Matrix a1(n, 1);
    Matrix a2(n, 1);
    const double rho2 = noise.rho_u * noise.rho_u;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Position xi = train.positions[static_cast<std::size_t>(i)];
      const double inv_d2 = 1.0 / (d_hat[i] * d_hat[i]);
      b_(i, 0) = 1.0;
      b_(i, 1) = -q_hat[i];
      b_(i, 2) = c_ * inv_d2 * (x0.x - xi.x);
      b_(i, 3) = c_ * inv_d2 * (x0.y - xi.y);
      // Diagonals of A1, A2 = -2 sigma_u^2 D_hat^2 (x0(j) - X_hat(:, j)), sigma_u^2 -> rho_u^2.
      a1(i, 0) = -2.0 * rho2 * inv_d2 * inv_d2 * (x0.x - xi.x);
      a2(i, 0) = -2.0 * rho2 * inv_d2 * inv_d2 * (x0.y - xi.y);
    }
    cinv_b_ = chol_.solve(b_);
    const Vector cinv_m = chol_.solve(Vector(prior_mean(train.positions, hyper)));
    u1_ = chol_.solve(Vector(a1.col(0).cwiseProduct(cinv_m)));
    u2_ = chol_.solve(Vector(a2.col(0).cwiseProduct(cinv_m)));

    // M^{+} through its eigen-decomposition so the quadratic form stays >= 0.
    const Eigen::Matrix4d m = b_.transpose() * cinv_b_;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(0.5 * (m + m.transpose()));
    evecs_ = eig.eigenvectors();
    const double smax = eig.eigenvalues().cwiseAbs().maxCoeff();
    for (int k = 0; k < 4; ++k) {
      const double s = eig.eigenvalues()[k];
      if (smax > 0.0 && s > kHcrbPinvCutoff * smax) {
        inv_evals_[k] = 1.0 / s;
      } else {
        inv_evals_[k] = 0.0;
        singular_ = true;
      }
    }
  }

  [[nodiscard]] HcrbReport at(std::size_t node) const {
    if (node >= grid_.size()) throw DomainError("hcrb: node index out of range");
    const Position xg = grid_[node];
    const Position x0 = hyper_.tx;
    const auto n = static_cast<Eigen::Index>(train_.size());

    Vector k(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      k[i] = kernel_eval(xg, train_.positions[static_cast<std::size_t>(i)], kernel_, x0);
    }
    HcrbReport r;
    r.node_index = node;
    Vector lk = k;
    chol_.llt.matrixL().solveInPlace(lk);
    r.gp_variance = kernel_eval(xg, xg, kernel_, x0) - lk.squaredNorm();

    const double dg = clamped_distance(xg, x0);
    Eigen::Vector4d lead;
    lead << 1.0, -10.0 * std::log10(dg), c_ / (dg * dg) * (x0.x - xg.x),
        c_ / (dg * dg) * (x0.y - xg.y);
    r.g = lead - cinv_b_.transpose() * k;
    r.g[2] += u1_.dot(k);
    r.g[3] += u2_.dot(k);

    const Eigen::Vector4d proj = evecs_.transpose() * r.g;
    double added = 0.0;
    for (int j = 0; j < 4; ++j) added += proj[j] * proj[j] * inv_evals_[j];
    r.added_term = added;
    r.bound = r.gp_variance + r.added_term;
    r.singular = singular_;
    return r;
  }

  [[nodiscard]] bool singular() const { return singular_; }

 private:
  TrainingSet train_;
  Grid grid_;
  HyperEstimate hyper_;
  KernelParams kernel_;
  double c_ = 0.0;
  JitteredCholesky chol_;
  Matrix b_;
  Matrix cinv_b_;
  Vector u1_;
  Vector u2_;
  Eigen::Matrix4d evecs_;
  Eigen::Vector4d inv_evals_ = Eigen::Vector4d::Zero();
  bool singular_ = false;
};

inline HcrbReport hcrb(std::size_t node, const TrainingSet& train, const Grid& grid,
                       const HyperEstimate& hyper, const KernelParams& kernel,
                       const NoiseModel& noise) {
  return HcrbContext(train, grid, hyper, kernel, noise).at(node);
}

inline std::vector<HcrbReport> hcrb_all(const TrainingSet& train, const Grid& grid,
                                        const HyperEstimate& hyper, const KernelParams& kernel,
                                        const NoiseModel& noise) {
  const HcrbContext ctx(train, grid, hyper, kernel, noise);
  std::vector<HcrbReport> out;
  out.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) out.push_back(ctx.at(i));
  return out;
}

}  // namespace rssfield
