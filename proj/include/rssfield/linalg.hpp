#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "rssfield/error.hpp"
#include "rssfield/model.hpp"

namespace rssfield {

/// Cholesky factor together with the diagonal jitter that was needed to get it.
struct JitteredCholesky {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;

  [[nodiscard]] Vector solve(const Vector& b) const { return llt.solve(b); }
  [[nodiscard]] Matrix solve(const Matrix& b) const { return llt.solve(b); }
  [[nodiscard]] double log_determinant() const {
    const Matrix& l = llt.matrixLLT();
    return 2.0 * l.diagonal().array().log().sum();
  }
};

namespace detail {

inline bool factor_ok(const Eigen::LLT<Matrix>& llt) {
  if (llt.info() != Eigen::Success) return false;
  const Matrix& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) return false;
  }
  return true;
}

}  // namespace detail

/// Factor a symmetric matrix, adding jitter on failure: 1e-10, 1e-9, ... up
/// to 1e-4, all relative to the mean diagonal. Throws NumericalError if the
/// last rung still fails.
inline JitteredCholesky jittered_cholesky(const Matrix& a, std::string_view what = "matrix") {
  JitteredCholesky out;
  if (a.rows() == 0) return out;
  out.llt.compute(a);
  if (detail::factor_ok(out.llt)) return out;

  const double mean_diag = std::max(a.diagonal().mean(), std::numeric_limits<double>::min());
  for (double rel = 1e-10; rel <= 1e-4 * (1.0 + 1e-9); rel *= 10.0) {
    Matrix jittered = a;
    jittered.diagonal().array() += rel * mean_diag;
    out.llt.compute(jittered);
    if (detail::factor_ok(out.llt)) {
      out.jitter = rel * mean_diag;
      return out;
    }
  }
  throw NumericalError(std::string(what) +
                       ": not positive definite after maximum jitter (ill-conditioned)");
}

/// True when `a` admits a Cholesky factorization without any jitter.
inline bool is_positive_definite(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  return detail::factor_ok(llt);
}

/// Result of the two-variable nonnegative least-squares problem.
struct Nnls2Result {
  double x1 = 0.0;
  double x2 = 0.0;
  double objective = 0.0;
};

/// min ||x1*a + x2*b - y||^2 subject to x1, x2 >= 0, with optional row weights.
/// Solved exactly: the unconstrained optimum if feasible, else the best of
/// the boundary candidates (x2 = 0, x1 = 0, origin).
inline Nnls2Result nnls2(const Vector& a, const Vector& b, const Vector& y,
                         const Vector* weights = nullptr) {
  auto w = [&](Eigen::Index i) { return weights ? (*weights)[i] : 1.0; };
  double aa = 0, ab = 0, bb = 0, ay = 0, by = 0, yy = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    aa += w(i) * a[i] * a[i];
    ab += w(i) * a[i] * b[i];
    bb += w(i) * b[i] * b[i];
    ay += w(i) * a[i] * y[i];
    by += w(i) * b[i] * y[i];
    yy += w(i) * y[i] * y[i];
  }
  auto objective = [&](double x1, double x2) {
    return x1 * x1 * aa + 2.0 * x1 * x2 * ab + x2 * x2 * bb - 2.0 * (x1 * ay + x2 * by) + yy;
  };

  Nnls2Result best{0.0, 0.0, objective(0.0, 0.0)};
  auto consider = [&](double x1, double x2) {
    if (x1 < 0.0 || x2 < 0.0) return;
    const double f = objective(x1, x2);
    if (f < best.objective) best = {x1, x2, f};
  };

  const double det = aa * bb - ab * ab;
  if (det > 1e-14 * std::max(aa * bb, std::numeric_limits<double>::min())) {
    const double x1 = (bb * ay - ab * by) / det;
    const double x2 = (aa * by - ab * ay) / det;
    if (x1 >= 0.0 && x2 >= 0.0) {
      return {x1, x2, std::max(0.0, objective(x1, x2))};
    }
  }
  if (aa > 0.0) consider(std::max(0.0, ay / aa), 0.0);
  if (bb > 0.0) consider(0.0, std::max(0.0, by / bb));
  best.objective = std::max(0.0, best.objective);
  return best;
}

/// Moore-Penrose inverse of a symmetric matrix with a relative singular-value
/// cutoff. `rank_deficient` reports whether any value was dropped.
inline Matrix symmetric_pseudo_inverse(const Matrix& a, double rel_cutoff, bool* rank_deficient) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  const Vector& s = eig.eigenvalues();
  const double smax = s.cwiseAbs().maxCoeff();
  Vector inv(s.size());
  bool dropped = false;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (std::abs(s[i]) > rel_cutoff * smax && smax > 0.0) {
      inv[i] = 1.0 / s[i];
    } else {
      inv[i] = 0.0;
      dropped = true;
    }
  }
  if (rank_deficient) *rank_deficient = dropped;
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace rssfield
