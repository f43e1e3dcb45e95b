#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "rssfield/model.hpp"

namespace rssfield {

struct MinimizeResult {
  Vector x;
  double f = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

/// Derivative-free simplex descent. The best vertex never gets worse, so
/// the returned value is <= f(x0).
template <class F>
MinimizeResult nelder_mead(F&& f, const Vector& x0, const Vector& step, int max_iter = 200,
                           double rel_tol = 1e-6) {
  const Eigen::Index n = x0.size();
  std::vector<Vector> simplex(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> values(static_cast<std::size_t>(n + 1));
  for (Eigen::Index i = 0; i < n; ++i) simplex[static_cast<std::size_t>(i + 1)][i] += step[i];
  for (std::size_t i = 0; i < simplex.size(); ++i) values[i] = f(simplex[i]);

  std::vector<std::size_t> order(simplex.size());
  MinimizeResult out;
  for (int iter = 0; iter < max_iter; ++iter) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[order.size() - 2];
    out.iterations = iter;

    const double spread = std::abs(values[worst] - values[best]);
    double size = 0.0;
    for (const auto& v : simplex) size = std::max(size, (v - simplex[best]).cwiseAbs().maxCoeff());
    if (spread <= rel_tol * 0.5 * (std::abs(values[best]) + std::abs(values[worst])) ||
        size <= 1e-12 * (1.0 + simplex[best].cwiseAbs().maxCoeff())) {
      out.converged = true;
      break;
    }

    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i != worst) centroid += simplex[i];
    }
    centroid /= static_cast<double>(n);

    const Vector reflected = centroid + (centroid - simplex[worst]);
    const double fr = f(reflected);
    if (fr < values[best]) {
      const Vector expanded = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = f(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                      : Vector(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = f(contracted);
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
      values[i] = f(simplex[i]);
    }
  }
  const auto best =
      static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  out.x = simplex[best];
  out.f = values[best];
  return out;
}

struct BoxOptions {
  int max_iter = 200;
  double grad_tol = 1e-6;
  double f_rel_tol = 1e-10;
};

/// Projected BFGS on a box. `fg(x, grad)` returns f(x) and fills `grad`.
/// Components pinned at a bound with an outward gradient are frozen for
/// the step. Non-finite values are treated as rejected trial points.
template <class FG>
MinimizeResult minimize_box(FG&& fg, const Vector& x0, const Vector& lo, const Vector& hi,
                            const BoxOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  auto project = [&](const Vector& v) { return Vector(v.cwiseMax(lo).cwiseMin(hi)); };

  MinimizeResult out;
  Vector x = project(x0);
  Vector g(n);
  double f = fg(x, g);
  out.x = x;
  out.f = f;
  if (!std::isfinite(f)) return out;

  Matrix h = Matrix::Identity(n, n);
  bool scaled = false;
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    out.iterations = iter + 1;
    Eigen::Array<bool, Eigen::Dynamic, 1> frozen(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double span = hi[i] - lo[i];
      frozen[i] = (x[i] <= lo[i] + 1e-12 * span && g[i] > 0.0) ||
                  (x[i] >= hi[i] - 1e-12 * span && g[i] < 0.0);
    }
    Vector gf = g;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (frozen[i]) gf[i] = 0.0;
    }
    if (gf.norm() < opts.grad_tol) {
      out.converged = true;
      break;
    }

    Vector d = -(h * gf);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (frozen[i]) d[i] = 0.0;
    }
    if (g.dot(d) >= 0.0) {
      h.setIdentity();
      scaled = false;
      d = -gf;
    }

    double t = 1.0;
    bool accepted = false;
    Vector x_new;
    Vector g_new(n);
    double f_new = f;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = project(x + t * d);
      f_new = fg(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted || (x_new - x).norm() == 0.0) {
      out.converged = true;
      break;
    }

    const Vector s = x_new - x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        h *= sy / y.dot(y);
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Matrix i_n = Matrix::Identity(n, n);
      h = (i_n - rho * s * y.transpose()) * h * (i_n - rho * y * s.transpose()) +
          rho * s * s.transpose();
    }
    const double f_old = f;
    x = x_new;
    f = f_new;
    g = g_new;
    out.x = x;
    out.f = f;
    if (std::abs(f_old - f) <= opts.f_rel_tol * std::max(1.0, std::abs(f))) {
      out.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace rssfield
