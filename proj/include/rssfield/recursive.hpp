#pragma once

#include <optional>

#include "rssfield/empbayes.hpp"
#include "rssfield/error.hpp"
#include "rssfield/gp.hpp"
#include "rssfield/model.hpp"

namespace rssfield {

enum class KernelCadence {
  every_step,
  freeze_after_init,
};

struct RecursiveConfig {
  double lambda = 0.5;
  KernelCadence cadence = KernelCadence::freeze_after_init;
  NoiseModel noise;
  EmpiricalBayesConfig empirical_bayes;
  KernelFitOptions kernel_fit;
  std::optional<KernelParams> fixed_kernel;  // skips kernel fitting entirely
  bool track_covariance = true;
};

/// Carried state of the recursion: the previous posterior plus the prior
/// moments (m_Xg, K_g) it was built with.
struct RecursiveState {
  FieldPosterior posterior;
  double lambda = 0.5;
  CentroidState centroid;
  Vector grid_prior_mean;  // m_Xg at the posterior's step
  Matrix grid_prior_cov;   // K_g at the posterior's step (empty without covariance)
  bool carried = false;    // last step had no data and only carried the state forward
};

namespace detail {

inline void check_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw DomainError("recursive GP: lambda must lie in (0, 1]");
  }
}

inline KernelParams choose_kernel(const TrainingSet& train, const HyperEstimate& hyper,
                                  const RecursiveConfig& config,
                                  const std::optional<KernelParams>& previous) {
  if (config.fixed_kernel) return *config.fixed_kernel;
  if (previous && config.cadence == KernelCadence::freeze_after_init) {
    KernelParams k = *previous;
    if (hyper.has_variances) {
      k.sigma_alpha = std::sqrt(hyper.var_alpha);
      k.sigma_P = std::sqrt(hyper.var_P);
    }
    return k;
  }
  return fit_kernel(train, hyper, config.noise, fit_options_for(hyper, config.kernel_fit)).params;
}

}  // namespace detail

/// Runs the static pipeline on the first snapshot and seeds the recursion.
inline RecursiveState init_state(const MeasurementSnapshot& snapshot0, const Grid& grid,
                                 const RecursiveConfig& config) {
  detail::check_lambda(config.lambda);
  if (snapshot0.empty()) throw DegenerateError("init_state: the initial snapshot is empty");
  const EmpiricalBayesResult eb = refine_all(snapshot0, CentroidState{}, config.empirical_bayes);
  const TrainingSet train = TrainingSet::from(snapshot0);
  const KernelParams kernel = detail::choose_kernel(train, eb.hyper, config, std::nullopt);
  const StaticTerms terms =
      static_terms(train, grid, eb.hyper, kernel, config.noise, config.track_covariance);

  RecursiveState state;
  state.lambda = config.lambda;
  state.centroid = eb.centroid;
  state.posterior = assemble_posterior(terms, eb.hyper, kernel, snapshot0.t);
  state.grid_prior_mean = terms.prior_mean;
  state.grid_prior_cov = terms.prior_cov;
  return state;
}

/// One recursion step:
///   mu_g    = m_Xg + (1 - lambda)(mu_g' - m_Xg') + lambda mu_post
///   Sigma_g = K_g  - ((1 - lambda)(K_g' - Sigma_g') + lambda Sigma_post)
/// where primes denote the previous step. An empty snapshot carries the
/// state forward unchanged (lambda treated as 0) and sets `carried`.
inline RecursiveState rgp_step(const RecursiveState& state, const MeasurementSnapshot& snapshot,
                               const Grid& grid, const RecursiveConfig& config) {
  detail::check_lambda(state.lambda);
  if (snapshot.empty()) {
    RecursiveState next = state;
    next.posterior.t = snapshot.t;
    next.carried = true;
    return next;
  }
  const EmpiricalBayesResult eb = refine_all(snapshot, state.centroid, config.empirical_bayes);
  const TrainingSet train = TrainingSet::from(snapshot);
  const KernelParams kernel = detail::choose_kernel(train, eb.hyper, config, state.posterior.kernel);
  const bool with_cov = config.track_covariance && state.posterior.has_cov();
  const StaticTerms terms = static_terms(train, grid, eb.hyper, kernel, config.noise, with_cov);

  const double lambda = state.lambda;
  RecursiveState next;
  next.lambda = lambda;
  next.centroid = eb.centroid;
  next.grid_prior_mean = terms.prior_mean;
  next.grid_prior_cov = terms.prior_cov;

  FieldPosterior& post = next.posterior;
  post.t = snapshot.t;
  post.hyper = eb.hyper;
  post.kernel = kernel;
  post.jitter = terms.jitter;
  const Vector mean_prior = state.posterior.mean - state.grid_prior_mean;
  post.mean = terms.prior_mean + (1.0 - lambda) * mean_prior + lambda * terms.gain_mean;
  if (with_cov) {
    const Matrix cov_prior = state.grid_prior_cov - state.posterior.cov;
    post.cov = terms.prior_cov - ((1.0 - lambda) * cov_prior + lambda * terms.gain_cov);
    post.cov = 0.5 * (post.cov + post.cov.transpose());
  }
  return next;
}

}  // namespace rssfield
