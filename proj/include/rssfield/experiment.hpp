#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rssfield/baseline.hpp"
#include "rssfield/bounds.hpp"
#include "rssfield/config.hpp"
#include "rssfield/empbayes.hpp"
#include "rssfield/gp.hpp"
#include "rssfield/io.hpp"
#include "rssfield/linalg.hpp"
#include "rssfield/metrics.hpp"
#include "rssfield/recursive.hpp"
#include "rssfield/rng.hpp"
#include "rssfield/synth.hpp"

namespace rssfield {

/// Runs body(i) for i in [0, n) on up to hardware_concurrency threads.
/// Each index must write only its own output slot. If any call throws, the
/// exception of the lowest failing index is rethrown.
template <class Body>
void parallel_for(int n, Body&& body, unsigned max_threads = 0) {
  if (n <= 0) return;
  unsigned threads = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Static pipeline: empirical Bayes, kernel fit, posterior.

struct StaticOptions {
  NoiseModel noise;
  EmpiricalBayesConfig empirical_bayes;
  KernelFitOptions kernel_fit;
  std::optional<KernelParams> fixed_kernel;
  bool with_cov = true;
};

struct StaticRun {
  EmpiricalBayesResult eb;
  KernelParams kernel;
  FieldPosterior posterior;
};

inline StaticRun run_static(const MeasurementSnapshot& snapshot, const Grid& grid,
                            const StaticOptions& opts) {
  StaticRun run;
  run.eb = refine_all(snapshot, CentroidState{}, opts.empirical_bayes);
  const TrainingSet train = TrainingSet::from(snapshot);
  run.kernel = opts.fixed_kernel
                   ? *opts.fixed_kernel
                   : fit_kernel(train, run.eb.hyper, opts.noise,
                                fit_options_for(run.eb.hyper, opts.kernel_fit))
                         .params;
  run.posterior =
      posterior(train, grid, run.eb.hyper, run.kernel, opts.noise, opts.with_cov, snapshot.t);
  return run;
}

/// Noise model the estimator assumes for synthetic data.
inline NoiseModel estimator_noise(const ExperimentConfig& config) {
  const PropagationParams& p = config.scenario.params;
  return {config.model_location_error ? rho_u_from(p.alpha, p.sigma_d) : 0.0, p.sigma_w};
}

inline StaticOptions static_options(const ExperimentConfig& config, const NoiseModel& noise,
                                    std::optional<Rect> area) {
  StaticOptions o;
  o.noise = noise;
  o.empirical_bayes.area = area;
  o.empirical_bayes.known_tx = config.data.known_tx;
  o.empirical_bayes.noise = noise;
  if (config.variance_path == VariancePath::empirical_bayes) {
    o.empirical_bayes.shadowing =
        ShadowingModel{config.scenario.params.sigma_v, config.scenario.params.d_corr};
  }
  return o;
}

inline RecursiveConfig recursive_config(const ExperimentConfig& config, const StaticOptions& o) {
  RecursiveConfig rc;
  rc.lambda = config.lambda;
  rc.cadence = config.cadence;
  rc.noise = o.noise;
  rc.empirical_bayes = o.empirical_bayes;
  rc.kernel_fit = o.kernel_fit;
  rc.fixed_kernel = o.fixed_kernel;
  rc.track_covariance = o.with_cov;
  return rc;
}

/// Positive definite without any jitter.
inline bool covariance_is_pd(const FieldPosterior& post) {
  return post.has_cov() && is_positive_definite(post.cov);
}

inline MetricsRecord make_record(std::string label, double sweep, int replicate, int t, double mse,
                                 const HyperEstimate& hyper, Position true_tx) {
  MetricsRecord r;
  r.label = std::move(label);
  r.sweep = sweep;
  r.replicate = replicate;
  r.t = t;
  r.mse = mse;
  r.mu_alpha = hyper.mu_alpha;
  r.mu_P = hyper.mu_P;
  r.tx_error_m = pairwise_distance(hyper.tx, true_tx);
  return r;
}

// ---------------------------------------------------------------------------
// Location-error cases.

enum class LocationCase {
  true_positions = 1,  // exact sensor positions, rho_u = 0
  modeled_errors = 2,  // reported positions, rho_u from the position error
  ignored_errors = 3,  // reported positions, rho_u = 0
};

inline const char* case_label(LocationCase c) {
  switch (c) {
    case LocationCase::true_positions: return "case1";
    case LocationCase::modeled_errors: return "case2";
    case LocationCase::ignored_errors: return "case3";
  }
  return "case?";
}

/// The snapshot and noise model a case feeds to the static estimator.
inline std::pair<MeasurementSnapshot, NoiseModel> case_inputs(LocationCase c,
                                                              const MeasurementSnapshot& reported,
                                                              const GroundTruth& truth,
                                                              const PropagationParams& params) {
  MeasurementSnapshot snap = reported;
  NoiseModel noise{0.0, params.sigma_w};
  if (c == LocationCase::true_positions) {
    for (std::size_t i = 0; i < snap.sensors.size(); ++i) {
      snap.sensors[i].position = truth.sensor_true_positions[i];
    }
  } else if (c == LocationCase::modeled_errors) {
    noise.rho_u = rho_u_from(params.alpha, params.sigma_d);
  }
  return {std::move(snap), noise};
}

struct CaseRun {
  StaticRun run;
  double mse = 0.0;
};

inline CaseRun run_case(LocationCase c, const MeasurementSnapshot& reported,
                        const GroundTruth& truth, const ExperimentConfig& config,
                        const Scenario& scenario, bool with_cov) {
  auto [snap, noise] = case_inputs(c, reported, truth, scenario.params);
  StaticOptions o = static_options(config, noise, scenario.area);
  o.with_cov = with_cov;
  CaseRun out;
  out.run = run_static(snap, scenario.grid, o);
  out.mse = compute_mse(out.run.posterior.mean, truth.grid_field);
  return out;
}

struct CasesResult {
  std::vector<MetricsRecord> records;  // sweep-major, then replicate, then case
  std::vector<double> runtime_ms;      // per (sweep, replicate)
  bool covariance_pd = true;           // replicate 0 of every sweep value
};

/// Cases 1-3 over the sigma_v^2 sweep. All three cases of a replicate share
/// one synthetic world, so the comparison is paired.
inline CasesResult run_cases(const ExperimentConfig& config) {
  config.validate();
  CasesResult out;
  const int reps = config.replicates;
  const auto sweeps = static_cast<int>(config.sigma_v2_sweep.size());
  const std::shared_ptr<const GridCorrelation> corr =
      std::make_shared<const GridCorrelation>(config.scenario.grid, config.scenario.params.d_corr);
  constexpr LocationCase kCases[] = {LocationCase::true_positions, LocationCase::modeled_errors,
                                     LocationCase::ignored_errors};

  std::vector<std::vector<MetricsRecord>> slots(static_cast<std::size_t>(sweeps * reps));
  std::vector<double> runtime(static_cast<std::size_t>(sweeps * reps), 0.0);
  std::vector<char> pd(static_cast<std::size_t>(sweeps * reps), 1);
  parallel_for(sweeps * reps, [&](int job) {
    const int s = job / reps;
    const int r = job % reps;
    const auto start = std::chrono::steady_clock::now();
    Scenario scenario = config.scenario;
    const double sv2 = config.sigma_v2_sweep[static_cast<std::size_t>(s)];
    scenario.params.sigma_v = std::sqrt(sv2);
    Rng rng = make_rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(s)),
                       static_cast<std::uint64_t>(r));
    World world(scenario, corr, rng);
    const auto [snap, truth] = world.observe(rng);
    const bool with_cov = r == 0;
    auto& slot = slots[static_cast<std::size_t>(job)];
    for (LocationCase c : kCases) {
      const CaseRun cr = run_case(c, snap, truth, config, scenario, with_cov);
      if (with_cov && !covariance_is_pd(cr.run.posterior)) pd[static_cast<std::size_t>(job)] = 0;
      slot.push_back(make_record(case_label(c), sv2, r, snap.t, cr.mse, cr.run.eb.hyper,
                                 scenario.params.tx));
    }
    runtime[static_cast<std::size_t>(job)] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  });
  for (std::size_t j = 0; j < slots.size(); ++j) {
    out.records.insert(out.records.end(), slots[j].begin(), slots[j].end());
    out.covariance_pd = out.covariance_pd && pd[j] != 0;
  }
  out.runtime_ms = std::move(runtime);
  return out;
}

/// Mean MSE per (case, sweep value) plus the paired tests case1 < case2 and
/// case2 < case3.
struct CaseSummary {
  double sweep = 0.0;
  double mean_mse[3] = {0.0, 0.0, 0.0};
  PairedTest gap12;
  PairedTest gap23;
};

inline std::vector<CaseSummary> summarize_cases(const std::vector<MetricsRecord>& records) {
  std::map<double, std::map<std::string, std::vector<double>>> by_sweep;
  for (const auto& r : records) by_sweep[r.sweep][r.label].push_back(r.mse);
  std::vector<CaseSummary> out;
  for (auto& [sweep, cases] : by_sweep) {
    CaseSummary s;
    s.sweep = sweep;
    const char* labels[] = {"case1", "case2", "case3"};
    for (int k = 0; k < 3; ++k) {
      const auto& v = cases[labels[k]];
      s.mean_mse[k] = v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    }
    if (cases["case1"].size() >= 2 && cases["case1"].size() == cases["case2"].size() &&
        cases["case2"].size() == cases["case3"].size()) {
      s.gap12 = paired_t_test(cases["case1"], cases["case2"]);
      s.gap23 = paired_t_test(cases["case2"], cases["case3"]);
    }
    out.push_back(s);
  }
  return out;
}

inline void write_case_summary(const std::filesystem::path& path,
                               const std::vector<CaseSummary>& summary) {
  auto out = io::detail::open_for_write(path);
  out << "sigma_v2_db2,case1_mse_db2,case2_mse_db2,case3_mse_db2,p_case1_lt_case2,p_case2_lt_case3\n";
  for (const auto& s : summary) {
    out << io::format_double(s.sweep) << ',' << io::format_double(s.mean_mse[0]) << ','
        << io::format_double(s.mean_mse[1]) << ',' << io::format_double(s.mean_mse[2]) << ','
        << io::format_double(s.gap12.p_value) << ',' << io::format_double(s.gap23.p_value) << '\n';
  }
  io::detail::finish(out, path);
}

// ---------------------------------------------------------------------------
// Synthetic single-snapshot and recursive runs.

/// One static estimate (sGP, or OKD on the empirical-Bayes trend).
struct SnapshotRun {
  MeasurementSnapshot snapshot;
  GroundTruth truth;
  std::optional<StaticRun> gp;
  std::optional<OkdResult> okd;
  HyperEstimate hyper;
  double mse = 0.0;
};

inline SnapshotRun run_snapshot(const ExperimentConfig& config, int replicate,
                                std::shared_ptr<const GridCorrelation> corr = nullptr,
                                bool with_cov = true) {
  const Scenario& scenario = config.scenario;
  Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(replicate));
  World world(scenario, std::move(corr), rng);
  world.advance(1, rng);
  SnapshotRun out;
  std::tie(out.snapshot, out.truth) = world.observe(rng);
  StaticOptions o = static_options(config, estimator_noise(config), scenario.area);
  o.with_cov = with_cov;
  if (config.estimator == EstimatorKind::okd) {
    out.hyper = refine_all(out.snapshot, CentroidState{}, o.empirical_bayes).hyper;
    out.okd = okd_predict(TrainingSet::from(out.snapshot), scenario.grid, out.hyper);
    out.mse = compute_mse(out.okd->prediction, out.truth.grid_field);
  } else {
    out.gp = run_static(out.snapshot, scenario.grid, o);
    out.hyper = out.gp->eb.hyper;
    out.mse = compute_mse(out.gp->posterior.mean, out.truth.grid_field);
  }
  return out;
}

struct RecursiveTrace {
  std::vector<MetricsRecord> records;  // one per step t = 1..T
  std::vector<MeasurementSnapshot> snapshots;
  GroundTruth last_truth;
  RecursiveState state;
  bool covariance_pd = true;  // every step, when covariance is tracked
};

/// Evolves a synthetic world over t = 1..T (dynamics apply from the first
/// step) and tracks it with the recursive estimator.
inline RecursiveTrace run_recursive(const ExperimentConfig& config, int replicate,
                                    std::shared_ptr<const GridCorrelation> corr = nullptr,
                                    bool with_cov = true) {
  const Scenario& scenario = config.scenario;
  Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(replicate));
  World world(scenario, std::move(corr), rng);
  StaticOptions o = static_options(config, estimator_noise(config), scenario.area);
  o.with_cov = with_cov;
  const RecursiveConfig rc = recursive_config(config, o);
  RecursiveTrace trace;
  for (int t = 1; t <= config.steps; ++t) {
    world.advance(t, rng);
    auto [snap, truth] = world.observe(rng);
    trace.state = t == 1 ? init_state(snap, scenario.grid, rc)
                         : rgp_step(trace.state, snap, scenario.grid, rc);
    if (with_cov && !covariance_is_pd(trace.state.posterior)) trace.covariance_pd = false;
    trace.records.push_back(make_record("rgp", 0.0, replicate, t,
                                        compute_mse(trace.state.posterior.mean, truth.grid_field),
                                        trace.state.posterior.hyper, scenario.params.tx));
    trace.snapshots.push_back(std::move(snap));
    trace.last_truth = std::move(truth);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Real measurements.

struct RealData {
  MeasurementSnapshot train;  // t = 0, sensor_id = original row index
  Grid grid;                  // test locations, duplicates merged
  Vector truth;               // test RSS per node (mean over merged rows)
  std::size_t test_rows = 0;
  Rect area;                  // bounding box of all rows
};

/// Seeded 50/50 split of every row: floor(n/2) rows train, the rest test.
inline RealData ingest_real(const std::vector<MeasurementSnapshot>& snapshots,
                            std::uint64_t split_seed) {
  std::vector<SensorReport> rows;
  for (const auto& s : snapshots) rows.insert(rows.end(), s.sensors.begin(), s.sensors.end());
  if (rows.size() < 2) throw DegenerateError("ingest_real: at least two rows are required");

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(split_seed, 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = rows.size() / 2;

  Rect box{rows[0].position.x, rows[0].position.y, rows[0].position.x, rows[0].position.y};
  for (const auto& r : rows) {
    box.x_min = std::min(box.x_min, r.position.x);
    box.y_min = std::min(box.y_min, r.position.y);
    box.x_max = std::max(box.x_max, r.position.x);
    box.y_max = std::max(box.y_max, r.position.y);
  }

  MeasurementSnapshot train;
  train.t = 0;
  for (std::size_t k = 0; k < n_train; ++k) {
    SensorReport r = rows[order[k]];
    r.sensor_id = static_cast<int>(order[k]);
    train.sensors.push_back(r);
  }
  std::sort(train.sensors.begin(), train.sensors.end(),
            [](const SensorReport& a, const SensorReport& b) { return a.sensor_id < b.sensor_id; });

  // Test rows in file order; repeated locations become one node.
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(test.begin(), test.end());
  std::vector<Position> nodes;
  std::vector<double> sum;
  std::vector<int> count;
  std::map<std::pair<double, double>, std::size_t> index;
  for (std::size_t k : test) {
    const Position p = rows[k].position;
    const auto [it, inserted] = index.try_emplace({p.x, p.y}, nodes.size());
    if (inserted) {
      nodes.push_back(p);
      sum.push_back(0.0);
      count.push_back(0);
    }
    sum[it->second] += rows[k].rss_dbm;
    count[it->second] += 1;
  }
  Vector truth(static_cast<Eigen::Index>(nodes.size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    truth[static_cast<Eigen::Index>(i)] = sum[i] / count[i];
  }
  return {std::move(train), Grid(std::move(nodes)), std::move(truth), test.size(), box};
}

inline NoiseModel real_noise(const ExperimentConfig& config) {
  return {config.model_location_error ? config.data.rho_u : 0.0, config.data.sigma_w};
}

}  // namespace rssfield
