// Command-line front end: synthetic generation, estimators, bounds, the
// location-error cases and real-data ingestion.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rssfield/rssfield.hpp"

namespace fs = std::filesystem;
using namespace rssfield;

namespace {

enum ExitCode : int { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> lambda;
  std::optional<int> steps;
  std::optional<int> replicates;
};

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (f.seed) {
    c.seed = *f.seed;
    c.scenario.seed = *f.seed;
  }
  if (!f.out.empty()) c.output_dir = f.out;
  if (f.lambda) c.lambda = *f.lambda;
  if (f.steps) c.steps = *f.steps;
  if (f.replicates) c.replicates = *f.replicates;
  c.validate();
  return c;
}

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "INI experiment file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--lambda", f.lambda, "forgetting factor in (0, 1]");
  cmd->add_option("--steps", f.steps, "number of time steps");
  cmd->add_option("--replicates", f.replicates, "number of replicates");
}

fs::path replicate_path(const ExperimentConfig& c, const std::string& stem, int r) {
  if (c.replicates == 1) return c.output_dir / (stem + ".csv");
  return c.output_dir / (stem + "_r" + std::to_string(r) + ".csv");
}

void write_timing(const fs::path& path, const std::vector<double>& runtime_ms) {
  auto out = io::detail::open_for_write(path);
  out << "job,runtime_ms\n";
  for (std::size_t i = 0; i < runtime_ms.size(); ++i) {
    out << i << ',' << io::format_double(runtime_ms[i]) << '\n';
  }
  io::detail::finish(out, path);
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

io::NodeTable truth_table(const Grid& grid, const Vector& values) {
  io::NodeTable t;
  t.positions.assign(grid.nodes().begin(), grid.nodes().end());
  for (std::size_t i = 0; i < grid.size(); ++i) t.node_id.push_back(static_cast<int>(i));
  t.rss = values;
  return t;
}

io::FieldTable okd_table(const OkdResult& okd, const Grid& grid) {
  io::FieldTable t;
  t.positions.assign(grid.nodes().begin(), grid.nodes().end());
  for (std::size_t i = 0; i < grid.size(); ++i) t.node_id.push_back(static_cast<int>(i));
  t.mean = okd.prediction;
  t.variance = okd.variance;
  return t;
}

// --- subcommands -----------------------------------------------------------

int cmd_synth(const ExperimentConfig& c) {
  const auto corr = std::make_shared<const GridCorrelation>(c.scenario.grid, c.scenario.params.d_corr);
  for (int r = 0; r < c.replicates; ++r) {
    Rng rng = make_rng(c.seed, static_cast<std::uint64_t>(r));
    World world(c.scenario, c.scenario.params.sigma_v > 0.0 ? corr : nullptr, rng);
    std::vector<MeasurementSnapshot> snaps;
    for (int t = 1; t <= c.steps; ++t) {
      world.advance(t, rng);
      auto [snap, truth] = world.observe(rng);
      snaps.push_back(std::move(snap));
      const std::string stem = c.steps == 1 ? "truth" : "truth_t" + std::to_string(t);
      io::write_nodes(replicate_path(c, stem, r), truth_table(c.scenario.grid, truth.grid_field));
    }
    io::write_measurements(replicate_path(c, "measurements", r), snaps);
  }
  std::cout << "wrote " << c.replicates << " replicate(s) to " << c.output_dir.string() << "\n";
  return kOk;
}

/// Real data: one estimate on the ingested split.
int fit_real(const ExperimentConfig& c, bool with_bound) {
  const RealData data = ingest_real(io::read_measurements(c.data.measurements), c.data.split_seed);
  const NoiseModel noise = real_noise(c);
  StaticOptions o = static_options(c, noise, data.area);
  o.empirical_bayes.shadowing.reset();
  const auto start = std::chrono::steady_clock::now();
  std::vector<MetricsRecord> records;
  const Position tx_ref = c.data.known_tx.value_or(data.area.center());
  if (c.estimator == EstimatorKind::okd) {
    const HyperEstimate hyper = refine_all(data.train, CentroidState{}, o.empirical_bayes).hyper;
    const OkdResult okd = okd_predict(TrainingSet::from(data.train), data.grid, hyper);
    io::write_field(c.output_dir / "field.csv", okd_table(okd, data.grid));
    records.push_back(make_record("okd", 0.0, 0, 0, compute_mse(okd.prediction, data.truth), hyper, tx_ref));
  } else {
    const StaticRun run = run_static(data.train, data.grid, o);
    std::vector<HcrbReport> bounds;
    if (with_bound) {
      bounds = hcrb_all(TrainingSet::from(data.train), data.grid, run.eb.hyper, run.kernel, noise);
    }
    io::emit_field(run.posterior, data.grid, with_bound ? &bounds : nullptr, c.output_dir / "field.csv");
    records.push_back(make_record("sgp", 0.0, 0, 0, compute_mse(run.posterior.mean, data.truth),
                                  run.eb.hyper, tx_ref));
  }
  io::write_nodes(c.output_dir / "truth.csv", truth_table(data.grid, data.truth));
  write_metrics(c.output_dir / "metrics.csv", records);
  write_timing(c.output_dir / "timing.csv", {elapsed_ms(start)});
  std::cout << "mse_db2 " << io::format_double(records.front().mse) << "\n";
  return kOk;
}

int cmd_fit_static(ExperimentConfig c, bool with_bound) {
  if (with_bound) c.estimator = EstimatorKind::sgp;
  if (!c.synthetic()) return fit_real(c, with_bound);
  const auto corr = std::make_shared<const GridCorrelation>(c.scenario.grid, c.scenario.params.d_corr);
  const std::string label = c.estimator == EstimatorKind::okd ? "okd" : "sgp";
  std::vector<MetricsRecord> records(static_cast<std::size_t>(c.replicates));
  std::vector<double> runtime(static_cast<std::size_t>(c.replicates));
  parallel_for(c.replicates, [&](int r) {
    const auto start = std::chrono::steady_clock::now();
    const SnapshotRun run = run_snapshot(c, r, c.scenario.params.sigma_v > 0.0 ? corr : nullptr);
    if (run.okd) {
      io::write_field(replicate_path(c, "field", r), okd_table(*run.okd, c.scenario.grid));
    } else {
      std::vector<HcrbReport> bounds;
      if (with_bound) {
        bounds = hcrb_all(TrainingSet::from(run.snapshot), c.scenario.grid, run.gp->eb.hyper,
                          run.gp->kernel, estimator_noise(c));
      }
      io::emit_field(run.gp->posterior, c.scenario.grid, with_bound ? &bounds : nullptr,
                     replicate_path(c, "field", r));
    }
    io::write_nodes(replicate_path(c, "truth", r), truth_table(c.scenario.grid, run.truth.grid_field));
    records[static_cast<std::size_t>(r)] =
        make_record(label, 0.0, r, run.snapshot.t, run.mse, run.hyper, c.scenario.params.tx);
    runtime[static_cast<std::size_t>(r)] = elapsed_ms(start);
  });
  write_metrics(c.output_dir / "metrics.csv", records);
  write_timing(c.output_dir / "timing.csv", runtime);
  double mean = 0.0;
  for (const auto& r : records) mean += r.mse / static_cast<double>(records.size());
  std::cout << "mean mse_db2 " << io::format_double(mean) << " over " << records.size() << " replicate(s)\n";
  return kOk;
}

int cmd_fit_recursive(const ExperimentConfig& c) {
  if (!c.synthetic()) throw ConfigError("fit-recursive needs a synthetic scenario ([data] measurements is set)");
  const auto corr = std::make_shared<const GridCorrelation>(c.scenario.grid, c.scenario.params.d_corr);
  std::vector<std::vector<MetricsRecord>> slots(static_cast<std::size_t>(c.replicates));
  std::vector<double> runtime(static_cast<std::size_t>(c.replicates));
  parallel_for(c.replicates, [&](int r) {
    const auto start = std::chrono::steady_clock::now();
    const RecursiveTrace trace = run_recursive(c, r, c.scenario.params.sigma_v > 0.0 ? corr : nullptr);
    io::emit_field(trace.state.posterior, c.scenario.grid, nullptr, replicate_path(c, "field", r));
    io::write_nodes(replicate_path(c, "truth", r), truth_table(c.scenario.grid, trace.last_truth.grid_field));
    slots[static_cast<std::size_t>(r)] = trace.records;
    runtime[static_cast<std::size_t>(r)] = elapsed_ms(start);
  });
  std::vector<MetricsRecord> records;
  for (const auto& s : slots) records.insert(records.end(), s.begin(), s.end());
  write_metrics(c.output_dir / "metrics.csv", records);
  write_timing(c.output_dir / "timing.csv", runtime);
  std::cout << "wrote " << records.size() << " step record(s) to " << c.output_dir.string() << "\n";
  return kOk;
}

int cmd_cases(const ExperimentConfig& c) {
  if (!c.synthetic()) throw ConfigError("cases needs a synthetic scenario ([data] measurements is set)");
  const CasesResult res = run_cases(c);
  write_metrics(c.output_dir / "metrics.csv", res.records);
  write_timing(c.output_dir / "timing.csv", res.runtime_ms);
  const auto summary = summarize_cases(res.records);
  write_case_summary(c.output_dir / "cases_summary.csv", summary);
  for (const auto& s : summary) {
    std::cout << "sigma_v2 " << s.sweep << ": case1 " << s.mean_mse[0] << "  case2 " << s.mean_mse[1]
              << "  case3 " << s.mean_mse[2] << "\n";
  }
  return kOk;
}

int cmd_eval(const std::string& field_path, const std::string& truth_path) {
  const io::FieldTable field = io::read_field(field_path);
  const io::NodeTable truth = io::read_nodes(truth_path);
  if (field.node_id != truth.node_id) {
    throw FormatError(field_path + " and " + truth_path + ": node ids do not match");
  }
  std::cout << io::format_double(compute_mse(field.mean, truth.rss)) << "\n";
  return kOk;
}

int cmd_ingest(const ExperimentConfig& c) {
  if (c.synthetic()) throw ConfigError("ingest-real needs [data] measurements");
  const RealData data = ingest_real(io::read_measurements(c.data.measurements), c.data.split_seed);
  const MeasurementSnapshot train[] = {data.train};
  io::write_measurements(c.output_dir / "train.csv", train);
  io::write_nodes(c.output_dir / "truth.csv", truth_table(data.grid, data.truth));
  std::cout << "train " << data.train.size() << " rows, test " << data.test_rows << " rows ("
            << data.grid.size() << " distinct nodes)\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic RSS field estimation with Gaussian processes"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::string field_path;
  std::string truth_path;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "generate synthetic measurement and truth files"},
      {"fit-static", "static GP (or [estimator] kind=okd) field estimate"},
      {"fit-recursive", "recursive GP over --steps time steps"},
      {"bound", "static GP estimate with the per-node hybrid bound"},
      {"baseline-okd", "ordinary kriging on detrended residuals"},
      {"cases", "location-error cases over the sigma_v^2 sweep"},
      {"eval", "MSE between a field file and a truth file"},
      {"ingest-real", "split a real measurement file into train and test"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* cmd = app.add_subcommand(name, help);
    if (name == "eval") {
      cmd->add_option("--field", field_path, "field CSV")->required()->check(CLI::ExistingFile);
      cmd->add_option("--truth", truth_path, "truth CSV")->required()->check(CLI::ExistingFile);
    } else {
      add_common(cmd, flags);
    }
    subs[name] = cmd;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (subs["eval"]->parsed()) return cmd_eval(field_path, truth_path);
    ExperimentConfig c = resolve(flags);
    if (subs["synth"]->parsed()) return cmd_synth(c);
    if (subs["fit-static"]->parsed()) {
      if (c.estimator == EstimatorKind::rgp) return cmd_fit_recursive(c);
      return cmd_fit_static(c, false);
    }
    if (subs["fit-recursive"]->parsed()) return cmd_fit_recursive(c);
    if (subs["bound"]->parsed()) return cmd_fit_static(c, true);
    if (subs["baseline-okd"]->parsed()) {
      c.estimator = EstimatorKind::okd;
      return cmd_fit_static(c, false);
    }
    if (subs["cases"]->parsed()) return cmd_cases(c);
    if (subs["ingest-real"]->parsed()) return cmd_ingest(c);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
  return kOk;
}
