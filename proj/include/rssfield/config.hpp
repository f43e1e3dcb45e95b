#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rssfield/error.hpp"
#include "rssfield/model.hpp"
#include "rssfield/recursive.hpp"
#include "rssfield/synth.hpp"

namespace rssfield {

enum class EstimatorKind { sgp, rgp, okd };

/// Where sigma_alpha^2 and sigma_P^2 come from: the marginal-likelihood fit
/// of the kernel, or the empirical-Bayes moment fit (needs sigma_v, d_corr).
enum class VariancePath { kernel, empirical_bayes };

struct DataSource {
  std::filesystem::path measurements;  // empty => synthetic
  std::uint64_t split_seed = 1;
  std::optional<Position> known_tx;
  double rho_u = 1140.0;  // dB m, used for real data
  double sigma_w = std::sqrt(7.0);
};

struct ExperimentConfig {
  Scenario scenario = Scenario::paper_default();
  EstimatorKind estimator = EstimatorKind::sgp;
  double lambda = 0.5;
  int steps = 1;
  int replicates = 1;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  VariancePath variance_path = VariancePath::kernel;
  KernelCadence cadence = KernelCadence::freeze_after_init;
  bool model_location_error = true;  // rho_u from rho_u_from(alpha, sigma_d), else 0
  std::vector<double> sigma_v2_sweep{4.0, 10.0, 16.0};
  DataSource data;

  [[nodiscard]] bool synthetic() const { return data.measurements.empty(); }

  void validate() const {
    scenario.validate();
    if (steps < 1) throw ConfigError("estimator.steps must be >= 1");
    if (replicates < 1) throw ConfigError("estimator.replicates must be >= 1");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("estimator.lambda must lie in (0, 1]");
    for (double s : sigma_v2_sweep) {
      if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("cases.sigma_v2_sweep entries must be >= 0");
    }
    if (!(data.rho_u >= 0.0) || !(data.sigma_w >= 0.0)) {
      throw ConfigError("data.rho_u and data.sigma_w must be >= 0");
    }
  }
};

namespace detail {

inline std::vector<double> parse_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError(key + ": malformed number '" + item + "'");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos) {
      throw ConfigError(key + ": malformed number '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

template <class T>
T get_or(const boost::property_tree::ptree& tree, const std::string& key, T fallback) {
  const auto node = tree.get_child_optional(key);
  if (!node) return fallback;
  const auto v = node->get_value_optional<T>();
  if (!v) throw ConfigError(key + ": cannot parse '" + node->data() + "'");
  return *v;
}

}  // namespace detail

/// Parses the INI-style experiment file. Unknown sections or keys are
/// rejected so typos do not silently fall back to defaults.
inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  static const std::vector<std::pair<std::string, std::vector<std::string>>> schema{
      {"scenario",
       {"area_width_m", "area_height_m", "grid_nx", "grid_ny", "n_sensors", "alpha", "power_dbm",
        "sigma_v2_db2", "d_corr_m", "sigma_w2_db2", "sigma_d_m", "tx_x_m", "tx_y_m", "dynamics",
        "drop_fraction", "step_std_m"}},
      {"estimator",
       {"kind", "lambda", "steps", "replicates", "seed", "variance_path", "cadence",
        "model_location_error"}},
      {"cases", {"sigma_v2_sweep"}},
      {"data", {"measurements", "split_seed", "tx_x_m", "tx_y_m", "rho_u", "sigma_w2_db2"}},
      {"output", {"dir"}},
  };
  for (const auto& [section, body] : tree) {
    const auto it = std::find_if(schema.begin(), schema.end(),
                                 [&](const auto& s) { return s.first == section; });
    if (it == schema.end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end()) {
        throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
      }
    }
  }

  using detail::get_or;
  ExperimentConfig c;
  Scenario& s = c.scenario;
  PropagationParams& p = s.params;
  const double width = get_or(tree, "scenario.area_width_m", s.area.width());
  const double height = get_or(tree, "scenario.area_height_m", s.area.height());
  const int nx = get_or(tree, "scenario.grid_nx", 34);
  const int ny = get_or(tree, "scenario.grid_ny", 32);
  if (!(width > 0.0) || !(height > 0.0)) throw ConfigError("scenario: area must be positive");
  if (nx < 1 || ny < 1) throw ConfigError("scenario: grid_nx and grid_ny must be >= 1");
  s.area = Rect{0.0, 0.0, width, height};
  s.grid = Grid::uniform(s.area, nx, ny);
  s.n_sensors = get_or(tree, "scenario.n_sensors", s.n_sensors);
  p.alpha = get_or(tree, "scenario.alpha", p.alpha);
  p.power = get_or(tree, "scenario.power_dbm", p.power);
  const double sv2 = get_or(tree, "scenario.sigma_v2_db2", p.sigma_v * p.sigma_v);
  const double sw2 = get_or(tree, "scenario.sigma_w2_db2", p.sigma_w * p.sigma_w);
  if (sv2 < 0.0 || sw2 < 0.0) throw ConfigError("scenario: variances must be >= 0");
  p.sigma_v = std::sqrt(sv2);
  p.sigma_w = std::sqrt(sw2);
  p.d_corr = get_or(tree, "scenario.d_corr_m", p.d_corr);
  p.sigma_d = get_or(tree, "scenario.sigma_d_m", p.sigma_d);
  p.tx = {get_or(tree, "scenario.tx_x_m", width / 2.0), get_or(tree, "scenario.tx_y_m", height / 2.0)};
  const std::string dyn = get_or<std::string>(tree, "scenario.dynamics", "static");
  if (dyn == "static") {
    s.dynamics = StaticSensors{};
  } else if (dyn == "intermittent") {
    s.dynamics = Intermittent{get_or(tree, "scenario.drop_fraction", 0.2)};
  } else if (dyn == "moving") {
    s.dynamics = Moving{get_or(tree, "scenario.step_std_m", 5.0)};
  } else {
    throw ConfigError("scenario.dynamics: expected static, intermittent or moving, got '" + dyn + "'");
  }

  const std::string kind = get_or<std::string>(tree, "estimator.kind", "sgp");
  if (kind == "sgp") {
    c.estimator = EstimatorKind::sgp;
  } else if (kind == "rgp") {
    c.estimator = EstimatorKind::rgp;
  } else if (kind == "okd") {
    c.estimator = EstimatorKind::okd;
  } else {
    throw ConfigError("estimator.kind: expected sgp, rgp or okd, got '" + kind + "'");
  }
  c.lambda = get_or(tree, "estimator.lambda", c.lambda);
  c.steps = get_or(tree, "estimator.steps", c.steps);
  c.replicates = get_or(tree, "estimator.replicates", c.replicates);
  c.seed = get_or<std::uint64_t>(tree, "estimator.seed", c.seed);
  s.seed = c.seed;
  const std::string vp = get_or<std::string>(tree, "estimator.variance_path", "kernel");
  if (vp == "kernel") {
    c.variance_path = VariancePath::kernel;
  } else if (vp == "empirical_bayes") {
    c.variance_path = VariancePath::empirical_bayes;
  } else {
    throw ConfigError("estimator.variance_path: expected kernel or empirical_bayes, got '" + vp + "'");
  }
  const std::string cad = get_or<std::string>(tree, "estimator.cadence", "freeze_after_init");
  if (cad == "freeze_after_init") {
    c.cadence = KernelCadence::freeze_after_init;
  } else if (cad == "every_step") {
    c.cadence = KernelCadence::every_step;
  } else {
    throw ConfigError("estimator.cadence: expected freeze_after_init or every_step, got '" + cad + "'");
  }
  c.model_location_error = get_or(tree, "estimator.model_location_error", c.model_location_error);

  if (const auto sweep = tree.get_optional<std::string>("cases.sigma_v2_sweep")) {
    c.sigma_v2_sweep = detail::parse_list(*sweep, "cases.sigma_v2_sweep");
  }

  c.data.measurements = get_or<std::string>(tree, "data.measurements", "");
  c.data.split_seed = get_or<std::uint64_t>(tree, "data.split_seed", c.data.split_seed);
  const auto tx_x = tree.get_child_optional("data.tx_x_m");
  const auto tx_y = tree.get_child_optional("data.tx_y_m");
  if (tx_x.has_value() != tx_y.has_value()) {
    throw ConfigError("data: tx_x_m and tx_y_m must be given together");
  }
  if (tx_x) c.data.known_tx = Position{get_or(tree, "data.tx_x_m", 0.0), get_or(tree, "data.tx_y_m", 0.0)};
  c.data.rho_u = get_or(tree, "data.rho_u", c.data.rho_u);
  const double dsw2 = get_or(tree, "data.sigma_w2_db2", c.data.sigma_w * c.data.sigma_w);
  if (dsw2 < 0.0) throw ConfigError("data.sigma_w2_db2 must be >= 0");
  c.data.sigma_w = std::sqrt(dsw2);

  c.output_dir = get_or<std::string>(tree, "output.dir", c.output_dir.string());

  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open config");
  try {
    return parse_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace rssfield
