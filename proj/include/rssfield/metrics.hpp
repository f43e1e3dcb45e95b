#pragma once

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "rssfield/error.hpp"
#include "rssfield/io.hpp"
#include "rssfield/model.hpp"

namespace rssfield {

/// (1/M) sum_i (estimate_i - truth_i)^2.
inline double compute_mse(const Vector& estimate, const Vector& truth) {
  if (estimate.size() != truth.size()) {
    throw DomainError("compute_mse: length mismatch (" + std::to_string(estimate.size()) +
                      " vs " + std::to_string(truth.size()) + ")");
  }
  if (estimate.size() == 0) throw DomainError("compute_mse: empty vectors");
  return (estimate - truth).squaredNorm() / static_cast<double>(estimate.size());
}

/// One row of a metrics file. Wall-clock time is kept out of this record so
/// that metrics files are reproducible byte for byte.
struct MetricsRecord {
  std::string label;     // estimator or case name
  double sweep = 0.0;    // swept parameter (sigma_v^2 for the location cases)
  int replicate = 0;
  int t = 0;
  double mse = 0.0;
  double mu_alpha = 0.0;
  double mu_P = 0.0;
  double tx_error_m = 0.0;
};

inline constexpr std::string_view kMetricsHeader =
    "label,sweep,replicate,t,mse_db2,mu_alpha,mu_p_dbm,tx_error_m";

inline void write_metrics(const std::filesystem::path& path,
                          std::span<const MetricsRecord> records) {
  auto out = io::detail::open_for_write(path);
  out << kMetricsHeader << '\n';
  for (const auto& r : records) {
    out << r.label << ',' << io::format_double(r.sweep) << ',' << r.replicate << ',' << r.t << ','
        << io::format_double(r.mse) << ',' << io::format_double(r.mu_alpha) << ','
        << io::format_double(r.mu_P) << ',' << io::format_double(r.tx_error_m) << '\n';
  }
  io::detail::finish(out, path);
}

inline std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  const std::string_view headers[] = {kMetricsHeader};
  const auto csv = io::detail::read_csv(path, headers);
  std::vector<MetricsRecord> out;
  for (const auto& [line, f] : csv.rows) {
    io::detail::expect_fields(f, 8, path, line);
    MetricsRecord r;
    r.label = f[0];
    r.sweep = io::detail::parse_double(f[1], path, line);
    r.replicate = io::detail::parse_int(f[2], path, line);
    r.t = io::detail::parse_int(f[3], path, line);
    r.mse = io::detail::parse_double(f[4], path, line);
    r.mu_alpha = io::detail::parse_double(f[5], path, line);
    r.mu_P = io::detail::parse_double(f[6], path, line);
    r.tx_error_m = io::detail::parse_double(f[7], path, line);
    out.push_back(std::move(r));
  }
  return out;
}

/// One-sided paired t-test of mean(b - a) > 0.
struct PairedTest {
  double mean_difference = 0.0;
  double t_statistic = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

inline PairedTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw DomainError("paired_t_test: need two equal-length samples of size >= 2");
  }
  PairedTest out;
  out.n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += b[i] - a[i];
  mean /= static_cast<double>(a.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = b[i] - a[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(a.size() - 1));
  out.mean_difference = mean;
  if (sd == 0.0) {
    out.t_statistic = mean > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    out.p_value = mean > 0.0 ? 0.0 : 1.0;
    return out;
  }
  out.t_statistic = mean / (sd / std::sqrt(static_cast<double>(a.size())));
  const boost::math::students_t dist(static_cast<double>(a.size() - 1));
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.t_statistic));
  return out;
}

}  // namespace rssfield
