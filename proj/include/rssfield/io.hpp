#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rssfield/bounds.hpp"
#include "rssfield/error.hpp"
#include "rssfield/gp.hpp"
#include "rssfield/model.hpp"

namespace rssfield::io {

inline constexpr std::string_view kMeasurementHeader = "t,sensor_id,x_hat_m,y_hat_m,rss_dbm";
inline constexpr std::string_view kNodeHeader = "node_id,x_m,y_m,rss_dbm";
inline constexpr std::string_view kFieldHeader = "node_id,x_m,y_m,post_mean_dbm,post_var_db2";
inline constexpr std::string_view kFieldHeaderWithBound =
    "node_id,x_m,y_m,post_mean_dbm,post_var_db2,hcrb_db2";

/// 17 significant digits; round-trips every finite double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

inline double parse_double(std::string_view field, const std::filesystem::path& path,
                           std::size_t line) {
  field = trim(field);
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw FormatError(where(path, line) + ": malformed number '" + std::string(field) + "'");
  }
  return v;
}

inline int parse_int(std::string_view field, const std::filesystem::path& path, std::size_t line) {
  field = trim(field);
  int v = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw FormatError(where(path, line) + ": malformed integer '" + std::string(field) + "'");
  }
  return v;
}

/// Reads a CSV whose header must be one of `headers`; returns the matched
/// header index and the data rows (with 1-based line numbers).
struct CsvRows {
  std::size_t header_index = 0;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
};

inline CsvRows read_csv(const std::filesystem::path& path,
                        std::span<const std::string_view> headers) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  CsvRows out;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    if (!have_header) {
      bool matched = false;
      for (std::size_t h = 0; h < headers.size(); ++h) {
        if (view == headers[h]) {
          out.header_index = h;
          matched = true;
        }
      }
      if (!matched) {
        throw FormatError(where(path, line_no) + ": unexpected header '" + std::string(view) +
                          "', expected '" + std::string(headers.front()) + "'");
      }
      have_header = true;
      continue;
    }
    std::vector<std::string> fields;
    for (auto f : split(view)) fields.emplace_back(f);
    out.rows.emplace_back(line_no, std::move(fields));
  }
  if (in.bad()) throw IoError(path.string() + ": read failure");
  if (!have_header) throw FormatError(path.string() + ": missing header");
  return out;
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(path.parent_path().string() + ": cannot create directory: " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError(path.string() + ": write failure");
}

inline void expect_fields(const std::vector<std::string>& fields, std::size_t n,
                          const std::filesystem::path& path, std::size_t line) {
  if (fields.size() != n) {
    throw FormatError(where(path, line) + ": expected " + std::to_string(n) + " fields, got " +
                      std::to_string(fields.size()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Measurements: t,sensor_id,x_hat_m,y_hat_m,rss_dbm

inline void write_measurements(const std::filesystem::path& path,
                               std::span<const MeasurementSnapshot> snapshots) {
  auto out = detail::open_for_write(path);
  out << kMeasurementHeader << '\n';
  for (const auto& snap : snapshots) {
    for (const auto& s : snap.sensors) {
      out << snap.t << ',' << s.sensor_id << ',' << format_double(s.position.x) << ','
          << format_double(s.position.y) << ',' << format_double(s.rss_dbm) << '\n';
    }
  }
  detail::finish(out, path);
}

/// Snapshots ordered by t; rows keep their file order within a step.
inline std::vector<MeasurementSnapshot> read_measurements(const std::filesystem::path& path) {
  const std::string_view headers[] = {kMeasurementHeader};
  const auto csv = detail::read_csv(path, headers);
  std::map<int, MeasurementSnapshot> by_t;
  for (const auto& [line, f] : csv.rows) {
    detail::expect_fields(f, 5, path, line);
    const int t = detail::parse_int(f[0], path, line);
    SensorReport r;
    r.sensor_id = detail::parse_int(f[1], path, line);
    r.position = {detail::parse_double(f[2], path, line), detail::parse_double(f[3], path, line)};
    r.rss_dbm = detail::parse_double(f[4], path, line);
    if (t < 0) throw FormatError(detail::where(path, line) + ": negative time index");
    if (!std::isfinite(r.rss_dbm) || !std::isfinite(r.position.x) ||
        !std::isfinite(r.position.y)) {
      throw FormatError(detail::where(path, line) + ": non-finite value");
    }
    auto& snap = by_t[t];
    snap.t = t;
    for (const auto& s : snap.sensors) {
      if (s.sensor_id == r.sensor_id) {
        throw FormatError(detail::where(path, line) + ": duplicate sensor_id " +
                          std::to_string(r.sensor_id) + " at t=" + std::to_string(t));
      }
    }
    snap.sensors.push_back(r);
  }
  std::vector<MeasurementSnapshot> out;
  for (auto& [t, snap] : by_t) out.push_back(std::move(snap));
  return out;
}

// ---------------------------------------------------------------------------
// Nodes / truth: node_id,x_m,y_m,rss_dbm

struct NodeTable {
  std::vector<int> node_id;
  std::vector<Position> positions;
  Vector rss;
};

inline void write_nodes(const std::filesystem::path& path, const NodeTable& table) {
  auto out = detail::open_for_write(path);
  out << kNodeHeader << '\n';
  for (std::size_t i = 0; i < table.positions.size(); ++i) {
    out << table.node_id[i] << ',' << format_double(table.positions[i].x) << ','
        << format_double(table.positions[i].y) << ','
        << format_double(table.rss[static_cast<Eigen::Index>(i)]) << '\n';
  }
  detail::finish(out, path);
}

inline NodeTable read_nodes(const std::filesystem::path& path) {
  const std::string_view headers[] = {kNodeHeader};
  const auto csv = detail::read_csv(path, headers);
  NodeTable t;
  std::vector<double> rss;
  for (const auto& [line, f] : csv.rows) {
    detail::expect_fields(f, 4, path, line);
    t.node_id.push_back(detail::parse_int(f[0], path, line));
    t.positions.push_back(
        {detail::parse_double(f[1], path, line), detail::parse_double(f[2], path, line)});
    rss.push_back(detail::parse_double(f[3], path, line));
  }
  t.rss = Eigen::Map<const Vector>(rss.data(), static_cast<Eigen::Index>(rss.size()));
  return t;
}

// ---------------------------------------------------------------------------
// Field: node_id,x_m,y_m,post_mean_dbm,post_var_db2[,hcrb_db2]

struct FieldTable {
  std::vector<int> node_id;
  std::vector<Position> positions;
  Vector mean;
  Vector variance;
  std::optional<Vector> hcrb;
};

inline FieldTable field_table(const FieldPosterior& posterior, const Grid& grid,
                              const std::vector<HcrbReport>* bounds = nullptr) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  if (posterior.mean.size() != m) throw DomainError("field_table: posterior/grid size mismatch");
  FieldTable t;
  t.positions.assign(grid.nodes().begin(), grid.nodes().end());
  for (Eigen::Index i = 0; i < m; ++i) t.node_id.push_back(static_cast<int>(i));
  t.mean = posterior.mean;
  t.variance = posterior.has_cov() ? Vector(posterior.cov.diagonal())
                                   : Vector(Vector::Constant(m, std::numeric_limits<double>::quiet_NaN()));
  if (bounds) {
    if (static_cast<Eigen::Index>(bounds->size()) != m) {
      throw DomainError("field_table: bound reports/grid size mismatch");
    }
    Vector b(m);
    for (const auto& r : *bounds) b[static_cast<Eigen::Index>(r.node_index)] = r.bound;
    t.hcrb = b;
  }
  return t;
}

inline void write_field(const std::filesystem::path& path, const FieldTable& table) {
  auto out = detail::open_for_write(path);
  out << (table.hcrb ? kFieldHeaderWithBound : kFieldHeader) << '\n';
  for (std::size_t i = 0; i < table.positions.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out << table.node_id[i] << ',' << format_double(table.positions[i].x) << ','
        << format_double(table.positions[i].y) << ',' << format_double(table.mean[k]) << ','
        << format_double(table.variance[k]);
    if (table.hcrb) out << ',' << format_double((*table.hcrb)[k]);
    out << '\n';
  }
  detail::finish(out, path);
}

inline void emit_field(const FieldPosterior& posterior, const Grid& grid,
                       const std::vector<HcrbReport>* bounds, const std::filesystem::path& path) {
  write_field(path, field_table(posterior, grid, bounds));
}

inline FieldTable read_field(const std::filesystem::path& path) {
  const std::string_view headers[] = {kFieldHeader, kFieldHeaderWithBound};
  const auto csv = detail::read_csv(path, headers);
  const bool with_bound = csv.header_index == 1;
  const std::size_t cols = with_bound ? 6 : 5;
  FieldTable t;
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> bound;
  for (const auto& [line, f] : csv.rows) {
    detail::expect_fields(f, cols, path, line);
    t.node_id.push_back(detail::parse_int(f[0], path, line));
    t.positions.push_back(
        {detail::parse_double(f[1], path, line), detail::parse_double(f[2], path, line)});
    mean.push_back(detail::parse_double(f[3], path, line));
    var.push_back(detail::parse_double(f[4], path, line));
    if (with_bound) bound.push_back(detail::parse_double(f[5], path, line));
  }
  auto to_vec = [](const std::vector<double>& v) {
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  t.mean = to_vec(mean);
  t.variance = to_vec(var);
  if (with_bound) t.hcrb = to_vec(bound);
  return t;
}

}  // namespace rssfield::io
