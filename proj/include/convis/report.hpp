#pragma once

// Benchmark reports. CSV columns, in this order:
//
//   method,backend,config_hash,benchmark,metric,n_runs,mean,stddev,values
//
// `values` holds the per-run values joined by ';'. Numbers use the shortest
// representation that round-trips, so reading a report back reproduces it
// exactly. stddev is the sample standard deviation (0 for a single run).

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace convis {

struct MetricStat {
  std::string name;
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;

  friend bool operator==(const MetricStat&, const MetricStat&) = default;
};

MetricStat summarize(std::string name, std::vector<double> values);

struct ReportRow {
  std::string method;
  std::string backend;
  std::string config_hash;
  std::string benchmark;
  std::vector<MetricStat> metrics;

  const MetricStat& metric(const std::string& name) const;
  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct Report {
  std::vector<ReportRow> rows;
  friend bool operator==(const Report&, const Report&) = default;
};

inline const std::vector<std::string>& report_csv_columns() {
  static const std::vector<std::string> cols = {"method", "backend", "config_hash", "benchmark", "metric",
                                                "n_runs", "mean",    "stddev",      "values"};
  return cols;
}

/// First 16 hex digits of SHA-256 over the canonical (key-sorted, compact)
/// JSON bytes of `config`.
std::string config_hash(const nlohmann::json& config);

std::string format_double(double v);
double parse_double(const std::string& s);

void write_report_csv(std::ostream& os, const Report& report);
Report read_report_csv(std::istream& is);
nlohmann::json report_to_json(const Report& report);
Report report_from_json(const nlohmann::json& j);

/// Writes <stem>.csv and <stem>.json.
void emit_report(const Report& report, const std::string& stem);

}  // namespace convis
