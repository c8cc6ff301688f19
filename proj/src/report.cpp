#include "convis/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "convis/error.hpp"
#include "convis/hash.hpp"

namespace convis {

using nlohmann::json;

MetricStat summarize(std::string name, std::vector<double> values) {
  MetricStat m;
  m.name = std::move(name);
  if (!values.empty()) {
    const double n = static_cast<double>(values.size());
    m.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - m.mean) * (v - m.mean);
      m.stddev = std::sqrt(ss / (n - 1.0));
    }
  }
  m.values = std::move(values);
  return m;
}

const MetricStat& ReportRow::metric(const std::string& name) const {
  for (const auto& m : metrics) {
    if (m.name == name) return m;
  }
  fail(ErrorKind::metric, "report row has no metric '" + name + "'");
}

std::string config_hash(const json& config) { return sha256_hex(config.dump()).substr(0, 16); }

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail(ErrorKind::metric, "not a number: '" + s + "'");
  return v;
}

namespace {

// Fields never contain commas or quotes except free-form names; quote those.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

void write_report_csv(std::ostream& os, const Report& report) {
  const auto& cols = report_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& row : report.rows) {
    for (const auto& m : row.metrics) {
      std::string values;
      for (std::size_t i = 0; i < m.values.size(); ++i) values += (i ? ";" : "") + format_double(m.values[i]);
      os << csv_field(row.method) << ',' << csv_field(row.backend) << ',' << row.config_hash << ','
         << csv_field(row.benchmark) << ',' << csv_field(m.name) << ',' << m.values.size() << ','
         << format_double(m.mean) << ',' << format_double(m.stddev) << ',' << values << '\n';
    }
  }
}

Report read_report_csv(std::istream& is) {
  Report report;
  std::string line;
  if (!std::getline(is, line)) fail(ErrorKind::metric, "report CSV is empty");
  if (split_csv_line(line) != report_csv_columns()) fail(ErrorKind::metric, "report CSV header does not match");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != report_csv_columns().size()) {
      fail(ErrorKind::metric, "report CSV line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    }
    if (report.rows.empty() || report.rows.back().method != f[0] || report.rows.back().backend != f[1] ||
        report.rows.back().config_hash != f[2] || report.rows.back().benchmark != f[3]) {
      report.rows.push_back({f[0], f[1], f[2], f[3], {}});
    }
    MetricStat m;
    m.name = f[4];
    m.mean = parse_double(f[6]);
    m.stddev = parse_double(f[7]);
    if (!f[8].empty()) {
      std::istringstream vs(f[8]);
      std::string v;
      while (std::getline(vs, v, ';')) m.values.push_back(parse_double(v));
    }
    if (m.values.size() != static_cast<std::size_t>(std::stoul(f[5]))) {
      fail(ErrorKind::metric, "report CSV line " + std::to_string(lineno) + ": n_runs disagrees with values");
    }
    report.rows.back().metrics.push_back(std::move(m));
  }
  return report;
}

json report_to_json(const Report& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    json metrics = json::array();
    for (const auto& m : r.metrics) {
      metrics.push_back({{"name", m.name}, {"mean", m.mean}, {"stddev", m.stddev}, {"values", m.values}});
    }
    rows.push_back({{"method", r.method},
                    {"backend", r.backend},
                    {"config_hash", r.config_hash},
                    {"benchmark", r.benchmark},
                    {"metrics", metrics}});
  }
  return {{"rows", rows}};
}

Report report_from_json(const json& j) {
  Report report;
  try {
    for (const auto& r : j.at("rows")) {
      ReportRow row{r.at("method").get<std::string>(), r.at("backend").get<std::string>(),
                    r.at("config_hash").get<std::string>(), r.at("benchmark").get<std::string>(), {}};
      for (const auto& m : r.at("metrics")) {
        row.metrics.push_back({m.at("name").get<std::string>(), m.at("values").get<std::vector<double>>(),
                               m.at("mean").get<double>(), m.at("stddev").get<double>()});
      }
      report.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::metric, std::string("report JSON: ") + e.what());
  }
  return report;
}

void emit_report(const Report& report, const std::string& stem) {
  std::ofstream csv(stem + ".csv", std::ios::binary);
  std::ofstream js(stem + ".json", std::ios::binary);
  if (!csv || !js) fail(ErrorKind::metric, "cannot write report " + stem + ".{csv,json}");
  write_report_csv(csv, report);
  js << report_to_json(report).dump(2) << '\n';
}

}  // namespace convis
