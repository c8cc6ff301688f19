#include "convis/trace_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace convis {

using nlohmann::json;

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double kl_from_json(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  if (!j.is_number()) throw std::invalid_argument("kl is not a number");
  const double v = j.get<double>();
  if (v < 0.0) throw std::invalid_argument("kl is negative");
  return v;
}

}  // namespace

std::vector<TraceLine> trace_lines(const DecodeTrace& trace, const Vocabulary& vocab) {
  return trace_lines(trace, [&vocab](TokenId t) { return vocab.text(t); });
}

std::vector<TraceLine> trace_lines(const DecodeTrace& trace, const std::function<std::string(TokenId)>& text_of) {
  std::vector<TraceLine> out;
  out.reserve(trace.steps.size());
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const StepTrace& st = trace.steps[i];
    out.push_back({i, st.token, text_of(st.token), st.kl, st.support.size(), st.per_image_kl});
  }
  return out;
}

void write_trace_jsonl(std::ostream& os, const std::vector<TraceLine>& lines) {
  for (const auto& l : lines) {
    json per = json::array();
    for (double v : l.per_image_kl) per.push_back(number_or_null(v));
    json j = {{"step", l.step},       {"token", l.token}, {"text", l.text}, {"kl", number_or_null(l.kl)},
              {"support_size", l.support_size}, {"per_image_kl", per}};
    os << j.dump() << '\n';
  }
}

void write_trace_jsonl(const std::string& path, const std::vector<TraceLine>& lines) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::invalid_argument, "cannot write trace file " + path);
  write_trace_jsonl(os, lines);
}

std::vector<TraceLine> read_trace_jsonl(std::istream& is) {
  std::vector<TraceLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      TraceLine l;
      l.step = j.at("step").get<std::size_t>();
      l.token = j.at("token").get<TokenId>();
      l.text = j.at("text").get<std::string>();
      l.kl = kl_from_json(j.at("kl"));
      l.support_size = j.at("support_size").get<std::size_t>();
      if (j.contains("per_image_kl")) {
        for (const auto& v : j.at("per_image_kl")) l.per_image_kl.push_back(kl_from_json(v));
      }
      if (l.step != out.size()) throw std::invalid_argument("step index out of sequence");
      out.push_back(std::move(l));
    } catch (const std::exception& e) {
      fail(ErrorKind::invalid_argument, "trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TraceLine> read_trace_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::invalid_argument, "cannot open trace file " + path);
  return read_trace_jsonl(is);
}

}  // namespace convis
