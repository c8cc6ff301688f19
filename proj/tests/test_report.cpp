#include <doctest.h>

#include <sstream>

#include "convis/report.hpp"
#include "convis/run_config.hpp"
#include "convis/trace_io.hpp"

using namespace convis;

TEST_CASE("summary uses the sample standard deviation") {
  const auto m = summarize("chair_s", {0.1, 0.2, 0.3});
  CHECK(m.mean == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(m.stddev == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(summarize("x", {0.5}).stddev == 0.0);
}

TEST_CASE("report csv and json round trip") {
  Report r;
  r.rows.push_back({"convis", "testbed", "0123456789abcdef", "CHAIR",
                    {summarize("chair_s", {0.1, 1.0 / 3.0, 0.7}), summarize("chair_i", {0.01, 0.02, 0.04})}});
  r.rows.push_back({"greedy", "remote:http://h,1", "fedcba9876543210", "POPE", {summarize("f1", {0.5})}});
  std::stringstream ss;
  write_report_csv(ss, r);
  const std::string text = ss.str();
  CHECK(text.rfind("method,backend,config_hash,benchmark,metric,n_runs,mean,stddev,values\n", 0) == 0);
  CHECK(read_report_csv(ss) == r);
  CHECK(report_from_json(report_to_json(r)) == r);
}

TEST_CASE("report csv rejects damage") {
  std::stringstream bad_header("a,b\n");
  CHECK_THROWS_AS(read_report_csv(bad_header), Error);
  std::stringstream bad_count(
      "method,backend,config_hash,benchmark,metric,n_runs,mean,stddev,values\nm,b,h,B,x,3,0.1,0,0.1;0.1\n");
  CHECK_THROWS_AS(read_report_csv(bad_count), Error);
}

TEST_CASE("config hash changes exactly when the config does") {
  const nlohmann::json base = {{"method", "convis"}, {"convis", {{"alpha", 1.0}, {"n_images", 4}}}, {"seeds", {0, 1, 2}}};
  const auto h = config_hash(base);
  CHECK(h.size() == 16);
  CHECK(config_hash(nlohmann::json::parse(base.dump())) == h);
  // key order in the source text does not matter
  CHECK(config_hash(nlohmann::json::parse(R"({"seeds":[0,1,2],"convis":{"n_images":4,"alpha":1.0},"method":"convis"})")) == h);
  for (const char* mutation : {"convis.alpha=0.5", "convis.n_images=2", "method=\"greedy\"", "seeds=[0,1]", "extra=1"}) {
    auto m = base;
    apply_override(m, mutation);
    CHECK(config_hash(m) != h);
  }
}

TEST_CASE("shortest round-trip doubles") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, 0.0}) CHECK(parse_double(format_double(v)) == v);
  CHECK_THROWS_AS(parse_double("1.0x"), Error);
}

TEST_CASE("trace jsonl round trip") {
  std::vector<TraceLine> lines = {{0, 2, "a", 0.0, 1, {0.0, 0.0}}, {1, 9, "dog", 0.75, 3, {0.5, INFINITY}},
                                  {2, 0, "<eos>", INFINITY, 1, {}}};
  std::stringstream ss;
  write_trace_jsonl(ss, lines);
  CHECK(ss.str().find("null") != std::string::npos);
  CHECK(read_trace_jsonl(ss) == lines);
  std::stringstream gap(R"({"kl":0,"step":1,"support_size":1,"text":"a","token":2})" "\n");
  CHECK_THROWS_AS(read_trace_jsonl(gap), Error);
  std::stringstream neg(R"({"kl":-1,"step":0,"support_size":1,"text":"a","token":2})" "\n");
  CHECK_THROWS_AS(read_trace_jsonl(neg), Error);
}
