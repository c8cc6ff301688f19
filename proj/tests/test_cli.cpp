#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "convis/report.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = CONVIS_CLI;
const std::string kFixtures = CONVIS_FIXTURE_DIR;

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  Run r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("convis-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string q(const std::string& s) { return "'" + s + "'"; }

const char* kSmallWorld =
    R"({"backend":{"kind":"testbed","world":{"objects":["dog","car","pool","cat","chair","cup"],)"
    R"("prior_set":["chair"],"noise_sigma":0.1,"infidelity":0.0,"w_prior":3.0}}})";

}  // namespace

TEST_CASE("exit codes") {
  TempDir d;
  std::ofstream(d.file("world.json")) << kSmallWorld;
  const std::string cfg = "-c " + d.file("world.json");

  const auto ok = run("decode " + cfg + " -i park:dog,car");
  CHECK(ok.code == 0);
  CHECK(ok.out == "a chair and a dog and a car and a cup\n");

  CHECK(run("decode").code == 2);                                        // missing --image
  CHECK(run("frobnicate").code == 2);                                    // unknown verb
  CHECK(run("decode " + cfg + " -i x:dog --set bogus=1").code == 2);     // unknown key
  CHECK(run("decode -c /nonexistent.json -i x:dog").code == 2);          // unreadable config
  CHECK(run("decode " + cfg + " -i x:zebra").code == 2);                 // bad image ref
  CHECK(run("decode " + cfg + " -i x:dog --set method=convis --set convis.alpha=-1").code == 2);

  const std::string dead = q(R"(backend={"kind":"remote","mllm":"http://127.0.0.1:1","timeout_s":1})");
  CHECK(run("decode -i x:dog --set " + dead).code == 3);
  // validation happens before any connection is attempted
  CHECK(run("decode -i x:dog --set " + dead + " --set method=convis --set convis.alpha=-1").code == 2);
  CHECK(run("decode -i x:dog --set " + dead + " --set sampler.top_p=2 --set method=nucleus").code == 2);

  // chair over a corpus without ground truth is a metric error
  std::ofstream(d.file("nogt.jsonl")) << R"({"image_ref":"a:dog","ground_truth":null})" << "\n";
  std::ofstream(d.file("lex.json")) << R"({"categories":["dog"]})";
  CHECK(run("benchmark --set benchmark=CHAIR --set corpus.path=" + d.file("nogt.jsonl") +
            " --set lexicon=" + d.file("lex.json") + " --set output=" + d.file("out"))
            .code == 4);
}

TEST_CASE("alpha 0 decodes byte-identically to greedy") {
  TempDir d;
  std::ofstream(d.file("world.json")) << kSmallWorld;
  const std::string cfg = "-c " + d.file("world.json");
  for (const char* img : {"a:dog,car", "b:pool", "c:cat,cup,dog", "d:chair,pool", "e:car,cup,pool,cat"}) {
    INFO(img);
    for (const char* prompt : {"Describe this image.", "Describe this image in detail."}) {
      const auto g = run("decode " + cfg + " -i " + img + " -p " + q(prompt));
      const auto c = run("decode " + cfg + " -i " + img + " -p " + q(prompt) +
                         " --set method=convis --set convis.alpha=0");
      CHECK(g.code == 0);
      CHECK(c.code == 0);
      CHECK(g.out == c.out);
    }
  }
}

TEST_CASE("benchmark report over three seeds is reproducible") {
  TempDir d;
  std::ofstream(d.file("world.json")) << kSmallWorld;
  const std::string base = "benchmark -c " + d.file("world.json") +
                           " --set benchmark=CHAIR --set corpus.testbed_images=40 --set seeds=[0,1,2]"
                           " --set method=nucleus --set parallelism=4 --set output=";
  const auto a = run(base + d.file("a"));
  const auto b = run(base + d.file("b"));
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(a.out == b.out);
  CHECK(slurp(d.file("a") + "/report.csv") == slurp(d.file("b") + "/report.csv"));
  CHECK(slurp(d.file("a") + "/report.json") == slurp(d.file("b") + "/report.json"));
  // thread count changes nothing
  CHECK(run(base + d.file("s") + " --set parallelism=1").code == 0);
  CHECK(slurp(d.file("s") + "/report.csv") == slurp(d.file("a") + "/report.csv"));
  for (int s = 0; s < 3; ++s) CHECK(fs::exists(d.file("a") + "/responses-seed" + std::to_string(s) + ".jsonl"));

  std::ifstream is(d.file("a") + "/report.csv");
  const auto report = convis::read_report_csv(is);
  REQUIRE(report.rows.size() == 1);
  const auto& row = report.rows[0];
  CHECK(row.method == "nucleus");
  CHECK(row.benchmark == "CHAIR");
  REQUIRE(row.metrics.size() == 2);
  for (const auto& m : row.metrics) {
    REQUIRE(m.values.size() == 3);
    double mean = (m.values[0] + m.values[1] + m.values[2]) / 3.0;
    double var = 0;
    for (double v : m.values) var += (v - mean) * (v - mean);
    CHECK(m.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(m.stddev == doctest::Approx(std::sqrt(var / 2.0)).epsilon(1e-12));
  }
  // nucleus draws differ across seeds
  CHECK(row.metrics[0].values != std::vector<double>(3, row.metrics[0].values[0]));

  CHECK(run("benchmark --set benchmark=CHAIR --set corpus.testbed_images=0 --set output=" + d.file("c")).code == 2);
}

TEST_CASE("benchmark runs on file corpora") {
  TempDir d;
  const auto chair = run("benchmark --set benchmark=CHAIR --set corpus.path=" + kFixtures +
                         "/chair_small.jsonl --set lexicon=" + kFixtures + "/coco80_lexicon.json --set output=" +
                         d.file("chair") + q(R"( --set backend={"kind":"testbed","world":{"objects":["person","bicycle","car","bus","bird","dog","cat","couch","laptop","clock","vase","bench","umbrella","chair"],"prior_set":["chair"]}})"));
  CHECK(chair.code == 0);
  CHECK(chair.out.find("chair_s") != std::string::npos);
}

TEST_CASE("kl-plot marks the hallucinated step") {
  TempDir d;
  std::ofstream(d.file("world.json")) << kSmallWorld;
  const auto r = run("decode -c " + d.file("world.json") +
                     " -i p:dog,car,pool -p " + q("Describe this image in detail.") +
                     " --set method=convis --set convis.alpha=0 --set convis.n_images=1 --trace " + d.file("t.jsonl"));
  REQUIRE(r.code == 0);
  CHECK(r.out == "a chair and a pool and a car and a dog\n");
  REQUIRE(run("kl-plot " + d.file("t.jsonl") + " -o " + d.file("kl.csv")).code == 0);
  std::istringstream csv(slurp(d.file("kl.csv")));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,token,text,kl,is_max");
  int rows = 0;
  std::string max_text;
  while (std::getline(csv, line)) {
    ++rows;
    if (line.back() == '1') max_text = line;
  }
  CHECK(rows == 12);  // one row per trace step, eos included
  CHECK(max_text.find(",chair,") != std::string::npos);

  std::ofstream(d.file("empty.jsonl")).flush();
  CHECK(run("kl-plot " + d.file("empty.jsonl") + " -o " + d.file("x.csv")).code == 2);
}

TEST_CASE("record and replay-verify through the CLI") {
  TempDir d;
  std::ofstream(d.file("world.json")) << kSmallWorld;
  const auto rec = run("record -c " + d.file("world.json") + " -i p:dog,cat --set method=convis -o " + d.file("s.jsonl"));
  REQUIRE(rec.code == 0);
  const auto ok = run("replay-verify " + d.file("s.jsonl"));
  CHECK(ok.code == 0);
  CHECK(ok.out.rfind("OK ", 0) == 0);

  auto expected = nlohmann::json::parse(slurp(d.file("s.jsonl.expected.json")));
  expected["text"] = "a cat";
  std::ofstream(d.file("bad.json")) << expected.dump();
  CHECK(run("replay-verify " + d.file("s.jsonl") + " --expected " + d.file("bad.json")).code == 4);

  std::ofstream(d.file("junk.jsonl")) << "{not json\n";
  CHECK(run("replay-verify " + d.file("junk.jsonl") + " --expected " + d.file("s.jsonl.expected.json")).code == 3);
}
