#include "convis/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "convis/eval.hpp"

namespace convis {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(Method m) {
  switch (m) {
    case Method::greedy: return "greedy";
    case Method::nucleus: return "nucleus";
    case Method::beam: return "beam";
    case Method::convis: return "convis";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "greedy") return Method::greedy;
  if (name == "nucleus") return Method::nucleus;
  if (name == "beam") return Method::beam;
  if (name == "convis") return Method::convis;
  fail(ErrorKind::config, "unknown method '" + name + "' (expected greedy, nucleus, beam or convis)");
}

const char* to_string(BackendConfig::Kind k) {
  switch (k) {
    case BackendConfig::Kind::testbed: return "testbed";
    case BackendConfig::Kind::remote: return "remote";
    case BackendConfig::Kind::replay: return "replay";
  }
  return "unknown";
}

namespace {

[[noreturn]] void bad(const std::string& message) { fail(ErrorKind::config, message); }

void check_keys(const json& j, const std::string& where, const std::set<std::string>& known) {
  if (!j.is_object()) bad(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) bad(where + ": unknown key '" + k + "'");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad(where + "." + key + " has the wrong type");
  }
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

SamplerConfig parse_sampler(const json& j, SamplerConfig base, const std::string& where) {
  check_keys(j, where, {"kind", "temperature", "top_p", "beam_width", "max_new_tokens", "rng_seed"});
  if (j.contains("kind")) {
    try {
      base.kind = sampler_kind_from_string(get_or<std::string>(j, "kind", "", where));
    } catch (const Error& e) {
      bad(where + ": " + e.what());
    }
  }
  base.temperature = get_or(j, "temperature", base.temperature, where);
  base.top_p = get_or(j, "top_p", base.top_p, where);
  base.beam_width = get_or(j, "beam_width", base.beam_width, where);
  base.max_new_tokens = get_or(j, "max_new_tokens", base.max_new_tokens, where);
  base.rng_seed = get_or(j, "rng_seed", base.rng_seed, where);
  return base;
}

}  // namespace

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) bad("cannot open config " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    bad("config " + path + " is not valid JSON: " + e.what());
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) bad("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) bad("override key '" + key + "' has an empty component");
    if (!node->is_object()) {
      if (!node->is_null()) bad("override '" + key + "' descends into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig parse_run_config(const json& j, const std::string& base_dir) {
  check_keys(j, "config", {"backend", "method", "task", "prompt", "sampler", "convis", "benchmark", "corpus", "lexicon",
                           "seeds", "output", "parallelism"});
  RunConfig cfg;

  // backend
  const json b = j.value("backend", json{{"kind", "testbed"}});
  check_keys(b, "backend", {"kind", "world", "mllm", "t2i", "transcript", "timeout_s"});
  const std::string kind = get_or<std::string>(b, "kind", "testbed", "backend");
  if (kind == "testbed") {
    cfg.backend.kind = BackendConfig::Kind::testbed;
    try {
      if (!b.contains("world")) {
        cfg.backend.world = testbed::WorldSpec::default_world();
      } else if (b.at("world").is_string()) {
        cfg.backend.world = testbed::load_world(resolve(b.at("world").get<std::string>(), base_dir));
      } else {
        cfg.backend.world = b.at("world").get<testbed::WorldSpec>();
      }
    } catch (const Error& e) {
      bad(std::string("backend.world: ") + e.what());
    }
  } else if (kind == "remote") {
    cfg.backend.kind = BackendConfig::Kind::remote;
    cfg.backend.mllm_url = get_or<std::string>(b, "mllm", "", "backend");
    cfg.backend.t2i_url = get_or<std::string>(b, "t2i", "", "backend");
    if (cfg.backend.mllm_url.empty()) bad("backend.mllm is required for a remote backend");
  } else if (kind == "replay") {
    cfg.backend.kind = BackendConfig::Kind::replay;
    cfg.backend.transcript = resolve(get_or<std::string>(b, "transcript", "", "backend"), base_dir);
    if (cfg.backend.transcript.empty()) bad("backend.transcript is required for a replay backend");
  } else {
    bad("backend.kind must be testbed, remote or replay");
  }
  cfg.backend.timeout_s = get_or(b, "timeout_s", 30.0, "backend");
  if (!(cfg.backend.timeout_s > 0.0)) bad("backend.timeout_s must be positive");

  cfg.method = method_from_string(get_or<std::string>(j, "method", "greedy", "config"));

  // benchmark and task
  int budget = 0;
  if (j.contains("benchmark") && !j.at("benchmark").is_null()) {
    cfg.benchmark = get_or<std::string>(j, "benchmark", "", "config");
    budget = eval::benchmark_budget(*cfg.benchmark);
  }
  std::string task_default = "captioning";
  if (cfg.benchmark) {
    std::string lower = *cfg.benchmark;
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "pope" || lower == "mme" || lower == "hallusionbench") task_default = "vqa";
  }
  try {
    cfg.task = task_kind_from_string(get_or<std::string>(j, "task", task_default, "config"));
  } catch (const Error& e) {
    bad(e.what());
  }
  cfg.prompt = get_or<std::string>(j, "prompt", kDefaultCaptionPrompt, "config");

  // response sampler
  SamplerConfig s;
  switch (cfg.method) {
    case Method::nucleus:
      s = SamplerConfig::nucleus(1.0, 0.9, 64, 0);
      break;
    case Method::beam:
      s = SamplerConfig::beam(5, 64);
      break;
    default:
      s = SamplerConfig::greedy(64);
      break;
  }
  cfg.sampler = parse_sampler(j.value("sampler", json::object()), s, "sampler");
  if (j.contains("sampler") && j.at("sampler").contains("kind") &&
      cfg.sampler.kind != (cfg.method == Method::nucleus ? SamplerKind::nucleus
                           : cfg.method == Method::beam  ? SamplerKind::beam
                                                         : SamplerKind::greedy)) {
    bad("sampler.kind contradicts method");
  }
  if (budget) cfg.sampler.max_new_tokens = budget;

  // convis
  const json c = j.value("convis", json::object());
  check_keys(c, "convis", {"alpha", "lambda", "plausibility", "keep_eos", "n_images", "caption_prompt", "caption_sampler",
                           "seed_base", "caption_seeds", "parallel_queries", "response_max_new_tokens"});
  ConvisConfig cv = ConvisConfig::for_task(cfg.task, get_or(c, "n_images", 4, "convis"), get_or<std::uint64_t>(c, "seed_base", 0, "convis"));
  cv.alpha = get_or(c, "alpha", cv.alpha, "convis");
  cv.lambda = get_or(c, "lambda", cv.lambda, "convis");
  cv.plausibility = get_or(c, "plausibility", cv.plausibility, "convis");
  cv.keep_eos = get_or(c, "keep_eos", cv.keep_eos, "convis");
  cv.caption_prompt = get_or(c, "caption_prompt", cv.caption_prompt, "convis");
  if (c.contains("caption_sampler")) cv.caption_sampler = parse_sampler(c.at("caption_sampler"), cv.caption_sampler, "convis.caption_sampler");
  if (c.contains("caption_seeds")) cv.caption_seeds = get_or<std::vector<std::uint64_t>>(c, "caption_seeds", {}, "convis");
  cv.parallel_queries = get_or(c, "parallel_queries", cv.parallel_queries, "convis");
  cv.response_max_new_tokens = get_or(c, "response_max_new_tokens", cfg.sampler.max_new_tokens, "convis");
  if (budget) cv.response_max_new_tokens = budget;
  cfg.convis = cv;

  try {
    cfg.sampler.validate();
    cfg.convis.validate();
  } catch (const Error& e) {
    bad(e.what());
  }

  if (cfg.method == Method::convis && cfg.backend.kind == BackendConfig::Kind::remote && cfg.backend.t2i_url.empty()) {
    bad("method convis needs a text-to-image backend (backend.t2i)");
  }

  // corpus, outputs
  if (j.contains("corpus")) {
    const json& cj = j.at("corpus");
    check_keys(cj, "corpus", {"testbed_images", "path"});
    cfg.corpus.testbed_images = get_or<std::size_t>(cj, "testbed_images", 0, "corpus");
    cfg.corpus.path = resolve(get_or<std::string>(cj, "path", "", "corpus"), base_dir);
    if (!cfg.corpus.path.empty() && cfg.corpus.testbed_images) bad("corpus: give either testbed_images or path");
    if (cfg.corpus.testbed_images && cfg.backend.kind != BackendConfig::Kind::testbed) {
      bad("corpus.testbed_images needs the testbed backend");
    }
  }
  cfg.lexicon_path = resolve(get_or<std::string>(j, "lexicon", "", "config"), base_dir);
  cfg.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {0}, "config");
  if (cfg.seeds.empty()) bad("seeds must not be empty");
  cfg.output = resolve(get_or<std::string>(j, "output", "convis-out", "config"), base_dir);
  cfg.parallelism = get_or(j, "parallelism", 1, "config");
  if (cfg.parallelism < 1) bad("parallelism must be at least 1");

  cfg.canonical = j;
  return cfg;
}

}  // namespace convis
