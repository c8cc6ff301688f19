#pragma once

// Run configuration for the command-line tool. A config file is a JSON
// object; every key is optional except where noted.
//
// {
//   "backend":  {"kind": "testbed", "world": "world.json" | {...inline WorldSpec...}}
//             | {"kind": "remote", "mllm": "http://host:port", "t2i": "http://host:port", "timeout_s": 30}
//             | {"kind": "replay", "transcript": "session.jsonl"},
//   "method":   "greedy" | "nucleus" | "beam" | "convis",
//   "task":     "captioning" | "vqa",             (default from benchmark, else captioning)
//   "prompt":   "Please describe this image in detail.",
//   "sampler":  {"temperature": 1.0, "top_p": 0.9, "beam_width": 5, "max_new_tokens": 64, "rng_seed": 0},
//   "convis":   {"alpha": 1.0, "lambda": 0.1, "plausibility": true, "keep_eos": true, "n_images": 4,
//                "caption_prompt": "...", "caption_sampler": {...}, "seed_base": 0, "caption_seeds": [...],
//                "parallel_queries": false},
//   "benchmark": "CHAIR" | "POPE" | "MME" | "HallusionBench" | "LLaVA-Bench",
//   "corpus":   {"testbed_images": 500} | {"path": "corpus.jsonl"},
//   "lexicon":  "lexicon.json",                   (CHAIR; the testbed supplies its own)
//   "seeds":    [0, 1, 2],
//   "output":   "out-dir",
//   "parallelism": 1
// }
//
// A benchmark fixes max_new_tokens (sampler and convis response) to its
// budget. alpha defaults to 1.0 for captioning and 0.1 for vqa.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "convis/convis.hpp"
#include "convis/samplers.hpp"
#include "convis/testbed.hpp"

namespace convis {

enum class Method { greedy, nucleus, beam, convis };
const char* to_string(Method m);
Method method_from_string(const std::string& name);

struct BackendConfig {
  enum class Kind { testbed, remote, replay };
  Kind kind = Kind::testbed;
  std::optional<testbed::WorldSpec> world;
  std::string mllm_url;
  std::string t2i_url;
  std::string transcript;
  double timeout_s = 30.0;
};

const char* to_string(BackendConfig::Kind k);

struct CorpusConfig {
  std::size_t testbed_images = 0;
  std::string path;
};

struct RunConfig {
  BackendConfig backend;
  Method method = Method::greedy;
  TaskKind task = TaskKind::captioning;
  std::string prompt = kDefaultCaptionPrompt;
  SamplerConfig sampler;
  ConvisConfig convis;
  std::optional<std::string> benchmark;
  CorpusConfig corpus;
  std::string lexicon_path;
  std::vector<std::uint64_t> seeds = {0};
  std::string output = "convis-out";
  int parallelism = 1;

  /// The validated config as JSON after overrides; hashed into reports.
  nlohmann::json canonical;
};

/// Parses and validates; every problem is a config error. Relative file
/// paths are resolved against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& j, const std::string& base_dir = ".");

nlohmann::json load_json_file(const std::string& path);

/// Applies "a.b.c=value". The value is parsed as JSON when possible and
/// taken as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace convis
