#pragma once

// Glue between run configs, backends and metrics: builds the backend stack,
// runs one method on one image, and runs whole benchmarks.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "convis/convis.hpp"
#include "convis/eval.hpp"
#include "convis/protocol.hpp"
#include "convis/report.hpp"
#include "convis/run_config.hpp"
#include "convis/testbed.hpp"

namespace convis {

struct MethodSpec {
  Method method = Method::greedy;
  SamplerConfig sampler;
  ConvisConfig convis;
};

MethodSpec method_spec(const RunConfig& cfg);

struct ResponseOutput {
  TokenSequence tokens;
  std::string text;
  StopReason stopped_by = StopReason::budget;
  std::optional<DecodeTrace> trace;  // convis only
  std::vector<CaptionRecord> captions;
};

/// Runs one method on one image. `item_seed` decorrelates nucleus draws
/// across corpus items; convis caption seeds come from the config.
ResponseOutput run_method(LogitSource& mllm, ImageGenerator* t2i, const ImageHandle& image, const std::string& prompt,
                          const MethodSpec& spec, std::uint64_t item_seed = 0);

/// The backend stack for a run.
struct Engine {
  std::shared_ptr<Backend> mllm;
  std::shared_ptr<Backend> t2i;  // may alias mllm; null when unavailable
  std::shared_ptr<testbed::TestbedBackend> testbed;  // set for the testbed backend
  std::shared_ptr<Transcript> recording;              // set when recording
  std::string name;

  ImageHandle register_image(const std::string& ref);
};

/// With `record`, every exchange goes through the convis/1 protocol layer
/// and is captured (the testbed is wrapped in an in-process protocol server
/// for this).
Engine make_engine(const BackendConfig& cfg, bool record = false);

struct ItemResult {
  std::string image_ref;
  std::string prompt;
  std::string response;
};

struct RunOutcome {
  std::vector<ItemResult> items;
  std::optional<eval::ChairResult> chair;
  std::optional<eval::PopeScore> pope;
};

/// Captions every testbed corpus item with `spec` and scores CHAIR against
/// the annotations using the world's own lexicon. With parallel = true
/// items are processed by an OpenMP loop; results do not depend on it.
RunOutcome run_chair_testbed(Engine& engine, const std::vector<testbed::CorpusItem>& corpus, const std::string& prompt,
                             const MethodSpec& spec, bool parallel);

eval::ObjectLexicon testbed_lexicon(const testbed::World& world);

/// Full benchmark per the config: one run per seed, aggregated into a
/// report row (mean and sample stddev across seeds). Writes
/// <output>/report.{csv,json} and <output>/responses-seed<k>.jsonl.
Report run_benchmark(const RunConfig& cfg, Engine& engine);

/// Sidecar written next to a recorded transcript: enough to re-run the
/// same decode offline and compare.
struct ExpectedRun {
  nlohmann::json config;
  std::string image_ref;
  std::string prompt;
  TokenSequence tokens;
  std::string text;
};

nlohmann::json to_json(const ExpectedRun& e);
ExpectedRun expected_from_json(const nlohmann::json& j);

struct ReplayCheck {
  bool match = false;
  TokenSequence tokens;
  std::size_t exchanges_served = 0;
};

/// Re-runs an expected decode against a transcript through the replay
/// client.
ReplayCheck replay_verify(const Transcript& transcript, const ExpectedRun& expected);

}  // namespace convis
