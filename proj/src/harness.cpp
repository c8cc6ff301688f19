#include "convis/harness.hpp"

#include <algorithm>
#include <cctype>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <omp.h>
#include <spdlog/spdlog.h>

namespace convis {

using nlohmann::json;
namespace fs = std::filesystem;

MethodSpec method_spec(const RunConfig& cfg) {
  MethodSpec s;
  s.method = cfg.method;
  s.sampler = cfg.sampler;
  s.convis = cfg.convis;
  return s;
}

ResponseOutput run_method(LogitSource& mllm, ImageGenerator* t2i, const ImageHandle& image, const std::string& prompt,
                          const MethodSpec& spec, std::uint64_t item_seed) {
  const TokenSequence prompt_ids = mllm.tokenize(prompt);
  const TokenId eos = mllm.vocabulary().eos_id;
  ResponseOutput out;
  if (spec.method == Method::convis) {
    if (!t2i) fail(ErrorKind::config, "method convis needs a text-to-image backend");
    ConvisOutput co = convis_decode(mllm, *t2i, image, prompt_ids, spec.convis);
    out.tokens = std::move(co.result.tokens);
    out.stopped_by = co.result.stopped_by;
    out.trace = std::move(co.trace);
    out.captions = std::move(co.captions);
  } else {
    SamplerConfig s = spec.sampler;
    if (item_seed != 0) s.rng_seed = mix_seed(s.rng_seed, item_seed);
    const StepProvider provider = [&](const TokenSequence& p, const TokenSequence& prefix) {
      return mllm.logits(image, p, prefix);
    };
    DecodeResult r = decode(provider, prompt_ids, s, eos);
    out.tokens = std::move(r.tokens);
    out.stopped_by = r.stopped_by;
  }
  TokenSequence body = out.tokens;
  if (!body.empty() && body.back() == eos) body.pop_back();
  out.text = mllm.detokenize(body);
  return out;
}

ImageHandle Engine::register_image(const std::string& ref) {
  std::error_code ec;
  if (fs::is_regular_file(ref, ec)) {
    std::ifstream is(ref, std::ios::binary);
    if (!is) fail(ErrorKind::config, "cannot read image " + ref);
    std::ostringstream buf;
    buf << is.rdbuf();
    return mllm->register_image(base64_encode(buf.str()), std::nullopt);
  }
  return mllm->register_image(std::nullopt, ref);
}

namespace {

// One client per handshake; a second client is needed when the model
// server cannot render images.
std::shared_ptr<ReplayTransport> attach_replay(Engine& e, const Transcript& transcript) {
  auto transport = std::make_shared<ReplayTransport>(transcript);
  auto client = std::make_shared<ProtocolClient>(transport);
  e.mllm = client;
  if (client->has_capability(kCapGenerateImage)) {
    e.t2i = client;
  } else {
    try {
      e.t2i = std::make_shared<ProtocolClient>(transport);
    } catch (const Error& err) {
      spdlog::debug("replay: no text-to-image handshake recorded ({})", err.what());
    }
  }
  return transport;
}

}  // namespace

Engine make_engine(const BackendConfig& cfg, bool record) {
  Engine e;
  if (record) e.recording = std::make_shared<Transcript>();
  auto wrap = [&](std::shared_ptr<Transport> t) -> std::shared_ptr<Transport> {
    if (!record) return t;
    return std::make_shared<RecordingTransport>(std::move(t), e.recording);
  };
  switch (cfg.kind) {
    case BackendConfig::Kind::testbed: {
      e.testbed = std::make_shared<testbed::TestbedBackend>(cfg.world.value_or(testbed::WorldSpec::default_world()));
      e.name = "testbed";
      if (record) {
        auto server = std::make_shared<ProtocolServer>(*e.testbed);
        e.mllm = std::make_shared<ProtocolClient>(wrap(std::make_shared<LocalTransport>(server)));
      } else {
        e.mllm = e.testbed;
      }
      e.t2i = e.mllm;
      break;
    }
    case BackendConfig::Kind::remote: {
      e.name = "remote:" + cfg.mllm_url;
      e.mllm = std::make_shared<ProtocolClient>(wrap(std::make_shared<HttpTransport>(cfg.mllm_url, cfg.timeout_s)));
      if (cfg.t2i_url.empty()) {
        if (e.mllm->has_capability(kCapGenerateImage)) e.t2i = e.mllm;
      } else if (cfg.t2i_url == cfg.mllm_url) {
        e.t2i = e.mllm;
      } else {
        e.t2i = std::make_shared<ProtocolClient>(wrap(std::make_shared<HttpTransport>(cfg.t2i_url, cfg.timeout_s)));
      }
      break;
    }
    case BackendConfig::Kind::replay: {
      e.name = "replay:" + fs::path(cfg.transcript).filename().string();
      attach_replay(e, Transcript::load(cfg.transcript));
      break;
    }
  }
  return e;
}

namespace {

struct Job {
  ImageHandle image;
  std::string prompt;
};

std::vector<ResponseOutput> run_jobs(Engine& engine, const std::vector<Job>& jobs, const MethodSpec& spec,
                                     int threads) {
  std::vector<ResponseOutput> out(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  const bool par = threads > 1 && engine.mllm->concurrent_safe();
  const auto n = static_cast<std::int64_t>(jobs.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (par)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      out[i] = run_method(*engine.mllm, engine.t2i.get(), jobs[i].image, jobs[i].prompt, spec,
                          static_cast<std::uint64_t>(i) + 1);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (Error& e) {
      e.add_context("item " + std::to_string(i));
      throw;
    }
  }
  return out;
}

int thread_count(bool parallel) { return parallel ? omp_get_max_threads() : 1; }

}  // namespace

eval::ObjectLexicon testbed_lexicon(const testbed::World& world) {
  return eval::ObjectLexicon(world.spec().objects, {});
}

RunOutcome run_chair_testbed(Engine& engine, const std::vector<testbed::CorpusItem>& corpus, const std::string& prompt,
                             const MethodSpec& spec, bool parallel) {
  if (!engine.testbed) fail(ErrorKind::config, "testbed corpus needs the testbed backend");
  std::vector<Job> jobs;
  jobs.reserve(corpus.size());
  for (const auto& item : corpus) jobs.push_back({engine.register_image(testbed::scene_ref(item.image)), prompt});
  const auto responses = run_jobs(engine, jobs, spec, thread_count(parallel));

  RunOutcome outcome;
  std::vector<eval::CaptionSample> samples;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    outcome.items.push_back({corpus[i].image.id, prompt, responses[i].text});
    samples.push_back({corpus[i].image.id, responses[i].text, corpus[i].annotation});
  }
  outcome.chair = eval::chair_scores(samples, testbed_lexicon(engine.testbed->world()));
  return outcome;
}

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string pope_prompt(const std::string& object) {
  return "Is there a " + object + " in the image? Please answer yes or no.";
}

std::vector<testbed::CorpusItem> testbed_corpus(const Engine& engine, std::size_t n) {
  const auto& world = engine.testbed->world();
  RngStream rng(world.spec().rng_seed);
  return testbed::make_corpus(world, n, rng);
}

std::vector<Job> register_all(Engine& engine, const std::vector<std::string>& refs,
                              const std::vector<std::string>& prompts) {
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < refs.size(); ++i) jobs.push_back({engine.register_image(refs[i]), prompts[i]});
  return jobs;
}

RunOutcome run_pope(Engine& engine, const RunConfig& cfg, const MethodSpec& spec) {
  std::vector<eval::PopeItem> items;
  if (cfg.corpus.testbed_images) {
    const auto corpus = testbed_corpus(engine, cfg.corpus.testbed_images);
    RngStream rng = RngStream(engine.testbed->world().spec().rng_seed).split(1);
    for (const auto& q : testbed::make_pope_questions(engine.testbed->world(), corpus, rng)) {
      items.push_back({testbed::scene_ref(q.image), q.object, q.label_yes, {}, eval::YesNo::unparseable});
    }
  } else {
    items = eval::load_pope_corpus(cfg.corpus.path);
  }
  if (items.empty()) fail(ErrorKind::metric, "POPE corpus is empty");
  std::vector<std::string> refs, prompts;
  for (const auto& it : items) {
    refs.push_back(it.image_ref);
    prompts.push_back(pope_prompt(it.object));
  }
  const auto responses = run_jobs(engine, register_all(engine, refs, prompts), spec, cfg.parallelism);
  RunOutcome outcome;
  for (std::size_t i = 0; i < items.size(); ++i) {
    items[i].answer = responses[i].text;
    items[i].parsed = eval::parse_yes_no(items[i].answer);
    outcome.items.push_back({items[i].image_ref, prompts[i], items[i].answer});
  }
  outcome.pope = eval::pope_score(items);
  return outcome;
}

RunOutcome run_chair(Engine& engine, const RunConfig& cfg, const MethodSpec& spec) {
  if (cfg.corpus.testbed_images) {
    return run_chair_testbed(engine, testbed_corpus(engine, cfg.corpus.testbed_images), cfg.prompt, spec,
                             cfg.parallelism > 1);
  }
  auto samples = eval::load_caption_corpus(cfg.corpus.path);
  if (samples.empty()) fail(ErrorKind::metric, "CHAIR corpus is empty");
  eval::ObjectLexicon lex;
  if (!cfg.lexicon_path.empty()) {
    lex = eval::ObjectLexicon::load(cfg.lexicon_path);
  } else if (engine.testbed) {
    lex = testbed_lexicon(engine.testbed->world());
  } else {
    fail(ErrorKind::config, "CHAIR on a file corpus needs a lexicon");
  }
  std::vector<std::string> refs, prompts;
  for (const auto& s : samples) {
    refs.push_back(s.image_ref);
    prompts.push_back(cfg.prompt);
  }
  const auto responses = run_jobs(engine, register_all(engine, refs, prompts), spec, cfg.parallelism);
  RunOutcome outcome;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].caption = responses[i].text;
    outcome.items.push_back({samples[i].image_ref, cfg.prompt, samples[i].caption});
  }
  outcome.chair = eval::chair_scores(samples, lex);
  return outcome;
}

// Benchmarks without a built-in scorer: responses are exported for an
// external judge.
RunOutcome run_export(Engine& engine, const RunConfig& cfg, const MethodSpec& spec) {
  std::vector<std::string> refs, prompts;
  if (cfg.corpus.testbed_images) {
    for (const auto& item : testbed_corpus(engine, cfg.corpus.testbed_images)) {
      refs.push_back(testbed::scene_ref(item.image));
      prompts.push_back(cfg.prompt);
    }
  } else {
    std::ifstream is(cfg.corpus.path);
    if (!is) fail(ErrorKind::config, "cannot open corpus " + cfg.corpus.path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        refs.push_back(j.at("image_ref").get<std::string>());
        prompts.push_back(j.value("prompt", cfg.prompt));
      } catch (const json::exception& e) {
        fail(ErrorKind::metric, cfg.corpus.path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  if (refs.empty()) fail(ErrorKind::metric, "corpus is empty");
  const auto responses = run_jobs(engine, register_all(engine, refs, prompts), spec, cfg.parallelism);
  RunOutcome outcome;
  for (std::size_t i = 0; i < refs.size(); ++i) outcome.items.push_back({refs[i], prompts[i], responses[i].text});
  return outcome;
}

}  // namespace

Report run_benchmark(const RunConfig& cfg, Engine& engine) {
  if (!cfg.corpus.testbed_images && cfg.corpus.path.empty()) fail(ErrorKind::config, "benchmark run needs a corpus");
  if (cfg.corpus.testbed_images && !engine.testbed) fail(ErrorKind::config, "corpus.testbed_images needs the testbed backend");
  const std::string bench = cfg.benchmark ? lower(*cfg.benchmark) : (cfg.corpus.testbed_images ? "chair" : "");
  fs::create_directories(cfg.output);

  const MethodSpec base = method_spec(cfg);
  std::map<std::string, std::vector<double>> values;
  std::vector<std::string> order;
  auto put = [&](const std::string& name, double v) {
    if (!values.count(name)) order.push_back(name);
    values[name].push_back(v);
  };

  for (std::uint64_t seed : cfg.seeds) {
    MethodSpec spec = base;
    spec.sampler.rng_seed = mix_seed(base.sampler.rng_seed, seed);
    for (auto& s : spec.convis.caption_seeds) s = mix_seed(s, seed);
    spdlog::info("run seed {}: {} on {}", seed, to_string(cfg.method), bench.empty() ? "corpus" : bench);

    RunOutcome outcome;
    if (bench == "chair") {
      outcome = run_chair(engine, cfg, spec);
      put("chair_s", outcome.chair->chair_s);
      put("chair_i", outcome.chair->chair_i);
    } else if (bench == "pope") {
      outcome = run_pope(engine, cfg, spec);
      put("accuracy", outcome.pope->accuracy);
      put("precision", outcome.pope->precision);
      put("recall", outcome.pope->recall);
      put("f1", outcome.pope->f1);
    } else {
      outcome = run_export(engine, cfg, spec);
      put("responses", static_cast<double>(outcome.items.size()));
    }

    std::ofstream os(fs::path(cfg.output) / ("responses-seed" + std::to_string(seed) + ".jsonl"));
    if (!os) fail(ErrorKind::config, "cannot write responses to " + cfg.output);
    for (const auto& it : outcome.items) {
      os << json{{"image_ref", it.image_ref}, {"prompt", it.prompt}, {"response", it.response}}.dump() << '\n';
    }
  }

  // where results go and how many threads make them do not change them
  json hashed = cfg.canonical;
  hashed.erase("output");
  hashed.erase("parallelism");
  ReportRow row{to_string(cfg.method), engine.name, config_hash(hashed),
                cfg.benchmark.value_or(bench.empty() ? "custom" : bench), {}};
  for (const auto& name : order) row.metrics.push_back(summarize(name, values[name]));
  Report report{{row}};
  emit_report(report, (fs::path(cfg.output) / "report").string());
  return report;
}

json to_json(const ExpectedRun& e) {
  return {{"config", e.config}, {"image_ref", e.image_ref}, {"prompt", e.prompt}, {"tokens", e.tokens}, {"text", e.text}};
}

ExpectedRun expected_from_json(const json& j) {
  try {
    return {j.at("config"), j.at("image_ref").get<std::string>(), j.at("prompt").get<std::string>(),
            j.at("tokens").get<TokenSequence>(), j.at("text").get<std::string>()};
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("expected-run sidecar: ") + e.what());
  }
}

ReplayCheck replay_verify(const Transcript& transcript, const ExpectedRun& expected) {
  // Only the decoding settings matter here; the recorded backend is
  // replaced by the transcript.
  json config = expected.config;
  if (config.is_object()) config.erase("backend");
  const RunConfig cfg = parse_run_config(config);
  Engine e;
  e.name = "replay";
  const auto transport = attach_replay(e, transcript);
  const ImageHandle image = e.register_image(expected.image_ref);
  const ResponseOutput out = run_method(*e.mllm, e.t2i.get(), image, expected.prompt, method_spec(cfg));
  ReplayCheck check;
  check.tokens = out.tokens;
  check.match = out.tokens == expected.tokens && out.text == expected.text;
  check.exchanges_served = transport->served();
  return check;
}

}  // namespace convis
