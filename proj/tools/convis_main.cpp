#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "convis/harness.hpp"
#include "convis/trace_io.hpp"

namespace fs = std::filesystem;
using namespace convis;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitMetric = 4;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::invalid_argument:
      return kExitConfig;
    case ErrorKind::metric:
      return kExitMetric;
    default:
      return kExitBackend;
  }
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("convis");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("CONVIS_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;

  RunConfig load() const {
    nlohmann::json j = nlohmann::json::object();
    std::string base = ".";
    if (!path.empty()) {
      j = load_json_file(path);
      base = fs::path(path).parent_path().string();
      if (base.empty()) base = ".";
    }
    for (const auto& s : sets) apply_override(j, s);
    return parse_run_config(j, base);
  }
};

void add_config_opts(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.path, "run config (JSON)");
  cmd->add_option("--set", args.sets, "override, e.g. --set convis.alpha=0.5")->take_all();
}

std::string expected_path(const std::string& transcript) { return transcript + ".expected.json"; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::config, "cannot write " + path);
  os << text;
}

struct DecodeArgs {
  ConfigArgs config;
  std::string image;
  std::string prompt;
  std::string trace;
  std::string record;
};

int cmd_decode(const DecodeArgs& a) {
  RunConfig cfg = a.config.load();
  const std::string prompt = a.prompt.empty() ? cfg.prompt : a.prompt;
  Engine engine = make_engine(cfg.backend, !a.record.empty());
  const ImageHandle image = engine.register_image(a.image);
  const ResponseOutput out = run_method(*engine.mllm, engine.t2i.get(), image, prompt, method_spec(cfg));
  std::cout << out.text << '\n';
  for (const auto& c : out.captions) spdlog::info("caption seed {}: {}", c.seed, c.caption_text);
  if (!a.trace.empty()) {
    if (!out.trace) fail(ErrorKind::config, "--trace needs method convis");
    auto& mllm = *engine.mllm;
    write_trace_jsonl(a.trace, trace_lines(*out.trace, [&mllm](TokenId t) {
                        const TokenId one[] = {t};
                        return mllm.detokenize(one);
                      }));
  }
  if (!a.record.empty()) {
    engine.recording->save(a.record);
    ExpectedRun e{cfg.canonical, a.image, prompt, out.tokens, out.text};
    write_text(expected_path(a.record), to_json(e).dump(2) + "\n");
    spdlog::info("recorded {} exchanges to {}", engine.recording->entries().size(), a.record);
  }
  return kExitOk;
}

int cmd_benchmark(const ConfigArgs& args) {
  RunConfig cfg = args.load();
  Engine engine = make_engine(cfg.backend);
  const Report report = run_benchmark(cfg, engine);
  write_report_csv(std::cout, report);
  return kExitOk;
}

int cmd_kl_plot(const std::string& trace, const std::string& out) {
  const auto lines = read_trace_jsonl(trace);
  if (lines.empty()) fail(ErrorKind::invalid_argument, "trace " + trace + " has no steps");
  double top = lines.front().kl;
  for (const auto& l : lines) top = std::max(top, l.kl);
  std::ofstream file;
  if (!out.empty()) {
    file.open(out, std::ios::binary);
    if (!file) fail(ErrorKind::config, "cannot write " + out);
  }
  std::ostream& os = out.empty() ? std::cout : file;
  os << "step,token,text,kl,is_max\n";
  for (const auto& l : lines) {
    std::string text = l.text;
    if (text.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : text) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      text = q + "\"";
    }
    os << l.step << ',' << l.token << ',' << text << ',' << format_double(l.kl) << ',' << (l.kl == top ? 1 : 0)
       << '\n';
  }
  return kExitOk;
}

struct ProxyArgs {
  std::string upstream;
  int listen = 0;
  std::string out;
  double duration = 0.0;
  double timeout = 30.0;
};

int cmd_proxy(const ProxyArgs& a) {
  auto transcript = std::make_shared<Transcript>();
  auto upstream = std::make_shared<RecordingTransport>(std::make_shared<HttpTransport>(a.upstream, a.timeout), transcript);
  HttpServer server([upstream](const std::string& ep, const nlohmann::json& body) { return upstream->call(ep, body); },
                    "127.0.0.1", a.listen);
  std::cout << server.url() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto start = std::chrono::steady_clock::now();
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (a.duration > 0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() > a.duration) break;
  }
  server.stop();
  transcript->save(a.out);
  spdlog::info("recorded {} exchanges to {}", transcript->entries().size(), a.out);
  return kExitOk;
}

int cmd_serve(const ConfigArgs& args, int port, double duration) {
  RunConfig cfg = args.load();
  if (cfg.backend.kind != BackendConfig::Kind::testbed) fail(ErrorKind::config, "serve only hosts the testbed backend");
  testbed::TestbedBackend backend(cfg.backend.world.value_or(testbed::WorldSpec::default_world()));
  auto proto = std::make_shared<ProtocolServer>(backend);
  HttpServer server([proto](const std::string& ep, const nlohmann::json& body) { return proto->handle(ep, body); },
                    "127.0.0.1", port);
  std::cout << server.url() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto start = std::chrono::steady_clock::now();
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (duration > 0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() > duration) break;
  }
  server.stop();
  return kExitOk;
}

int cmd_replay_verify(const std::string& transcript, std::string expected) {
  if (expected.empty()) expected = expected_path(transcript);
  const ExpectedRun e = expected_from_json(load_json_file(expected));
  const ReplayCheck check = replay_verify(Transcript::load(transcript), e);
  if (!check.match) {
    std::cout << "MISMATCH after " << check.exchanges_served << " exchanges: got " << check.tokens.size()
              << " tokens, expected " << e.tokens.size() << '\n';
    return kExitMetric;
  }
  std::cout << "OK " << check.tokens.size() << " tokens, " << check.exchanges_served << " exchanges\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"contrastive decoding with self-generated visualizations"};
  app.require_subcommand(1);

  DecodeArgs dec;
  auto* decode = app.add_subcommand("decode", "decode one image");
  add_config_opts(decode, dec.config);
  decode->add_option("-i,--image", dec.image, "image ref or file")->required();
  decode->add_option("-p,--prompt", dec.prompt, "prompt (default from config)");
  decode->add_option("--trace", dec.trace, "write the per-step KL trace (convis)");

  ConfigArgs bench_cfg;
  auto* bench = app.add_subcommand("benchmark", "run a benchmark and write a report");
  add_config_opts(bench, bench_cfg);

  std::string kl_trace_path, kl_out;
  auto* klp = app.add_subcommand("kl-plot", "per-step KL as CSV");
  klp->add_option("trace", kl_trace_path, "trace JSONL")->required();
  klp->add_option("-o,--out", kl_out, "output CSV (default stdout)");

  DecodeArgs rec;
  ProxyArgs proxy;
  auto* record = app.add_subcommand("record", "record a decode, or proxy a server, into a transcript");
  add_config_opts(record, rec.config);
  record->add_option("-i,--image", rec.image, "decode mode: image ref or file");
  record->add_option("-p,--prompt", rec.prompt, "decode mode: prompt");
  record->add_option("--upstream", proxy.upstream, "proxy mode: server URL");
  record->add_option("--listen", proxy.listen, "proxy mode: port (0 picks one)");
  record->add_option("--duration", proxy.duration, "proxy mode: stop after this many seconds");
  record->add_option("--timeout", proxy.timeout, "proxy mode: upstream timeout (s)");
  record->add_option("-o,--out", rec.record, "transcript JSONL")->required();

  std::string rv_transcript, rv_expected;
  auto* rv = app.add_subcommand("replay-verify", "re-run a recorded decode from its transcript");
  rv->add_option("transcript", rv_transcript, "transcript JSONL")->required();
  rv->add_option("--expected", rv_expected, "sidecar (default <transcript>.expected.json)");

  ConfigArgs serve_cfg;
  int serve_port = 0;
  double serve_duration = 0.0;
  auto* serve = app.add_subcommand("serve", "host the testbed over HTTP");
  add_config_opts(serve, serve_cfg);
  serve->add_option("--port", serve_port, "port (0 picks one)");
  serve->add_option("--duration", serve_duration, "stop after this many seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*decode) return cmd_decode(dec);
    if (*bench) return cmd_benchmark(bench_cfg);
    if (*klp) return cmd_kl_plot(kl_trace_path, kl_out);
    if (*record) {
      if (!proxy.upstream.empty()) {
        proxy.out = rec.record;
        return cmd_proxy(proxy);
      }
      if (rec.image.empty()) fail(ErrorKind::config, "record needs --image (decode mode) or --upstream (proxy mode)");
      return cmd_decode(rec);
    }
    if (*rv) return cmd_replay_verify(rv_transcript, rv_expected);
    if (*serve) return cmd_serve(serve_cfg, serve_port, serve_duration);
  } catch (const Error& e) {
    spdlog::error("{} error{}: {}", to_string(e.kind()), e.code().empty() ? "" : " [" + e.code() + "]", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitBackend;
  }
  return kExitOk;
}
