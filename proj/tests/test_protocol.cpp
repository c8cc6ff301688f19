#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "convis/harness.hpp"
#include "convis/protocol.hpp"
#include "convis/testbed.hpp"

using namespace convis;

namespace {

const std::string kGolden = CONVIS_GOLDEN_DIR;

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExpectedRun expected(const std::string& name) {
  return expected_from_json(nlohmann::json::parse(slurp(kGolden + "/" + name + ".jsonl.expected.json")));
}

testbed::WorldSpec tiny() {
  testbed::WorldSpec w;
  w.objects = {"dog", "car", "pool", "cat", "chair", "cup"};
  w.prior_set = {"chair"};
  return w;
}

// Wraps the in-process server and lets a test tamper with responses.
struct Tamper : Transport {
  std::shared_ptr<Transport> inner;
  std::function<void(const std::string&, WireResponse&)> edit;
  WireResponse call(const std::string& endpoint, const json& body) override {
    auto r = inner->call(endpoint, body);
    if (edit) edit(endpoint, r);
    return r;
  }
};

struct Local {
  std::shared_ptr<testbed::TestbedBackend> backend = std::make_shared<testbed::TestbedBackend>(tiny());
  std::shared_ptr<ProtocolServer> server = std::make_shared<ProtocolServer>(*backend);
  std::shared_ptr<Tamper> tamper = std::make_shared<Tamper>();
  Local() { tamper->inner = std::make_shared<LocalTransport>(server); }
};

ErrorKind kind_of(const std::function<void()>& f, std::string* code = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (code) *code = e.code();
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::invalid_argument;
}

}  // namespace

TEST_CASE("golden transcripts replay bit-exactly") {
  for (const char* name : {"greedy", "convis"}) {
    INFO(name);
    const auto t = Transcript::load(kGolden + "/" + name + ".jsonl");
    CHECK(t.protocol() == std::string(kProtocolVersion));
    const auto e = expected(name);
    const auto check = replay_verify(t, e);
    CHECK(check.match);
    CHECK(check.tokens == e.tokens);
    CHECK(check.exchanges_served > 0);
    // serializing again gives the recorded bytes
    CHECK(t.to_jsonl() == slurp(kGolden + "/" + name + ".jsonl"));
  }
}

TEST_CASE("golden replay through a mock HTTP server") {
  const auto t = Transcript::load(kGolden + "/convis.jsonl");
  const auto e = expected("convis");
  auto replay = std::make_shared<ReplayTransport>(t);
  HttpServer server([replay](const std::string& ep, const json& body) { return replay->call(ep, body); });
  auto client = std::make_shared<ProtocolClient>(std::make_shared<HttpTransport>(server.url(), 5.0));
  auto cfg_json = e.config;
  cfg_json.erase("backend");
  const auto spec = method_spec(parse_run_config(cfg_json));
  const auto image = client->register_image(std::nullopt, e.image_ref);
  const auto out = run_method(*client, client.get(), image, e.prompt, spec);
  CHECK(out.tokens == e.tokens);
  CHECK(out.text == e.text);
  server.stop();
}

TEST_CASE("recording then replaying reproduces every response") {
  Local l;
  auto transcript = std::make_shared<Transcript>();
  auto rec = std::make_shared<RecordingTransport>(l.tamper, transcript);
  ProtocolClient live(rec);
  const auto img = live.register_image(std::nullopt, std::string("s:dog,cup"));
  const auto prompt = live.tokenize("describe the image");
  const auto a = live.logits(img, prompt, {});
  const auto g = live.generate_image("a dog and a cup", 3);

  ProtocolClient offline(std::make_shared<ReplayTransport>(Transcript::from_jsonl(transcript->to_jsonl())));
  CHECK(offline.register_image(std::nullopt, std::string("s:dog,cup")) == img);
  CHECK(offline.tokenize("describe the image") == prompt);
  CHECK(std::ranges::equal(offline.logits(img, prompt, {}).values(), a.values()));
  CHECK(offline.generate_image("a dog and a cup", 3) == g);
  std::string code;
  CHECK(kind_of([&] { offline.generate_image("a dog and a cup", 4); }, &code) == ErrorKind::protocol);
  CHECK(code == "replay_miss");
}

TEST_CASE("masked logits travel as null") {
  Local l;
  auto transcript = std::make_shared<Transcript>();
  ProtocolClient c(std::make_shared<RecordingTransport>(l.tamper, transcript));
  const auto img = c.register_image(std::nullopt, std::string("s:dog"));
  const auto v = c.logits(img, {}, {});
  CHECK(v.masked(testbed::World::kAnd));
  const auto& last = transcript->entries().back();
  CHECK(last.response.at("body").at("logits").at(testbed::World::kAnd).is_null());
}

TEST_CASE("fault injection gives typed protocol errors") {
  Local l;
  ProtocolClient c(l.tamper);
  const auto img = c.register_image(std::nullopt, std::string("s:dog"));
  std::string code;

  l.tamper->edit = [](const std::string& ep, WireResponse& r) {
    if (ep == kEpLogits) r.body["logits"].erase(0);
  };
  CHECK(kind_of([&] { c.logits(img, {}, {}); }, &code) == ErrorKind::protocol);
  CHECK(code == "vocab_mismatch");

  l.tamper->edit = [](const std::string& ep, WireResponse& r) {
    if (ep == kEpLogits) {
      for (auto& v : r.body["logits"]) v = nullptr;
    }
  };
  CHECK(kind_of([&] { c.logits(img, {}, {}); }, &code) == ErrorKind::protocol);
  CHECK(code == "empty_support");

  l.tamper->edit = [](const std::string& ep, WireResponse& r) {
    if (ep == kEpLogits) r.body["logits"][1] = "NaN";
  };
  CHECK(kind_of([&] { c.logits(img, {}, {}); }, &code) == ErrorKind::protocol);

  l.tamper->edit = [](const std::string& ep, WireResponse& r) {
    if (ep == kEpLogits) r.body = {{"logit", {1, 2}}};
  };
  CHECK(kind_of([&] { c.logits(img, {}, {}); }) == ErrorKind::protocol);

  l.tamper->edit = [](const std::string& ep, WireResponse& r) {
    if (ep == kEpTokenize) r.body["ids"] = {9999};
  };
  CHECK(kind_of([&] { c.tokenize("a dog"); }) == ErrorKind::protocol);

  l.tamper->edit = [](const std::string&, WireResponse& r) { r.body["protocol"] = "convis/2"; };
  CHECK(kind_of([&] { ProtocolClient again(l.tamper); }, &code) == ErrorKind::protocol);
  CHECK(code == "version_mismatch");

  l.tamper->edit = nullptr;
  CHECK(kind_of([&] { c.logits({"nope", ImageOrigin::original, std::nullopt}, {}, {}); }, &code) == ErrorKind::backend);
}

TEST_CASE("corrupted transcripts are rejected by line") {
  const std::string good = slurp(kGolden + "/greedy.jsonl");
  std::string cut = good.substr(0, good.size() / 2);
  try {
    Transcript::from_jsonl(cut);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::protocol);
    CHECK(e.code() == "bad_transcript");
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }
  CHECK_THROWS_AS(Transcript::from_jsonl("{\"seq\":0}\n"), Error);
  CHECK_THROWS_AS(Transcript::from_jsonl("[1,2]\n"), Error);
  CHECK(Transcript::from_jsonl("").entries().empty());
}

TEST_CASE("replay detects a tampered golden") {
  const auto e = expected("greedy");
  const auto t = Transcript::load(kGolden + "/greedy.jsonl");
  // make a different object win the second step
  Transcript edited;
  int seen = 0;
  for (auto entry : t.entries()) {
    if (entry.request.at("endpoint") == kEpLogits && seen++ == 1) {
      auto& arr = entry.response["body"]["logits"];
      REQUIRE(!arr.at(e.tokens[1]).is_null());
      for (std::size_t i = arr.size(); i-- > 0;) {
        if (!arr[i].is_null() && static_cast<TokenId>(i) != e.tokens[1]) {
          arr[i] = 100.0;
          break;
        }
      }
    }
    edited.append(entry.request, entry.response);
  }
  // the diverging decode either asks for an unrecorded request or ends differently
  try {
    const bool match = replay_verify(edited, e).match;
    CHECK_FALSE(match);
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::protocol);
    CHECK(err.code() == "replay_miss");
  }
}

TEST_CASE("HTTP round trip against the testbed server") {
  auto backend = std::make_shared<testbed::TestbedBackend>(tiny());
  auto proto = std::make_shared<ProtocolServer>(*backend);
  HttpServer server([proto](const std::string& ep, const json& body) { return proto->handle(ep, body); });
  ProtocolClient remote(std::make_shared<HttpTransport>(server.url(), 5.0));
  CHECK(remote.vocabulary().size == backend->vocabulary().size);
  const auto img = remote.register_image(std::nullopt, std::string("x:dog,car"));
  const auto prompt = remote.tokenize("describe");
  CHECK(std::ranges::equal(remote.logits(img, prompt, {}).values(), backend->logits(img, prompt, {}).values()));
  CHECK(remote.detokenize(remote.tokenize("a dog and a car")) == "a dog and a car");
  CHECK(remote.generate_image("a dog", 1) == backend->generate_image("a dog", 1));
  std::string code;
  CHECK(kind_of([&] { remote.logits({"missing", ImageOrigin::original, std::nullopt}, prompt, {}); }, &code) ==
        ErrorKind::backend);
  server.stop();

  HttpTransport dead(server.url(), 0.5);
  CHECK(kind_of([&] { dead.call(kEpHandshake, json::object()); }) == ErrorKind::transport);
}

TEST_CASE("register_image sends file bytes as base64") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
}
