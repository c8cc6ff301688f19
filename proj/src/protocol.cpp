#include "convis/protocol.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace convis {

std::string canonical(const json& j) { return j.dump(); }

json request_envelope(const std::string& endpoint, const json& body) { return {{"endpoint", endpoint}, {"body", body}}; }

json response_envelope(const WireResponse& r) { return {{"status", r.status}, {"body", r.body}}; }

WireResponse response_from_envelope(const json& j) {
  if (!j.is_object() || !j.contains("status") || !j.contains("body") || !j.at("status").is_number_integer()) {
    fail(ErrorKind::protocol, "response envelope lacks status/body", "bad_transcript");
  }
  return {j.at("status").get<int>(), j.at("body")};
}

// ---------------------------------------------------------------- transcripts

Transcript::Transcript(const Transcript& other) {
  std::lock_guard lock(other.mu_);
  entries_ = other.entries_;
}

Transcript& Transcript::operator=(const Transcript& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  entries_ = other.entries_;
  return *this;
}

void Transcript::append(json request, json response) {
  std::lock_guard lock(mu_);
  entries_.push_back({entries_.size(), std::move(request), std::move(response)});
}

std::optional<std::string> Transcript::protocol() const {
  std::lock_guard lock(mu_);
  for (const auto& e : entries_) {
    if (e.request.value("endpoint", "") != kEpHandshake) continue;
    const json& body = e.response.at("body");
    if (body.is_object() && body.contains("protocol") && body.at("protocol").is_string()) {
      return body.at("protocol").get<std::string>();
    }
  }
  return std::nullopt;
}

std::string Transcript::to_jsonl() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const auto& e : entries_) {
    const json line = {{"seq", e.seq}, {"request", e.request}, {"response", e.response}};
    out += canonical(line);
    out += '\n';
  }
  return out;
}

void Transcript::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::invalid_argument, "cannot write transcript " + path);
  os << to_jsonl();
}

Transcript Transcript::from_jsonl(const std::string& text) {
  Transcript t;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "transcript line " + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorKind::protocol, where + ": not JSON (" + e.what() + ")", "bad_transcript");
    }
    if (!j.is_object() || !j.contains("seq") || !j.contains("request") || !j.contains("response") ||
        !j.at("seq").is_number_unsigned()) {
      fail(ErrorKind::protocol, where + ": expected {seq, request, response}", "bad_transcript");
    }
    const json& req = j.at("request");
    if (!req.is_object() || !req.contains("endpoint") || !req.at("endpoint").is_string() || !req.contains("body")) {
      fail(ErrorKind::protocol, where + ": request lacks endpoint/body", "bad_transcript");
    }
    try {
      response_from_envelope(j.at("response"));
    } catch (Error& e) {
      e.add_context(where);
      throw;
    }
    t.entries_.push_back({j.at("seq").get<std::uint64_t>(), req, j.at("response")});
  }
  return t;
}

Transcript Transcript::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::invalid_argument, "cannot open transcript " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_jsonl(ss.str());
}

WireResponse RecordingTransport::call(const std::string& endpoint, const json& body) {
  WireResponse r = inner_->call(endpoint, body);
  transcript_->append(request_envelope(endpoint, body), response_envelope(r));
  return r;
}

ReplayTransport::ReplayTransport(const Transcript& transcript) {
  for (const auto& e : transcript.entries()) slots_[canonical(e.request)].responses.push_back(e.response);
}

WireResponse ReplayTransport::call(const std::string& endpoint, const json& body) {
  const std::string key = canonical(request_envelope(endpoint, body));
  json response;
  {
    std::lock_guard lock(mu_);
    auto it = slots_.find(key);
    if (it == slots_.end()) {
      fail(ErrorKind::protocol, "replay: request not in transcript: " + key.substr(0, 200), "replay_miss");
    }
    Slot& slot = it->second;
    response = slot.responses[std::min(slot.next, slot.responses.size() - 1)];
    if (slot.next < slot.responses.size()) ++slot.next;
    ++served_;
  }
  return response_from_envelope(response);
}

std::size_t ReplayTransport::served() const {
  std::lock_guard lock(mu_);
  return served_;
}

// ------------------------------------------------------------------ server

namespace {

WireResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, {{"error", {{"code", code}, {"message", message}}}}};
}

int status_for(const Error& e) {
  if (e.code() == "unknown_image") return 404;
  if (e.code() == "refused") return 422;
  if (e.kind() == ErrorKind::invalid_argument) return 400;
  return 500;
}

std::vector<TokenId> id_array(const json& body, const char* key) {
  const json& a = body.at(key);
  if (!a.is_array()) throw std::invalid_argument(std::string(key) + " must be an array");
  std::vector<TokenId> ids;
  ids.reserve(a.size());
  for (const auto& v : a) {
    if (!v.is_number_integer()) throw std::invalid_argument(std::string(key) + " must hold integers");
    ids.push_back(v.get<TokenId>());
  }
  return ids;
}

std::optional<std::string> optional_string(const json& body, const char* key) {
  if (!body.contains(key) || body.at(key).is_null()) return std::nullopt;
  if (!body.at(key).is_string()) throw std::invalid_argument(std::string(key) + " must be a string or null");
  return body.at(key).get<std::string>();
}

const std::string& required_string(const json& body, const char* key) {
  if (!body.contains(key) || !body.at(key).is_string()) throw std::invalid_argument(std::string(key) + " must be a string");
  return body.at(key).get_ref<const std::string&>();
}

}  // namespace

WireResponse ProtocolServer::handle(const std::string& endpoint, const json& body) {
  try {
    if (!body.is_object()) throw std::invalid_argument("request body must be a JSON object");
    if (endpoint == kEpHandshake) {
      const Vocabulary& v = backend_.vocabulary();
      return {200,
              {{"vocab_size", v.size},
               {"eos_id", v.eos_id},
               {"bos_id", v.bos_id ? json(*v.bos_id) : json(nullptr)},
               {"capabilities", backend_.capabilities()},
               {"protocol", kProtocolVersion}}};
    }
    if (endpoint == kEpLogits) {
      const std::string& image_id = required_string(body, "image_id");
      const auto prompt = id_array(body, "prompt_ids");
      const auto prefix = id_array(body, "prefix_ids");
      const LogitVector l = backend_.logits(ImageHandle{image_id, ImageOrigin::original, std::nullopt}, prompt, prefix);
      json arr = json::array();
      for (double x : l.values()) arr.push_back(is_masked(x) ? json(nullptr) : json(x));
      return {200, {{"logits", std::move(arr)}}};
    }
    if (endpoint == kEpGenerateImage) {
      const std::string& caption = required_string(body, "caption");
      if (!body.contains("seed") || !body.at("seed").is_number_integer()) throw std::invalid_argument("seed must be an integer");
      const ImageHandle h = backend_.generate_image(caption, body.at("seed").get<std::uint64_t>());
      return {200, {{"image_id", h.id}}};
    }
    if (endpoint == kEpTokenize) {
      return {200, {{"ids", backend_.tokenize(required_string(body, "text"))}}};
    }
    if (endpoint == kEpDetokenize) {
      return {200, {{"text", backend_.detokenize(id_array(body, "ids"))}}};
    }
    if (endpoint == kEpRegisterImage) {
      const ImageHandle h = backend_.register_image(optional_string(body, "bytes_b64"), optional_string(body, "ref"));
      return {200, {{"image_id", h.id}}};
    }
    return error_response(404, "unknown_endpoint", "no such endpoint: " + endpoint);
  } catch (const Error& e) {
    return error_response(status_for(e), e.code().empty() ? to_string(e.kind()) : e.code(), e.what());
  } catch (const json::exception& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const std::invalid_argument& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

// ------------------------------------------------------------------ client

ProtocolClient::ProtocolClient(std::shared_ptr<Transport> transport) : transport_(std::move(transport)) {
  const json h = call(kEpHandshake, json::object());
  try {
    const std::string proto = h.at("protocol").get<std::string>();
    if (proto != kProtocolVersion) {
      fail(ErrorKind::protocol, "backend speaks " + proto + ", expected " + kProtocolVersion, "version_mismatch");
    }
    const auto size = h.at("vocab_size").get<std::int64_t>();
    if (size <= 0) fail(ErrorKind::protocol, "handshake vocab_size must be positive", "bad_response");
    vocab_.size = static_cast<std::size_t>(size);
    vocab_.eos_id = h.at("eos_id").get<TokenId>();
    if (!h.at("bos_id").is_null()) vocab_.bos_id = h.at("bos_id").get<TokenId>();
    capabilities_ = h.at("capabilities").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::protocol, std::string("malformed handshake: ") + e.what(), "bad_response");
  }
  vocab_.token_text.resize(vocab_.size);
  for (std::size_t i = 0; i < vocab_.size; ++i) vocab_.token_text[i] = "<" + std::to_string(i) + ">";
  try {
    vocab_.validate();
  } catch (const Error& e) {
    fail(ErrorKind::protocol, std::string("handshake: ") + e.what(), "bad_response");
  }
}

json ProtocolClient::call(const std::string& endpoint, const json& body) {
  const WireResponse r = transport_->call(endpoint, body);
  if (r.status == 200) {
    if (!r.body.is_object()) fail(ErrorKind::protocol, endpoint + ": response body is not an object", "bad_response");
    return r.body;
  }
  std::string code = "http_" + std::to_string(r.status);
  std::string message = endpoint + " failed with status " + std::to_string(r.status);
  if (r.body.is_object() && r.body.contains("error") && r.body.at("error").is_object()) {
    const json& e = r.body.at("error");
    if (e.contains("code") && e.at("code").is_string()) code = e.at("code").get<std::string>();
    if (e.contains("message") && e.at("message").is_string()) message = endpoint + ": " + e.at("message").get<std::string>();
  }
  throw Error(ErrorKind::backend, message, code, r.status >= 500);
}

void ProtocolClient::require(const char* cap) const {
  if (std::find(capabilities_.begin(), capabilities_.end(), cap) == capabilities_.end()) {
    fail(ErrorKind::protocol, std::string("backend lacks capability '") + cap + "'", "capability_missing");
  }
}

namespace {

template <class T>
T field(const json& body, const char* endpoint, const char* key) {
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::protocol, std::string(endpoint) + ": response field '" + key + "' missing or mistyped", "bad_response");
  }
}

}  // namespace

LogitVector ProtocolClient::logits(const ImageHandle& image, std::span<const TokenId> prompt,
                                   std::span<const TokenId> prefix) {
  require(kCapLogits);
  const json body = call(kEpLogits, {{"image_id", image.id},
                                     {"prompt_ids", std::vector<TokenId>(prompt.begin(), prompt.end())},
                                     {"prefix_ids", std::vector<TokenId>(prefix.begin(), prefix.end())}});
  if (!body.contains("logits") || !body.at("logits").is_array()) {
    fail(ErrorKind::protocol, "logits: response lacks a logits array", "bad_response");
  }
  const json& arr = body.at("logits");
  if (arr.size() != vocab_.size) {
    fail(ErrorKind::protocol,
         "logits: got " + std::to_string(arr.size()) + " values for vocabulary of " + std::to_string(vocab_.size),
         "vocab_mismatch");
  }
  std::vector<double> values;
  values.reserve(arr.size());
  bool any = false;
  for (const auto& v : arr) {
    if (v.is_null()) {
      values.push_back(kMasked);
    } else if (v.is_number()) {
      values.push_back(v.get<double>());
      any = true;
    } else {
      fail(ErrorKind::protocol, "logits: non-numeric entry", "bad_response");
    }
  }
  if (!any) fail(ErrorKind::protocol, "logits: every entry is masked", "empty_support");
  return LogitVector(std::move(values));
}

TokenSequence ProtocolClient::tokenize(const std::string& text) {
  require(kCapTokenize);
  auto ids = field<TokenSequence>(call(kEpTokenize, {{"text", text}}), kEpTokenize, "ids");
  for (TokenId id : ids) {
    if (!vocab_.contains(id)) fail(ErrorKind::protocol, "tokenize: id outside vocabulary", "bad_response");
  }
  return ids;
}

std::string ProtocolClient::detokenize(std::span<const TokenId> ids) {
  require(kCapTokenize);
  return field<std::string>(call(kEpDetokenize, {{"ids", std::vector<TokenId>(ids.begin(), ids.end())}}), kEpDetokenize,
                            "text");
}

ImageHandle ProtocolClient::register_image(const std::optional<std::string>& bytes_b64,
                                           const std::optional<std::string>& ref) {
  const json body = call(kEpRegisterImage, {{"bytes_b64", bytes_b64 ? json(*bytes_b64) : json(nullptr)},
                                            {"ref", ref ? json(*ref) : json(nullptr)}});
  return {field<std::string>(body, kEpRegisterImage, "image_id"), ImageOrigin::original, std::nullopt};
}

ImageHandle ProtocolClient::generate_image(const std::string& caption, std::uint64_t seed) {
  require(kCapGenerateImage);
  const json body = call(kEpGenerateImage, {{"caption", caption}, {"seed", seed}});
  return {field<std::string>(body, kEpGenerateImage, "image_id"), ImageOrigin::generated, caption};
}

bool Backend::has_capability(const std::string& cap) const {
  const auto caps = capabilities();
  return std::find(caps.begin(), caps.end(), cap) != caps.end();
}

}  // namespace convis
