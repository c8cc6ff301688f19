#pragma once

// convis/1 wire protocol: JSON bodies POSTed to /v1/* endpoints.
//
//   /v1/handshake       {}                                   -> {vocab_size, eos_id, bos_id, capabilities, protocol}
//   /v1/logits          {image_id, prompt_ids, prefix_ids}   -> {logits: [number|null]}
//   /v1/generate_image  {caption, seed}                      -> {image_id}
//   /v1/tokenize        {text}                               -> {ids}
//   /v1/detokenize      {ids}                                -> {text}
//   /v1/register_image  {bytes_b64|null, ref|null}           -> {image_id}
//
// A masked logit travels as null. Failures carry a non-200 status and
// {"error": {"code": ..., "message": ...}}.
//
// Canonical serialization is nlohmann::json::dump() with its default
// std::map objects: keys sorted, no whitespace, doubles in shortest
// round-trip form. Transcripts and replay matching use these bytes.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "convis/backend.hpp"

namespace convis {

using nlohmann::json;

inline constexpr const char* kProtocolVersion = "convis/1";

inline constexpr const char* kEpHandshake = "/v1/handshake";
inline constexpr const char* kEpLogits = "/v1/logits";
inline constexpr const char* kEpGenerateImage = "/v1/generate_image";
inline constexpr const char* kEpTokenize = "/v1/tokenize";
inline constexpr const char* kEpDetokenize = "/v1/detokenize";
inline constexpr const char* kEpRegisterImage = "/v1/register_image";

std::string canonical(const json& j);

std::string base64_encode(const std::string& bytes);

struct WireResponse {
  int status = 200;
  json body;
};

/// Request/response envelopes as stored in transcripts.
json request_envelope(const std::string& endpoint, const json& body);
json response_envelope(const WireResponse& r);
WireResponse response_from_envelope(const json& j);

class Transport {
 public:
  virtual ~Transport() = default;
  virtual WireResponse call(const std::string& endpoint, const json& body) = 0;
};

// ---------------------------------------------------------------- transcripts

struct TranscriptEntry {
  std::uint64_t seq = 0;
  json request;   // {"body": ..., "endpoint": ...}
  json response;  // {"body": ..., "status": ...}
};

class Transcript {
 public:
  Transcript() = default;
  Transcript(const Transcript& other);
  Transcript& operator=(const Transcript& other);

  void append(json request, json response);
  const std::vector<TranscriptEntry>& entries() const { return entries_; }
  /// Version string announced by the recorded handshake, if any.
  std::optional<std::string> protocol() const;

  std::string to_jsonl() const;
  void save(const std::string& path) const;
  /// Strict parse; a malformed line raises a protocol error naming it.
  static Transcript from_jsonl(const std::string& text);
  static Transcript load(const std::string& path);

 private:
  std::vector<TranscriptEntry> entries_;
  mutable std::mutex mu_;
};

/// Forwards to `inner` and appends each exchange to `transcript`.
class RecordingTransport : public Transport {
 public:
  RecordingTransport(std::shared_ptr<Transport> inner, std::shared_ptr<Transcript> transcript)
      : inner_(std::move(inner)), transcript_(std::move(transcript)) {}
  WireResponse call(const std::string& endpoint, const json& body) override;

 private:
  std::shared_ptr<Transport> inner_;
  std::shared_ptr<Transcript> transcript_;
};

/// Serves recorded responses for byte-identical canonical requests.
/// Repeated identical requests are served in recording order; once the
/// recorded copies run out the last one is served again. Unknown requests
/// raise a protocol error with code "replay_miss".
class ReplayTransport : public Transport {
 public:
  explicit ReplayTransport(const Transcript& transcript);
  WireResponse call(const std::string& endpoint, const json& body) override;
  std::size_t served() const;

 private:
  struct Slot {
    std::vector<json> responses;
    std::size_t next = 0;
  };
  std::map<std::string, Slot> slots_;
  std::size_t served_ = 0;
  mutable std::mutex mu_;
};

class HttpTransport : public Transport {
 public:
  /// base_url like "http://127.0.0.1:8080".
  explicit HttpTransport(std::string base_url, double timeout_seconds = 30.0);
  WireResponse call(const std::string& endpoint, const json& body) override;

 private:
  std::string base_url_;
  double timeout_seconds_;
};

// ------------------------------------------------------------------ server

/// Maps protocol requests onto a Backend. Never throws: every failure
/// becomes an error body.
class ProtocolServer {
 public:
  explicit ProtocolServer(Backend& backend) : backend_(backend) {}
  WireResponse handle(const std::string& endpoint, const json& body);

 private:
  Backend& backend_;
};

/// In-process transport straight into a ProtocolServer.
class LocalTransport : public Transport {
 public:
  explicit LocalTransport(std::shared_ptr<ProtocolServer> server) : server_(std::move(server)) {}
  WireResponse call(const std::string& endpoint, const json& body) override { return server_->handle(endpoint, body); }

 private:
  std::shared_ptr<ProtocolServer> server_;
};

/// HTTP server for any handler (a ProtocolServer, or a recording proxy).
class HttpServer {
 public:
  using Handler = std::function<WireResponse(const std::string& endpoint, const json& body)>;
  HttpServer(Handler handler, const std::string& host = "127.0.0.1", int port = 0);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  int port() const { return port_; }
  std::string url() const;
  /// Blocks until stop() is called from another thread.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string host_;
  int port_ = 0;
  std::thread thread_;
};

// ------------------------------------------------------------------ client

/// Backend speaking convis/1 over any Transport. The handshake runs in the
/// constructor; every response is schema- and length-checked before use.
class ProtocolClient : public Backend {
 public:
  explicit ProtocolClient(std::shared_ptr<Transport> transport);

  const Vocabulary& vocabulary() const override { return vocab_; }
  LogitVector logits(const ImageHandle& image, std::span<const TokenId> prompt,
                     std::span<const TokenId> prefix) override;
  TokenSequence tokenize(const std::string& text) override;
  std::string detokenize(std::span<const TokenId> ids) override;
  ImageHandle register_image(const std::optional<std::string>& bytes_b64,
                             const std::optional<std::string>& ref) override;
  ImageHandle generate_image(const std::string& caption, std::uint64_t seed) override;
  std::vector<std::string> capabilities() const override { return capabilities_; }
  bool concurrent_safe() const override { return true; }

 private:
  json call(const std::string& endpoint, const json& body);
  void require(const char* cap) const;

  std::shared_ptr<Transport> transport_;
  Vocabulary vocab_;
  std::vector<std::string> capabilities_;
};

}  // namespace convis
