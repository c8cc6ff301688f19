#include <httplib.h>

#include <cmath>

#include "convis/protocol.hpp"

namespace convis {

std::string base64_encode(const std::string& bytes) { return httplib::detail::base64_encode(bytes); }

HttpTransport::HttpTransport(std::string base_url, double timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {
  if (!(timeout_seconds_ > 0.0)) fail(ErrorKind::invalid_argument, "timeout must be positive");
}

WireResponse HttpTransport::call(const std::string& endpoint, const json& body) {
  // One client per call keeps the transport safe for concurrent use.
  httplib::Client cli(base_url_);
  const auto sec = static_cast<time_t>(timeout_seconds_);
  const auto usec = static_cast<time_t>((timeout_seconds_ - std::floor(timeout_seconds_)) * 1e6);
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);
  auto res = cli.Post(endpoint, canonical(body), "application/json");
  if (!res) {
    const auto err = res.error();
    const bool timeout = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
    throw Error(ErrorKind::transport, endpoint + ": " + httplib::to_string(err) + " (" + base_url_ + ")",
                timeout ? "timeout" : "connection", true);
  }
  WireResponse r;
  r.status = res->status;
  try {
    r.body = json::parse(res->body);
  } catch (const json::exception&) {
    fail(ErrorKind::protocol, endpoint + ": response is not JSON (status " + std::to_string(res->status) + ")",
         "bad_response");
  }
  return r;
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(Handler handler, const std::string& host, int port)
    : impl_(std::make_unique<Impl>()), host_(host) {
  impl_->server.Post(R"(/v1/[a-z_]+)", [handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
    WireResponse out;
    json body;
    bool parsed = true;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      parsed = false;
      out = {400, {{"error", {{"code", "bad_request"}, {"message", std::string("body is not JSON: ") + e.what()}}}}};
    }
    if (parsed) {
      try {
        out = handler(req.path, body);
      } catch (const Error& e) {
        out = {e.kind() == ErrorKind::transport ? 502 : 500,
               {{"error", {{"code", e.code().empty() ? to_string(e.kind()) : e.code()}, {"message", e.what()}}}}};
      } catch (const std::exception& e) {
        out = {500, {{"error", {{"code", "internal"}, {"message", e.what()}}}}};
      }
    }
    res.status = out.status;
    res.set_content(canonical(out.body), "application/json");
  });
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host_);
  } else {
    port_ = impl_->server.bind_to_port(host_, port) ? port : -1;
  }
  if (port_ <= 0) fail(ErrorKind::transport, "cannot bind " + host_ + ":" + std::to_string(port), "bind");
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

HttpServer::~HttpServer() {
  stop();
  if (thread_.joinable()) thread_.join();
}

std::string HttpServer::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

void HttpServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace convis
