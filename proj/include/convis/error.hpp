#pragma once

#include <exception>
#include <string>
#include <utility>

namespace convis {

enum class ErrorKind {
  invalid_argument,  // precondition violated by the caller
  empty_support,     // no unmasked token left to choose from
  protocol,          // malformed or inconsistent backend response
  backend,           // backend reported a failure (unknown image, refusal, ...)
  transport,         // connection failure or timeout
  config,            // run configuration rejected
  metric,            // evaluation input rejected
};

const char* to_string(ErrorKind kind);

/// Single exception type for the whole library. `kind` is the coarse class
/// used for exit codes; `code` is a stable machine-readable detail such as
/// "unknown_image" or "vocab_mismatch".
class Error : public std::exception {
 public:
  Error(ErrorKind kind, std::string message, std::string code = {}, bool retryable = false)
      : kind_(kind), code_(std::move(code)), message_(std::move(message)), retryable_(retryable) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }
  bool retryable() const noexcept { return retryable_; }
  const char* what() const noexcept override { return message_.c_str(); }

  /// Prefixes the message with call-site context ("step 3: ...").
  void add_context(const std::string& context) { message_ = context + ": " + message_; }

 private:
  ErrorKind kind_;
  std::string code_;
  std::string message_;
  bool retryable_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string message, std::string code = {}) {
  throw Error(kind, std::move(message), std::move(code));
}

}  // namespace convis
