#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace reenact {

/// Coarse classification of failures, used for machine-readable CLI output
/// and HTTP status mapping.
enum class ErrorKind {
  structural,  // wrong shape or count
  domain,      // value outside the accepted range
  config,      // unsatisfiable configuration or dataset requirement
  io,          // missing or unwritable file
  data,        // malformed file contents
  divergence,  // non-finite parameters or losses
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::structural: return "structural";
    case ErrorKind::domain: return "domain";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::data: return "data";
    case ErrorKind::divergence: return "divergence";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace reenact
