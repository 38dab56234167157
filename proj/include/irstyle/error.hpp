#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace irstyle {

enum class ErrorKind {
  usage,       // bad arguments or configuration
  shape,       // tensor shape mismatch inside the engine
  validation,  // a document or value violates an invariant
  data,        // malformed or unreadable input
  io,          // file system failure
  version,     // serialized format version mismatch
  registry,    // serialized operation names disagree with the registry
  numeric,     // NaN or Inf produced
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string message) {
  throw Error(kind, std::move(message));
}

}  // namespace irstyle
