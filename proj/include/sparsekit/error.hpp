#pragma once

#include <stdexcept>
#include <string>

namespace sparsekit {

enum class ErrorKind {
  usage,   // bad arguments or configuration
  format,  // malformed file or header
  data,    // well-formed input whose contents violate a precondition
  io,      // filesystem failure
};

// Single exception type for the library. The kind drives the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace sparsekit
