#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace afp {

enum class ErrorKind {
  kShapeMismatch,
  kInvalidArgument,
  kParse,
  kIo,
  kFormat,
  kNonFinite,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library. what() carries a human readable
// message; kind() is stable and intended for callers that branch on errors.
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

inline void check(bool ok, ErrorKind kind, const std::string& message) {
  if (!ok) fail(kind, message);
}

}  // namespace afp
