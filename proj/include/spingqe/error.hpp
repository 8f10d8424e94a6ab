#pragma once

#include <stdexcept>
#include <string>

namespace spingqe {

enum class ErrorKind {
  InvalidArgument,
  QubitOutOfRange,
  DimensionMismatch,
  SystemTooLarge,
  UnknownToken,
  ConfigMismatch,
  Io,
  VersionMismatch,
  Corrupt,
  NonFinite,
  Schema,
};

const char* to_string(ErrorKind kind);

// Every recoverable failure in the library is reported as an Error; callers
// branch on kind() rather than parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace spingqe
