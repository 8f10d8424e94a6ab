#include "spingqe/error.hpp"

namespace spingqe {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::QubitOutOfRange: return "qubit out of range";
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::SystemTooLarge: return "system too large";
    case ErrorKind::UnknownToken: return "unknown token";
    case ErrorKind::ConfigMismatch: return "config mismatch";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::VersionMismatch: return "version mismatch";
    case ErrorKind::Corrupt: return "corrupt file";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::Schema: return "schema error";
  }
  return "unknown error";
}

}  // namespace spingqe
