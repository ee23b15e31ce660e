#include "fpalign/error.hpp"

namespace fpalign {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Underdetermined: return "underdetermined";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Data: return "data";
    case ErrorKind::Format: return "format";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace fpalign
