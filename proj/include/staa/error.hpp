#pragma once

#include <stdexcept>
#include <string>

namespace staa {

// Error categories double as CLI exit codes (see exit_code()).
enum class ErrorKind {
  kInvalidArgument,
  kInvalidSpec,
  kFormat,
  kIo,
  kConfig,
  kShape,
  kAttributionInput,
  kDegenerateInput,
  kProtocol,
  kNetwork,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kInvalidSpec: return "invalid-spec";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kAttributionInput: return "attribution-input";
    case ErrorKind::kDegenerateInput: return "degenerate-input";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kNetwork: return "network";
  }
  return "unknown";
}

inline int exit_code(ErrorKind kind) { return 2 + static_cast<int>(kind); }

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace staa
