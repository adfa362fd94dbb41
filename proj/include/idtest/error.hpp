#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace idtest {

enum class ErrorKind {
  MissingColumn,
  NonBinary,
  NonFinite,
  EmptyData,
  EmptyArm,
  DegenerateDesign,
  SingleClass,
  TooFewObservations,
  DegenerateFold,
  ZeroVariance,
  DegenerateVariable,
  EmptyLeaf,
  ParseError,
  ShapeMismatch,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI,
// the Python module, the Monte Carlo harness) can classify it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Re-raise with a stage prefix, keeping the kind.
  Error with_context(std::string_view context) const {
    return Error(kind_, std::string(context) + ": " + detail());
  }

  std::string detail() const {
    std::string what_str = what();
    auto pos = what_str.find(": ");
    return pos == std::string::npos ? what_str : what_str.substr(pos + 2);
  }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonBinary: return "NonBinary";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::EmptyData: return "EmptyData";
    case ErrorKind::EmptyArm: return "EmptyArm";
    case ErrorKind::DegenerateDesign: return "DegenerateDesign";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::TooFewObservations: return "TooFewObservations";
    case ErrorKind::DegenerateFold: return "DegenerateFold";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::DegenerateVariable: return "DegenerateVariable";
    case ErrorKind::EmptyLeaf: return "EmptyLeaf";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace idtest
