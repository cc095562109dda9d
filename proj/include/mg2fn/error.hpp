#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mg2fn {

enum class ErrorCode {
  IllegalAction,
  NotTerminal,
  TooLarge,
  EmptyMask,
  RootHasNoParents,
  NonFiniteGradient,
  NonFiniteLoss,
  DepthExceeded,
  MissingRoot,
  AlreadyExpanded,
  TerminalLeaf,
  MissingEdge,
  DimensionMismatch,
  TerminalRoot,
  TooFew,
  ParseError,
  ValidationError,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::IllegalAction: return "IllegalAction";
    case ErrorCode::NotTerminal: return "NotTerminal";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::RootHasNoParents: return "RootHasNoParents";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::DepthExceeded: return "DepthExceeded";
    case ErrorCode::MissingRoot: return "MissingRoot";
    case ErrorCode::AlreadyExpanded: return "AlreadyExpanded";
    case ErrorCode::TerminalLeaf: return "TerminalLeaf";
    case ErrorCode::MissingEdge: return "MissingEdge";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TerminalRoot: return "TerminalRoot";
    case ErrorCode::TooFew: return "TooFew";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace mg2fn
