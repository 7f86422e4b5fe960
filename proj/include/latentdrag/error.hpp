#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace latentdrag {

enum class ErrorCode {
  BadShape,
  DegenerateData,
  NonFiniteGradient,
  EmptySeries,
  NonFiniteLatent,
  OutOfBounds,
  BadConfig,
  AllConverged,
  ShapeMismatch,
  OutputUnwritable,
  EmptyResults,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadShape: return "BadShape";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::NonFiniteLatent: return "NonFiniteLatent";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::AllConverged: return "AllConverged";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OutputUnwritable: return "OutputUnwritable";
    case ErrorCode::EmptyResults: return "EmptyResults";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace latentdrag
