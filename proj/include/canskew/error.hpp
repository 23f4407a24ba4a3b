#pragma once

#include <stdexcept>
#include <string>

namespace canskew {

enum class ErrorCode {
  InvalidSpec,       // bad bus/clock parameter
  InvalidScenario,   // inconsistent scenario or attack
  InsufficientData,  // not enough arrivals / batches
  InvalidInput,      // malformed analysis input (mixed ids, time going backwards)
  Parse,             // text format error, carries a line number
  Ordering,          // trace timestamps not strictly increasing
  Precondition,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidSpec: return "invalid-spec";
    case ErrorCode::InvalidScenario: return "invalid-scenario";
    case ErrorCode::InsufficientData: return "insufficient-data";
    case ErrorCode::InvalidInput: return "invalid-input";
    case ErrorCode::Parse: return "parse-error";
    case ErrorCode::Ordering: return "ordering-error";
    case ErrorCode::Precondition: return "precondition-violation";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::size_t line = 0)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        line_(line) {}

  ErrorCode code() const noexcept { return code_; }
  /// 1-based source line for parse/ordering errors, 0 otherwise.
  std::size_t line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::size_t line_;
};

}  // namespace canskew
