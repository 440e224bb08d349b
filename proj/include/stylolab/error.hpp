#pragma once

#include <stdexcept>
#include <string>

namespace stylolab {

enum class ErrorCode {
  ShapeMismatch,
  DegenerateNorm,
  EmptyAfterMask,
  NonScalarRoot,
  DoubleBackward,
  OutOfVocab,
  EmptySequence,
  LayerOutOfRange,
  LengthMismatch,
  EmptyNegatives,
  TooFewSamples,
  ZeroVariance,
  SingularSystem,
  InfeasibleTier,
  InvalidConfig,
  MissingInput,
  IoError,
};

const char* error_code_name(ErrorCode code);

/// All library failures surface as this exception; `code` is stable for
/// dispatch, `what()` carries the op name and offending shapes/values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace stylolab
