#include "stylolab/error.hpp"

namespace stylolab {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateNorm: return "DegenerateNorm";
    case ErrorCode::EmptyAfterMask: return "EmptyAfterMask";
    case ErrorCode::NonScalarRoot: return "NonScalarRoot";
    case ErrorCode::DoubleBackward: return "DoubleBackward";
    case ErrorCode::OutOfVocab: return "OutOfVocab";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::LayerOutOfRange: return "LayerOutOfRange";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyNegatives: return "EmptyNegatives";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::InfeasibleTier: return "InfeasibleTier";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingInput: return "MissingInput";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

}  // namespace stylolab
