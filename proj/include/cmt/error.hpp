#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cmt {

enum class ErrorCode {
  WrongSize,
  BadMagic,
  UnsupportedDatatype,
  InvalidQuaternion,
  Io,
  Truncated,
  RejectedNonFinite,
  SingularAffine,
  ObliqueAffine,
  EmptyOutput,
  ConstantImage,
  GridMismatch,
  UnknownLabel,
  NotRasOriented,
  NonFinite,
  CohortTooSmall,
  Diverged,
  EmptyLabel,
  NoBoneAdjacency,
  EmptyMask,
  ZeroPseudoArea,
  EmptyPatch,
  NoTibialCartilage,
  EmptyRegion,
  MissingInputs,
  InvalidArgument,
  ParseError,
};

std::string_view to_string(ErrorCode code);

/// Exception type used throughout the library. The code identifies the
/// failure class; what() carries a human-readable message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::WrongSize: return "WrongSize";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::InvalidQuaternion: return "InvalidQuaternion";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::RejectedNonFinite: return "RejectedNonFinite";
    case ErrorCode::SingularAffine: return "SingularAffine";
    case ErrorCode::ObliqueAffine: return "ObliqueAffine";
    case ErrorCode::EmptyOutput: return "EmptyOutput";
    case ErrorCode::ConstantImage: return "ConstantImage";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::NotRasOriented: return "NotRasOriented";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::CohortTooSmall: return "CohortTooSmall";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::EmptyLabel: return "EmptyLabel";
    case ErrorCode::NoBoneAdjacency: return "NoBoneAdjacency";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::ZeroPseudoArea: return "ZeroPseudoArea";
    case ErrorCode::EmptyPatch: return "EmptyPatch";
    case ErrorCode::NoTibialCartilage: return "NoTibialCartilage";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::MissingInputs: return "MissingInputs";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace cmt
