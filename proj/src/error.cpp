#include "metric_align/error.hpp"

namespace metric_align {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kNonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kNonPositiveScale: return "NonPositiveScale";
    case ErrorCode::kEmptyRender: return "EmptyRender";
    case ErrorCode::kNoCovisibleSurface: return "NoCovisibleSurface";
    case ErrorCode::kAllEmpty: return "AllEmpty";
    case ErrorCode::kTooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::kNoConsensus: return "NoConsensus";
    case ErrorCode::kInsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::kNoHypothesis: return "NoHypothesis";
    case ErrorCode::kEmptyModel: return "EmptyModel";
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kPlacementFailed: return "PlacementFailed";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kFormatError: return "FormatError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

}  // namespace metric_align
