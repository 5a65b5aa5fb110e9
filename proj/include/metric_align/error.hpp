#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace metric_align {

/// Failure kinds raised by the library. The CLI maps these onto exit codes.
enum class ErrorCode {
  kInvalidArgument,
  kNonPositiveDepth,
  kDegenerateInput,
  kNonPositiveScale,
  kEmptyRender,
  kNoCovisibleSurface,
  kAllEmpty,
  kTooFewCorrespondences,
  kNoConsensus,
  kInsufficientOverlap,
  kNoHypothesis,
  kEmptyModel,
  kBehindCamera,
  kPlacementFailed,
  kIoFailure,
  kFormatError,
};

std::string_view error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace metric_align
