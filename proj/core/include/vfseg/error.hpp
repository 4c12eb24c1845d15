#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vfseg {

enum class ErrorCode {
  FileMissing,
  MalformedHeader,
  NonPositiveSpacing,
  IoFailure,
  DegenerateWindow,
  InvalidSpec,
  VolumeTooSmall,
  InvalidParams,
  ShapeMismatch,
  SameScanViolation,
  CorpusTooSmall,
  LabelOutOfRange,
  ScaleMismatch,
  InvalidConfig,
  ShapeIncompatible,
  DivergenceDetected,
  ClassMismatch,
  ArchitectureMismatch,
  EmptyCorpus,
  WindowLargerThanVolume,
  SpacingMismatch,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure surfaced by the library carries one of the codes above so
// callers (and tests) can branch on the kind rather than the message text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vfseg
