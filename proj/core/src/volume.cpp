#include "vfseg/volume.hpp"

#include <cmath>

#include "vfseg/error.hpp"

namespace vfseg {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::FileMissing: return "FileMissing";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::NonPositiveSpacing: return "NonPositiveSpacing";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::DegenerateWindow: return "DegenerateWindow";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::VolumeTooSmall: return "VolumeTooSmall";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SameScanViolation: return "SameScanViolation";
    case ErrorCode::CorpusTooSmall: return "CorpusTooSmall";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::ScaleMismatch: return "ScaleMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ShapeIncompatible: return "ShapeIncompatible";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::ClassMismatch: return "ClassMismatch";
    case ErrorCode::ArchitectureMismatch: return "ArchitectureMismatch";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::WindowLargerThanVolume: return "WindowLargerThanVolume";
    case ErrorCode::SpacingMismatch: return "SpacingMismatch";
  }
  return "Unknown";
}

std::string Shape3::str() const {
  return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

void Volume::validate() const {
  if (static_cast<int64_t>(voxels.size()) != shape.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "voxel count does not match shape " + shape.str());
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw Error(ErrorCode::NonPositiveSpacing, "spacing components must be positive");
    }
  }
  for (float v : voxels) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidSpec, "volume '" + id + "' has a non-finite voxel");
  }
}

bool Volume::is_normalized() const noexcept {
  for (float v : voxels) {
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  }
  return true;
}

void LabelVolume::validate() const {
  if (static_cast<int64_t>(labels.size()) != shape.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "label count does not match shape " + shape.str());
  }
  for (int32_t l : labels) {
    if (l < 0 || l >= num_classes) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace vfseg
