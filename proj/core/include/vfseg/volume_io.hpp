#pragma once

#include <filesystem>
#include <utility>

#include "vfseg/volume.hpp"

namespace vfseg {

enum class VolumeFormat {
  Nifti,    // NIfTI-1 single file, .nii or .nii.gz
  RawMeta,  // <name>.raw little-endian payload + <name>.meta key=value sidecar
};

enum class ScalarType { F32, U8, I16 };

/// Picks the format from the extension: .nii/.nii.gz -> Nifti, .raw/.meta -> RawMeta.
VolumeFormat format_from_path(const std::filesystem::path& path);

Volume load_volume(const std::filesystem::path& path, VolumeFormat format);
Volume load_volume(const std::filesystem::path& path);

/// Labels are read as integers; num_classes comes from the sidecar / header
/// description when present, otherwise max(label)+1.
LabelVolume load_labels(const std::filesystem::path& path, VolumeFormat format);
LabelVolume load_labels(const std::filesystem::path& path);

void save_volume(const Volume& v, const std::filesystem::path& path, VolumeFormat format);
void save_volume(const Volume& v, const std::filesystem::path& path);
void save_labels(const LabelVolume& v, const std::filesystem::path& path, VolumeFormat format);
void save_labels(const LabelVolume& v, const std::filesystem::path& path);

struct IntensityWindow {
  double low = -1000.0;
  double high = 1000.0;
};

/// clip((x - low) / (high - low), 0, 1) voxelwise.
Volume normalize_intensity(const Volume& v, IntensityWindow window = {});

}  // namespace vfseg
