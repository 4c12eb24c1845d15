#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vfseg/volume.hpp"

namespace vfseg {

/// 2|A ∩ B| / (|A| + |B|) over the binary masks of class `c`; 1 when both are empty.
double dice_coefficient(const LabelVolume& pred, const LabelVolume& gt, int32_t c);

/// Foreground voxels with at least one 6-connected background neighbour; the
/// volume border counts as background.
std::vector<uint8_t> surface_mask(const std::vector<uint8_t>& mask, const Shape3& shape);

/// Squared Euclidean distance (mm²) from every voxel to the nearest set voxel,
/// computed exactly with separable lower-envelope passes. Infinity when the
/// set is empty.
std::vector<double> squared_distance_transform(const std::vector<uint8_t>& set, const Shape3& shape,
                                               const Spacing& spacing);

/// Average symmetric surface distance in mm; nullopt when either surface is empty.
std::optional<double> assd(const LabelVolume& pred, const LabelVolume& gt, int32_t c, const Spacing& spacing);

struct ClassMetrics {
  double dice = 0.0;
  std::optional<double> assd;
};

struct CaseMetrics {
  std::string id;
  std::vector<ClassMetrics> classes;  // foreground classes 1..C-1
};

struct MetricsReport {
  int32_t num_classes = 2;
  std::vector<CaseMetrics> cases;  // sorted by id

  double mean_dice(size_t case_index) const;
  std::optional<double> mean_assd(size_t case_index) const;

  struct Summary {
    double mean = 0.0;
    double std = 0.0;
    int count = 0;
    int undefined = 0;  // sentinel entries excluded from the statistics
  };
  Summary dice_summary(int32_t c) const;
  Summary assd_summary(int32_t c) const;
  Summary mean_dice_summary() const;
  Summary mean_assd_summary() const;

  /// Tab-separated: case, class, dice, assd ("nan" for the sentinel).
  std::string to_tsv() const;
  static MetricsReport from_tsv(const std::string& text);

  /// Per-class mean±std table with Dice (%) and ASSD (mm) columns.
  std::string to_text_table() const;

  void save(const std::filesystem::path& tsv_path) const;
};

CaseMetrics evaluate_case(const std::string& id, const LabelVolume& pred, const LabelVolume& gt);

}  // namespace vfseg
