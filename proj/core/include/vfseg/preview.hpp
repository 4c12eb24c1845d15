#pragma once

#include <filesystem>
#include <vector>

#include "vfseg/fusion.hpp"

namespace vfseg {

/// Grid of mid-axial slices, one row per K: background, foreground,
/// coefficient map (colour) and fused image. Both sources are cropped to
/// `base.subvolume_shape`; each row regenerates the coefficient map from the
/// same seed with its own K.
void render_fusion_preview(const Volume& background, const Volume& foreground, const FusionParams& base,
                           const std::vector<int>& ks, uint64_t seed, const std::filesystem::path& png_path);

}  // namespace vfseg
