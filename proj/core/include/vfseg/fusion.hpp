#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vfseg/random.hpp"
#include "vfseg/volume.hpp"

namespace vfseg {

struct IntRange {
  int64_t lo = 1;
  int64_t hi = 1;
};

struct FusionParams {
  int K = 4;  // number of non-zero fusion coefficients; classes are 0..K
  int m0 = 10;
  int m1 = 40;
  IntRange patch_depth{8, 40};
  IntRange patch_height{8, 80};
  IntRange patch_width{8, 80};
  Shape3 subvolume_shape{64, 128, 128};
  double tau = -1.0;  // oracle contrast threshold; negative means 1/(4K)
  bool allow_same_scan = false;
  bool pad_undersized = false;

  void validate() const;
  int num_classes() const noexcept { return K + 1; }
  double oracle_threshold() const noexcept { return tau > 0.0 ? tau : 1.0 / (4.0 * K); }

  /// Desk-scale preset: patch ranges scaled from the full-size defaults by the
  /// ratio of `sub` to 64x128x128 (at least 2 voxels per side).
  static FusionParams scaled_to(Shape3 sub, int K = 4);
};

/// Per-voxel class c in [0, K]; the fusion coefficient is c / K.
struct CoefficientMap {
  Shape3 shape;
  int K = 1;
  std::vector<int32_t> classes;

  double alpha(size_t i) const noexcept { return static_cast<double>(classes[i]) / K; }
};

struct Patch {
  std::array<int64_t, 3> origin{};
  std::array<int64_t, 3> size{};
  int32_t cls = 1;
};

struct FusedSample {
  Volume X;
  LabelVolume Y;
  std::string background_id;
  std::string foreground_id;
  uint64_t seed = 0;
};

struct Crop {
  Volume volume;
  std::array<int64_t, 3> origin{};  // in the (possibly padded) source grid
};

/// Uniformly placed crop of exactly `shape`. Undersized axes are zero-padded
/// symmetrically when `pad_undersized`, otherwise VolumeTooSmall.
Crop crop_subvolume(const Volume& v, Shape3 shape, Rng& rng, bool pad_undersized = false);

/// Deterministic crop at a fixed origin (used for paired image/label crops).
Volume crop_at(const Volume& v, Shape3 shape, std::array<int64_t, 3> origin);
LabelVolume crop_at(const LabelVolume& v, Shape3 shape, std::array<int64_t, 3> origin);

/// Draws M ~ U{m0..m1} box patches and paints them sequentially.
std::vector<Patch> sample_patches(const FusionParams& params, Rng& rng);
CoefficientMap paint_patches(Shape3 shape, int K, const std::vector<Patch>& patches);
CoefficientMap generate_coefficient_map(const FusionParams& params, Rng& rng);

/// X = (c/K) * I_f + (1 - c/K) * I_b voxelwise; Y = c.
FusedSample fuse(const Volume& background, const Volume& foreground, const CoefficientMap& cmap,
                 bool allow_same_scan = false);

/// Minimal in-memory corpus; the batch factory only needs id + voxels.
using Corpus = std::vector<Volume>;

/// B independent samples; sample j draws everything from derive_seed(seed, j).
std::vector<FusedSample> make_pretrain_batch(const Corpus& corpus, const FusionParams& params, int batch_size,
                                             uint64_t seed);
FusedSample make_pretrain_sample(const Corpus& corpus, const FusionParams& params, uint64_t seed);

inline constexpr int32_t kIndeterminate = -1;

/// Inverts the fusion pointwise wherever |I_f - I_b| > tau; other voxels get
/// kIndeterminate.
std::vector<int32_t> recover_labels_oracle(const Volume& X, const Volume& background, const Volume& foreground, int K,
                                           double tau);

}  // namespace vfseg
