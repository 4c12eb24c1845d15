#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vfseg/random.hpp"
#include "vfseg/volume.hpp"
#include "vfseg/volume_io.hpp"

namespace vfseg {

enum class ShapeKind { Ellipsoid, Box, Tube };
enum class BackgroundTexture { Constant, SmoothNoise };

std::string_view to_string(ShapeKind kind) noexcept;
ShapeKind shape_kind_from_string(std::string_view name);

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

struct PhantomSpec {
  Shape3 shape{32, 64, 64};
  Spacing spacing{1.0, 1.0, 1.0};
  int num_shapes_min = 6;
  int num_shapes_max = 16;
  /// Label k (1-based) marks voxels inside shapes of kinds[k-1].
  std::vector<ShapeKind> kinds{ShapeKind::Ellipsoid, ShapeKind::Box, ShapeKind::Tube};
  /// One interval per entry of `kinds`.
  std::vector<Interval> intensity{{0.40, 0.80}, {0.80, 1.00}, {0.55, 0.90}};
  BackgroundTexture background = BackgroundTexture::SmoothNoise;
  Interval background_range{0.10, 0.45};
  double correlation_length = 8.0;  // voxels, smooth-noise lattice spacing
  double shape_texture = 0.10;      // amplitude of fine value-noise inside shapes
  /// Largest ellipsoid semi-axis as a fraction of the grid extent; box
  /// half-sizes go up to two thirds of that.
  double size_fraction = 0.25;
  uint64_t seed = 0;

  void validate() const;
  int32_t num_label_classes() const noexcept { return static_cast<int32_t>(kinds.size()) + 1; }
};

/// Geometry of one placed shape, in voxel coordinates. For Tube, `axis` is the
/// long axis and `radii[0]` the tube radius; the tube spans the whole grid.
struct ShapeInstance {
  ShapeKind kind = ShapeKind::Ellipsoid;
  std::array<double, 3> center{};
  std::array<double, 3> radii{};
  int axis = 0;
  double intensity = 0.5;
};

struct Phantom {
  Volume volume;
  LabelVolume labels;
  std::vector<ShapeInstance> shapes;
};

bool inside(const ShapeInstance& s, double z, double y, double x) noexcept;

/// Trilinearly interpolated lattice noise in [0, 1].
std::vector<float> value_noise(const Shape3& shape, double correlation_length, Rng& rng);

std::vector<ShapeInstance> sample_shapes(const PhantomSpec& spec, Rng& rng);

/// Paints `shapes` in order (later shapes overwrite earlier ones) over the
/// spec's background; labels follow the index of each shape's kind in spec.kinds.
Phantom render_phantom(const PhantomSpec& spec, const std::vector<ShapeInstance>& shapes, Rng& rng);

Phantom generate_phantom(const PhantomSpec& spec, Rng& rng);

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  std::filesystem::path label_path;  // empty for unlabeled corpora
};

using Manifest = std::vector<ManifestEntry>;

/// Writes `n` phantoms (and their label maps when `with_labels`) into out_dir
/// plus `manifest.tsv`. Phantom i is generated from derive_seed(spec.seed, i).
Manifest generate_corpus(const PhantomSpec& spec, int n, const std::filesystem::path& out_dir,
                         VolumeFormat format = VolumeFormat::Nifti, bool with_labels = true);

/// Manifest lines are `id<TAB>path` with an optional third `label_path` column.
/// Relative paths resolve against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& manifest_path);

}  // namespace vfseg
