#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vfseg {

/// Grid extent in (depth, height, width) order. Every array in the library is
/// stored C-contiguous in this order, so the flat index is (d*H + h)*W + w.
struct Shape3 {
  int64_t d = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t numel() const noexcept { return d * h * w; }
  int64_t index(int64_t z, int64_t y, int64_t x) const noexcept { return (z * h + y) * w + x; }
  int64_t operator[](int axis) const noexcept { return axis == 0 ? d : (axis == 1 ? h : w); }
  int64_t& operator[](int axis) noexcept { return axis == 0 ? d : (axis == 1 ? h : w); }
  bool operator==(const Shape3&) const = default;
  std::string str() const;
};

/// Physical voxel size in mm, (depth, height, width) order.
using Spacing = std::array<double, 3>;

struct Volume {
  Shape3 shape;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string id;
  std::vector<float> voxels;

  Volume() = default;
  Volume(Shape3 s, Spacing sp = {1.0, 1.0, 1.0}, std::string ident = {}, float fill = 0.0f)
      : shape(s), spacing(sp), id(std::move(ident)), voxels(static_cast<size_t>(s.numel()), fill) {}

  float& at(int64_t z, int64_t y, int64_t x) { return voxels[static_cast<size_t>(shape.index(z, y, x))]; }
  float at(int64_t z, int64_t y, int64_t x) const { return voxels[static_cast<size_t>(shape.index(z, y, x))]; }
  std::span<const float> view() const noexcept { return voxels; }

  // Throws if any voxel is non-finite or any spacing component is not positive.
  void validate() const;
  bool is_normalized() const noexcept;
};

struct LabelVolume {
  Shape3 shape;
  Spacing spacing{1.0, 1.0, 1.0};
  int32_t num_classes = 1;
  std::vector<int32_t> labels;

  LabelVolume() = default;
  LabelVolume(Shape3 s, int32_t classes, Spacing sp = {1.0, 1.0, 1.0})
      : shape(s), spacing(sp), num_classes(classes), labels(static_cast<size_t>(s.numel()), 0) {}

  int32_t& at(int64_t z, int64_t y, int64_t x) { return labels[static_cast<size_t>(shape.index(z, y, x))]; }
  int32_t at(int64_t z, int64_t y, int64_t x) const { return labels[static_cast<size_t>(shape.index(z, y, x))]; }

  // Throws LabelOutOfRange when a label falls outside [0, num_classes).
  void validate() const;
};

}  // namespace vfseg
