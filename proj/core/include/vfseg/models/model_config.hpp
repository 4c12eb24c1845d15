#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace vfseg {

enum class Architecture { PctNet, UNet3d };

std::string_view to_string(Architecture arch) noexcept;
Architecture architecture_from_string(std::string_view name);

struct ModelConfig {
  int64_t in_channels = 1;
  int64_t num_classes = 5;
  std::array<int64_t, 5> level_channels{24, 48, 128, 256, 512};
  std::array<int64_t, 3> window_size{4, 4, 4};
  std::array<int64_t, 3> shift_size{2, 2, 2};
  std::array<int64_t, 3> num_heads{4, 8, 16};  // pyramid levels 3, 4, 5
  double mlp_ratio = 4.0;
  double dropout_rate = 0.1;
  Architecture arch = Architecture::PctNet;

  void validate() const;

  /// Desk-scale widths (8, 16, 32, 64, 128) with the default attention layout.
  static ModelConfig reduced(Architecture arch = Architecture::PctNet, int64_t num_classes = 5);
};

/// Per-axis total stride of each of the five levels relative to the input:
/// level 1 is full resolution, level 2 halves H and W only, and every later
/// transition halves all three axes.
constexpr std::array<std::array<int64_t, 3>, 5> kLevelStrides{{
    {1, 1, 1},
    {1, 2, 2},
    {2, 4, 4},
    {4, 8, 8},
    {8, 16, 16},
}};

}  // namespace vfseg
