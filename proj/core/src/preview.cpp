#include "vfseg/preview.hpp"

#include <algorithm>

#include "vfseg/plot.hpp"
#include "vfseg/random.hpp"

namespace vfseg {

namespace {

std::vector<float> mid_slice(const Volume& v) {
  const int64_t z = v.shape.d / 2;
  const auto plane = static_cast<size_t>(v.shape.h * v.shape.w);
  const auto begin = v.voxels.begin() + static_cast<std::ptrdiff_t>(z * plane);
  return {begin, begin + static_cast<std::ptrdiff_t>(plane)};
}

}  // namespace

void render_fusion_preview(const Volume& background, const Volume& foreground, const FusionParams& base,
                           const std::vector<int>& ks, uint64_t seed, const std::filesystem::path& png_path) {
  const Shape3 sub = base.subvolume_shape;
  Rng crop_rng(derive_seed(seed, 0));
  const Volume bg = crop_subvolume(background, sub, crop_rng, true).volume;
  const Volume fg = crop_subvolume(foreground, sub, crop_rng, true).volume;

  const int w = static_cast<int>(sub.w), h = static_cast<int>(sub.h);
  const int zoom = std::max(1, 160 / std::max(w, h));
  const int cell_w = w * zoom + 8, cell_h = h * zoom + 8;
  const int label_w = 48, header_h = 18;
  Canvas canvas(label_w + 4 * cell_w, header_h + static_cast<int>(ks.size()) * cell_h);
  const char* headers[4] = {"BACKGROUND", "FOREGROUND", "ALPHA", "FUSED"};
  for (int col = 0; col < 4; ++col) canvas.text(label_w + col * cell_w + 4, 4, headers[col], kBlack);

  const auto bg_slice = mid_slice(bg), fg_slice = mid_slice(fg);
  for (size_t row = 0; row < ks.size(); ++row) {
    FusionParams p = base;
    p.K = ks[row];
    Rng rng(derive_seed(seed, 1));
    const CoefficientMap cmap = generate_coefficient_map(p, rng);
    FusedSample s = fuse(bg, fg, cmap, true);
    Volume alpha = bg;
    for (size_t i = 0; i < alpha.voxels.size(); ++i) alpha.voxels[i] = static_cast<float>(cmap.alpha(i));
    const auto alpha_slice = mid_slice(alpha), x_slice = mid_slice(s.X);

    const int y0 = header_h + static_cast<int>(row) * cell_h + 4;
    canvas.text(4, y0 + cell_h / 2 - 4, "K=" + std::to_string(p.K), kBlack);
    canvas.image_grey(bg_slice.data(), w, h, label_w + 4, y0, 0.0, 1.0, zoom);
    canvas.image_grey(fg_slice.data(), w, h, label_w + cell_w + 4, y0, 0.0, 1.0, zoom);
    canvas.image_color(alpha_slice.data(), w, h, label_w + 2 * cell_w + 4, y0, 0.0, 1.0, zoom);
    canvas.image_grey(x_slice.data(), w, h, label_w + 3 * cell_w + 4, y0, 0.0, 1.0, zoom);
  }
  canvas.save_png(png_path);
}

}  // namespace vfseg
