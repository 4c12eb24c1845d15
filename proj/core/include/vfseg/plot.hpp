#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vfseg {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrey{160, 160, 160};

/// Categorical colours (cycled).
Rgb palette(size_t i);
/// Perceptually ordered map for t in [0, 1].
Rgb colormap(double t);

/// RGB raster with a built-in 5x7 bitmap font (upper-case, digits, basic punctuation).
class Canvas {
 public:
  Canvas(int width, int height, Rgb background = kWhite);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  Rgb at(int x, int y) const;

  void set(int x, int y, Rgb c);
  void fill_rect(int x0, int y0, int w, int h, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
  static int text_width(const std::string& s, int scale = 1);

  /// Draws a row-major w x h scalar image, mapping [lo, hi] to grey, scaled by `zoom`.
  void image_grey(const float* data, int w, int h, int x0, int y0, double lo, double hi, int zoom = 1);
  /// Same, through `colormap`.
  void image_color(const float* data, int w, int h, int x0, int y0, double lo, double hi, int zoom = 1);

  void save_png(const std::filesystem::path& path) const;

 private:
  int width_, height_;
  std::vector<uint8_t> rgb_;
};

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct Axes {
  std::string title, x_label, y_label;
  bool log_y = false;
};

/// Line chart of one or more series into the given rectangle of `canvas`.
void draw_line_chart(Canvas& canvas, int x0, int y0, int w, int h, const std::vector<Series>& series,
                     const Axes& axes);

/// Bar chart with optional error bars (pass empty `errors` to omit).
void draw_bar_chart(Canvas& canvas, int x0, int y0, int w, int h, const std::vector<std::string>& labels,
                    const std::vector<double>& values, const std::vector<double>& errors, const Axes& axes);

void save_line_chart(const std::filesystem::path& path, const std::vector<Series>& series, const Axes& axes);
void save_bar_chart(const std::filesystem::path& path, const std::vector<std::string>& labels,
                    const std::vector<double>& values, const std::vector<double>& errors, const Axes& axes);

}  // namespace vfseg
