#include "vfseg/plot.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "vfseg/error.hpp"

namespace fs = std::filesystem;

namespace vfseg {

namespace {

using Glyph = std::array<uint8_t, 7>;

const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> f{
      {' ', {0, 0, 0, 0, 0, 0, 0}},
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
      {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
      {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
      {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0, 0, 0, 0, 0, 0x0C, 0x0C}},
      {',', {0, 0, 0, 0, 0x0C, 0x04, 0x08}},
      {'-', {0, 0, 0, 0x1F, 0, 0, 0}},
      {'+', {0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0}},
      {':', {0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0}},
      {'=', {0, 0, 0x1F, 0, 0x1F, 0, 0}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'/', {0, 0x01, 0x02, 0x04, 0x08, 0x10, 0}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
      {'_', {0, 0, 0, 0, 0, 0, 0x1F}},
  };
  return f;
}

constexpr int kGlyphAdvance = 6;

std::string tick_label(double v) {
  char buf[32];
  const double a = std::abs(v);
  if (a != 0.0 && (a >= 1e5 || a < 1e-3)) {
    std::snprintf(buf, sizeof buf, "%.1e", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.4g", v);
  }
  return buf;
}

}  // namespace

Rgb palette(size_t i) {
  static constexpr std::array<Rgb, 8> colours{{{31, 119, 180},
                                               {255, 127, 14},
                                               {44, 160, 44},
                                               {214, 39, 40},
                                               {148, 103, 189},
                                               {140, 86, 75},
                                               {227, 119, 194},
                                               {127, 127, 127}}};
  return colours[i % colours.size()];
}

Rgb colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 5> anchors{{{68, 1, 84},
                                                                  {59, 82, 139},
                                                                  {33, 145, 140},
                                                                  {94, 201, 98},
                                                                  {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * (anchors.size() - 1);
  const size_t i = std::min<size_t>(static_cast<size_t>(t), anchors.size() - 2);
  const double f = t - static_cast<double>(i);
  auto mix = [&](int k) {
    return static_cast<uint8_t>(std::lround(anchors[i][k] * (1.0 - f) + anchors[i + 1][k] * f));
  };
  return {mix(0), mix(1), mix(2)};
}

Canvas::Canvas(int width, int height, Rgb background) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidParams, "canvas must be non-empty");
  rgb_.resize(static_cast<size_t>(width) * height * 3);
  for (size_t i = 0; i < rgb_.size(); i += 3) {
    rgb_[i] = background.r;
    rgb_[i + 1] = background.g;
    rgb_[i + 2] = background.b;
  }
}

Rgb Canvas::at(int x, int y) const {
  const size_t o = (static_cast<size_t>(y) * width_ + x) * 3;
  return {rgb_[o], rgb_[o + 1], rgb_[o + 2]};
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const size_t o = (static_cast<size_t>(y) * width_ + x) * 3;
  rgb_[o] = c.r;
  rgb_[o + 1] = c.g;
  rgb_[o + 2] = c.b;
}

void Canvas::fill_rect(int x0, int y0, int w, int h, Rgb c) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) set(x, y, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  const auto& f = font();
  for (char ch : s) {
    const char key = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    const auto it = f.find(key);
    if (it != f.end()) {
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if (it->second[row] & (0x10 >> col)) fill_rect(x + col * scale, y + row * scale, scale, scale, c);
    }
    x += kGlyphAdvance * scale;
  }
}

int Canvas::text_width(const std::string& s, int scale) {
  return static_cast<int>(s.size()) * kGlyphAdvance * scale;
}

void Canvas::image_grey(const float* data, int w, int h, int x0, int y0, double lo, double hi, int zoom) {
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double t = std::clamp((data[y * w + x] - lo) / span, 0.0, 1.0);
      const auto g = static_cast<uint8_t>(std::lround(255.0 * t));
      fill_rect(x0 + x * zoom, y0 + y * zoom, zoom, zoom, {g, g, g});
    }
}

void Canvas::image_color(const float* data, int w, int h, int x0, int y0, double lo, double hi, int zoom) {
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      fill_rect(x0 + x * zoom, y0 + y * zoom, zoom, zoom, colormap((data[y * w + x] - lo) / span));
}

void Canvas::save_png(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (fp == nullptr) throw Error(ErrorCode::IoFailure, "cannot open " + tmp.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fs::remove(tmp);
    throw Error(ErrorCode::IoFailure, "png encoding failed for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width_, height_, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height_; ++y) {
    png_write_row(png, const_cast<png_bytep>(rgb_.data() + static_cast<size_t>(y) * width_ * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw Error(ErrorCode::IoFailure, "cannot close " + tmp.string());
  fs::rename(tmp, path);
}

// ------------------------------------------------------------------ charts

namespace {

struct Frame {
  int left, top, width, height;
  double x_lo, x_hi, y_lo, y_hi;
  bool log_y;

  int px(double x) const {
    return left + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (width - 1)));
  }
  int py(double y) const {
    const double v = log_y ? std::log10(std::max(y, 1e-12)) : y;
    return top + height - 1 - static_cast<int>(std::lround((v - y_lo) / (y_hi - y_lo) * (height - 1)));
  }
};

void draw_frame(Canvas& c, int x0, int y0, int w, int h, Frame& f, const Axes& axes) {
  f.left = x0 + 62;
  f.top = y0 + 22;
  f.width = w - 62 - 12;
  f.height = h - 22 - 34;
  c.text(x0 + (w - Canvas::text_width(axes.title, 2)) / 2, y0 + 2, axes.title, kBlack, 2);
  c.line(f.left, f.top + f.height, f.left + f.width, f.top + f.height, kBlack);
  c.line(f.left, f.top, f.left, f.top + f.height, kBlack);
  for (int i = 0; i <= 4; ++i) {
    const double v = f.y_lo + (f.y_hi - f.y_lo) * i / 4.0;
    const int y = f.top + f.height - 1 - static_cast<int>(std::lround(i / 4.0 * (f.height - 1)));
    c.line(f.left - 4, y, f.left, y, kBlack);
    for (int x = f.left + 1; x < f.left + f.width; x += 4) c.set(x, y, {225, 225, 225});
    const std::string label = tick_label(f.log_y ? std::pow(10.0, v) : v);
    c.text(f.left - 6 - Canvas::text_width(label), y - 3, label, kBlack);
  }
  c.text(x0 + (w - Canvas::text_width(axes.x_label)) / 2, y0 + h - 10, axes.x_label, kBlack);
  c.text(x0 + 2, y0 + 12, axes.y_label, kGrey);
}

}  // namespace

void draw_line_chart(Canvas& canvas, int x0, int y0, int w, int h, const std::vector<Series>& series,
                     const Axes& axes) {
  Frame f{};
  f.log_y = axes.log_y;
  f.x_lo = f.y_lo = std::numeric_limits<double>::infinity();
  f.x_hi = f.y_hi = -std::numeric_limits<double>::infinity();
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      const double y = f.log_y ? std::log10(std::max(s.y[i], 1e-12)) : s.y[i];
      f.x_lo = std::min(f.x_lo, s.x[i]);
      f.x_hi = std::max(f.x_hi, s.x[i]);
      f.y_lo = std::min(f.y_lo, y);
      f.y_hi = std::max(f.y_hi, y);
    }
  }
  if (!std::isfinite(f.x_lo)) f.x_lo = 0, f.x_hi = 1, f.y_lo = 0, f.y_hi = 1;
  if (f.x_hi <= f.x_lo) f.x_hi = f.x_lo + 1;
  if (f.y_hi <= f.y_lo) f.y_hi = f.y_lo + 1;
  draw_frame(canvas, x0, y0, w, h, f, axes);
  for (int i = 0; i <= 4; ++i) {
    const double v = f.x_lo + (f.x_hi - f.x_lo) * i / 4.0;
    const int x = f.px(v);
    canvas.line(x, f.top + f.height, x, f.top + f.height + 4, kBlack);
    const std::string label = tick_label(v);
    canvas.text(x - Canvas::text_width(label) / 2, f.top + f.height + 7, label, kBlack);
  }
  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const Rgb col = palette(k);
    bool have_prev = false;
    int px0 = 0, py0 = 0;
    for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) {
        have_prev = false;
        continue;
      }
      const int px1 = f.px(s.x[i]), py1 = f.py(s.y[i]);
      if (have_prev) canvas.line(px0, py0, px1, py1, col);
      if (s.x.size() <= 40) canvas.fill_rect(px1 - 1, py1 - 1, 3, 3, col);
      px0 = px1, py0 = py1, have_prev = true;
    }
    const int ly = f.top + 4 + static_cast<int>(k) * 10;
    const int lx = f.left + f.width - Canvas::text_width(s.label) - 16;
    canvas.fill_rect(lx, ly + 2, 10, 3, col);
    canvas.text(lx + 13, ly, s.label, col);
  }
}

void draw_bar_chart(Canvas& canvas, int x0, int y0, int w, int h, const std::vector<std::string>& labels,
                    const std::vector<double>& values, const std::vector<double>& errors, const Axes& axes) {
  if (labels.size() != values.size() || (!errors.empty() && errors.size() != values.size())) {
    throw Error(ErrorCode::InvalidParams, "bar chart labels/values/errors differ in length");
  }
  Frame f{};
  f.x_lo = 0.0;
  f.x_hi = std::max<double>(1.0, static_cast<double>(values.size()));
  f.y_lo = 0.0;
  f.y_hi = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    const double top = values[i] + (errors.empty() ? 0.0 : errors[i]);
    if (std::isfinite(top)) f.y_hi = std::max(f.y_hi, top);
  }
  f.y_hi = f.y_hi > 0.0 ? f.y_hi * 1.1 : 1.0;
  draw_frame(canvas, x0, y0, w, h, f, axes);
  const double slot = static_cast<double>(f.width) / f.x_hi;
  for (size_t i = 0; i < values.size(); ++i) {
    const int cx = f.left + static_cast<int>(std::lround(slot * (i + 0.5)));
    const int half = std::max(2, static_cast<int>(slot * 0.3));
    if (std::isfinite(values[i])) {
      const int ytop = f.py(values[i]);
      canvas.fill_rect(cx - half, ytop, 2 * half, f.top + f.height - ytop, palette(i));
      if (!errors.empty() && std::isfinite(errors[i]) && errors[i] > 0.0) {
        const int ya = f.py(values[i] + errors[i]), yb = f.py(std::max(0.0, values[i] - errors[i]));
        canvas.line(cx, ya, cx, yb, kBlack);
        canvas.line(cx - 3, ya, cx + 3, ya, kBlack);
        canvas.line(cx - 3, yb, cx + 3, yb, kBlack);
      }
      const std::string v = tick_label(values[i]);
      canvas.text(cx - Canvas::text_width(v) / 2, ytop - 10, v, kBlack);
    }
    canvas.text(cx - Canvas::text_width(labels[i]) / 2, f.top + f.height + 7, labels[i], kBlack);
  }
}

void save_line_chart(const fs::path& path, const std::vector<Series>& series, const Axes& axes) {
  Canvas c(640, 400);
  draw_line_chart(c, 0, 0, 640, 400, series, axes);
  c.save_png(path);
}

void save_bar_chart(const fs::path& path, const std::vector<std::string>& labels, const std::vector<double>& values,
                    const std::vector<double>& errors, const Axes& axes) {
  Canvas c(640, 400);
  draw_bar_chart(c, 0, 0, 640, 400, labels, values, errors, axes);
  c.save_png(path);
}

}  // namespace vfseg
