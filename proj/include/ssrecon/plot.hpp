#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "png_io.hpp"

// Minimal line-plot rasterizer for training curves: white background, axes,
// colored polylines, 5x7 digit tick labels. Enough to eyeball a loss curve
// without pulling in a plotting stack.

namespace ssr::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::array<double, 3> color{0.8, 0.2, 0.2};
};

namespace detail {

// 5x7 bitmap glyphs for digits, minus, dot, 'e'
inline const char* glyph(char c) {
  switch (c) {
    case '0': return "01110100011001110101110011000101110";
    case '1': return "00100011000010000100001000010001110";
    case '2': return "01110100010000100110010001000011111";
    case '3': return "01110100010000101110000011000101110";
    case '4': return "00010001100101010010111110001000010";
    case '5': return "11111100001111000001000011000101110";
    case '6': return "01110100001000011110100011000101110";
    case '7': return "11111000010001000100010001000010000";
    case '8': return "01110100011000101110100011000101110";
    case '9': return "01110100011000101111000010000101110";
    case '-': return "00000000000000011111000000000000000";
    case '.': return "00000000000000000000000000110001100";
    case 'e': return "00000000000111010001111111000001110";
    default: return nullptr;
  }
}

inline void draw_text(Array& img, int row, int col, const std::string& text,
                      const std::array<double, 3>& color) {
  int h = img.dim(0), w = img.dim(1);
  for (size_t k = 0; k < text.size(); ++k) {
    const char* g = glyph(text[k]);
    if (!g) continue;
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 5; ++x) {
        if (g[y * 5 + x] != '1') continue;
        int r = row + y, c = col + static_cast<int>(k) * 6 + x;
        if (r >= 0 && r < h && c >= 0 && c < w)
          for (int ch = 0; ch < 3; ++ch) img.at3(r, c, ch) = color[static_cast<size_t>(ch)];
      }
  }
}

inline void draw_line(Array& img, double r0, double c0, double r1, double c1,
                      const std::array<double, 3>& color) {
  int h = img.dim(0), w = img.dim(1);
  int steps = static_cast<int>(std::max(std::fabs(r1 - r0), std::fabs(c1 - c0))) + 1;
  for (int s = 0; s <= steps; ++s) {
    double t = static_cast<double>(s) / steps;
    int r = static_cast<int>(std::lround(r0 + t * (r1 - r0)));
    int c = static_cast<int>(std::lround(c0 + t * (c1 - c0)));
    if (r >= 0 && r < h && c >= 0 && c < w)
      for (int ch = 0; ch < 3; ++ch) img.at3(r, c, ch) = color[static_cast<size_t>(ch)];
  }
}

inline std::string fmt_tick(double v) {
  char buf[32];
  if (v != 0 && (std::fabs(v) >= 1e4 || std::fabs(v) < 1e-2))
    std::snprintf(buf, sizeof(buf), "%.1e", v);
  else
    std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace detail

// Log-scale is applied to y when requested and every value is positive.
inline void render_plot(const std::string& path, const std::vector<Series>& series, int width = 900,
                        int height = 600, bool log_y = false) {
  SSR_CHECK(!series.empty(), "render_plot: no series");
  Array img({height, width, 3}, 1.0);
  const int ml = 70, mr = 15, mt = 15, mb = 40;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  bool can_log = true;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
      can_log = can_log && s.y[i] > 0;
    }
  bool uselog = log_y && can_log;
  auto ty = [&](double y) { return uselog ? std::log10(y) : y; };
  double tymin = ty(ymin), tymax = ty(ymax);
  if (xmax <= xmin) xmax = xmin + 1;
  if (tymax <= tymin) tymax = tymin + 1;

  std::array<double, 3> black{0, 0, 0};
  detail::draw_line(img, height - mb, ml, height - mb, width - mr, black);
  detail::draw_line(img, mt, ml, height - mb, ml, black);

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
  auto py = [&](double y) {
    return (height - mb) - (ty(y) - tymin) / (tymax - tymin) * (height - mt - mb);
  };

  for (int tick = 0; tick <= 4; ++tick) {
    double fx = xmin + (xmax - xmin) * tick / 4.0;
    detail::draw_text(img, height - mb + 6, static_cast<int>(px(fx)) - 12, detail::fmt_tick(fx),
                      black);
    double fy = uselog ? std::pow(10.0, tymin + (tymax - tymin) * tick / 4.0)
                       : ymin + (ymax - ymin) * tick / 4.0;
    detail::draw_text(img, static_cast<int>(py(fy)) - 3, 4, detail::fmt_tick(fy), black);
  }

  const std::array<std::array<double, 3>, 6> palette = {{{0.85, 0.2, 0.2},
                                                         {0.2, 0.4, 0.85},
                                                         {0.15, 0.6, 0.25},
                                                         {0.8, 0.55, 0.1},
                                                         {0.55, 0.25, 0.7},
                                                         {0.1, 0.6, 0.6}}};
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    auto color = palette[si % palette.size()];
    for (size_t i = 0; i + 1 < s.x.size(); ++i)
      detail::draw_line(img, py(s.y[i]), px(s.x[i]), py(s.y[i + 1]), px(s.x[i + 1]), color);
    detail::draw_text(img, mt + 10 + static_cast<int>(si) * 10, width - mr - 90,
                      std::to_string(si) + " " + s.name.substr(0, 10), color);
  }
  render::write_png_rgb(path, img);
}

}  // namespace ssr::plot
