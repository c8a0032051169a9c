#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "imageio.hpp"

namespace fbind {

namespace {

// 5x7 glyphs, one byte per column, bit 0 = top row.
struct Glyph {
  char ch;
  unsigned char col[5];
};

constexpr Glyph kFont[] = {
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00}},
    {'0', {0x3E, 0x51, 0x49, 0x45, 0x3E}},
    {'1', {0x00, 0x42, 0x7F, 0x40, 0x00}},
    {'2', {0x42, 0x61, 0x51, 0x49, 0x46}},
    {'3', {0x21, 0x41, 0x45, 0x4B, 0x31}},
    {'4', {0x18, 0x14, 0x12, 0x7F, 0x10}},
    {'5', {0x27, 0x45, 0x45, 0x45, 0x39}},
    {'6', {0x3C, 0x4A, 0x49, 0x49, 0x30}},
    {'7', {0x01, 0x71, 0x09, 0x05, 0x03}},
    {'8', {0x36, 0x49, 0x49, 0x49, 0x36}},
    {'9', {0x06, 0x49, 0x49, 0x29, 0x1E}},
    {'A', {0x7E, 0x11, 0x11, 0x11, 0x7E}},
    {'B', {0x7F, 0x49, 0x49, 0x49, 0x36}},
    {'C', {0x3E, 0x41, 0x41, 0x41, 0x22}},
    {'D', {0x7F, 0x41, 0x41, 0x22, 0x1C}},
    {'E', {0x7F, 0x49, 0x49, 0x49, 0x41}},
    {'F', {0x7F, 0x09, 0x09, 0x09, 0x01}},
    {'G', {0x3E, 0x41, 0x49, 0x49, 0x7A}},
    {'H', {0x7F, 0x08, 0x08, 0x08, 0x7F}},
    {'I', {0x00, 0x41, 0x7F, 0x41, 0x00}},
    {'J', {0x20, 0x40, 0x41, 0x3F, 0x01}},
    {'K', {0x7F, 0x08, 0x14, 0x22, 0x41}},
    {'L', {0x7F, 0x40, 0x40, 0x40, 0x40}},
    {'M', {0x7F, 0x02, 0x0C, 0x02, 0x7F}},
    {'N', {0x7F, 0x04, 0x08, 0x10, 0x7F}},
    {'O', {0x3E, 0x41, 0x41, 0x41, 0x3E}},
    {'P', {0x7F, 0x09, 0x09, 0x09, 0x06}},
    {'Q', {0x3E, 0x41, 0x51, 0x21, 0x5E}},
    {'R', {0x7F, 0x09, 0x19, 0x29, 0x46}},
    {'S', {0x46, 0x49, 0x49, 0x49, 0x31}},
    {'T', {0x01, 0x01, 0x7F, 0x01, 0x01}},
    {'U', {0x3F, 0x40, 0x40, 0x40, 0x3F}},
    {'V', {0x1F, 0x20, 0x40, 0x20, 0x1F}},
    {'W', {0x3F, 0x40, 0x38, 0x40, 0x3F}},
    {'X', {0x63, 0x14, 0x08, 0x14, 0x63}},
    {'Y', {0x07, 0x08, 0x70, 0x08, 0x07}},
    {'Z', {0x61, 0x51, 0x49, 0x45, 0x43}},
    {'.', {0x00, 0x60, 0x60, 0x00, 0x00}},
    {',', {0x00, 0x50, 0x30, 0x00, 0x00}},
    {'-', {0x08, 0x08, 0x08, 0x08, 0x08}},
    {'_', {0x40, 0x40, 0x40, 0x40, 0x40}},
    {'%', {0x23, 0x13, 0x08, 0x64, 0x62}},
    {'<', {0x08, 0x14, 0x22, 0x41, 0x00}},
    {'>', {0x00, 0x41, 0x22, 0x14, 0x08}},
    {'=', {0x14, 0x14, 0x14, 0x14, 0x14}},
    {'/', {0x20, 0x10, 0x08, 0x04, 0x02}},
    {':', {0x00, 0x36, 0x36, 0x00, 0x00}},
    {'(', {0x00, 0x1C, 0x22, 0x41, 0x00}},
    {')', {0x00, 0x41, 0x22, 0x1C, 0x00}},
    {'+', {0x08, 0x08, 0x3E, 0x08, 0x08}},
};

const unsigned char* glyph_for(char c) {
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  for (const auto& g : kFont) {
    if (g.ch == c) return g.col;
  }
  return kFont[0].col;  // unknown chars render as space
}

constexpr std::array<double, 3> kBlack{0.1, 0.1, 0.1};
constexpr std::array<double, 3> kGrid{0.85, 0.85, 0.85};

const std::array<double, 3> kPalette[] = {
    {0.90, 0.45, 0.05},  // orange
    {0.12, 0.35, 0.80},  // blue
    {0.80, 0.15, 0.15},  // red
    {0.10, 0.60, 0.30},  // green
    {0.55, 0.25, 0.70},  // purple
    {0.35, 0.35, 0.35},  // gray
};

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

Canvas::Canvas(int w, int h) : img_(h, w) { fill({1.0, 1.0, 1.0}); }

void Canvas::put(int x, int y, const std::array<double, 3>& rgb) {
  if (x < 0 || x >= img_.w || y < 0 || y >= img_.h) return;
  for (int c = 0; c < 3; ++c) img_.at(y, x, c) = rgb[c];
}

void Canvas::fill(std::array<double, 3> rgb) {
  for (int y = 0; y < img_.h; ++y) {
    for (int x = 0; x < img_.w; ++x) put(x, y, rgb);
  }
}

void Canvas::rect(int x0, int y0, int x1, int y1, std::array<double, 3> rgb) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) put(x, y, rgb);
  }
}

void Canvas::line(double x0, double y0, double x1, double y1,
                  std::array<double, 3> rgb) {
  const double dx = x1 - x0, dy = y1 - y0;
  const int steps = std::max(1, static_cast<int>(std::max(std::abs(dx), std::abs(dy))) * 2);
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    put(static_cast<int>(std::lround(x0 + t * dx)),
        static_cast<int>(std::lround(y0 + t * dy)), rgb);
  }
}

void Canvas::marker(int x, int y, std::array<double, 3> rgb) {
  rect(x - 2, y - 2, x + 2, y + 2, rgb);
}

void Canvas::text(int x, int y, const std::string& s,
                  std::array<double, 3> rgb, int scale) {
  int cx = x;
  for (char ch : s) {
    const unsigned char* cols = glyph_for(ch);
    for (int cxx = 0; cxx < 5; ++cxx) {
      for (int cy = 0; cy < 7; ++cy) {
        if (cols[cxx] & (1u << cy)) {
          rect(cx + cxx * scale, y + cy * scale, cx + cxx * scale + scale - 1,
               y + cy * scale + scale - 1, rgb);
        }
      }
    }
    cx += 6 * scale;
  }
}

int Canvas::text_width(const std::string& s, int scale) {
  return static_cast<int>(s.size()) * 6 * scale;
}

void Canvas::save_png(const std::filesystem::path& path) const {
  write_image_png(path, img_);
}

namespace {

struct AxisTicks {
  std::vector<double> values;
};

AxisTicks nice_ticks(double lo, double hi, int target) {
  AxisTicks t;
  if (hi <= lo) {
    t.values = {lo};
    return t;
  }
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (mag * m >= raw) {
      step = mag * m;
      break;
    }
  }
  const double first = std::ceil(lo / step) * step;
  for (double v = first; v <= hi + step * 1e-9; v += step) {
    t.values.push_back(v);
  }
  return t;
}

}  // namespace

void line_plot(const std::filesystem::path& path, const std::string& title,
               const std::string& xlabel, const std::string& ylabel,
               const std::vector<PlotSeries>& series, bool x_descending) {
  const int W = 720, H = 480;
  const int ml = 70, mr = 30, mt = 40, mb = 60;
  Canvas cv(W, H);

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  const double ypad = (ymax - ymin) * 0.1 + 1e-9;
  ymin -= ypad;
  ymax += ypad;

  const auto px = [&](double x) {
    double t = (x - xmin) / (xmax - xmin);
    if (x_descending) t = 1.0 - t;
    return ml + t * (W - ml - mr);
  };
  const auto py = [&](double y) {
    const double t = (y - ymin) / (ymax - ymin);
    return (H - mb) - t * (H - mt - mb);
  };

  for (double v : nice_ticks(ymin, ymax, 5).values) {
    const int y = static_cast<int>(py(v));
    cv.line(ml, y, W - mr, y, kGrid);
    const std::string lbl = fmt_num(v);
    cv.text(ml - 8 - Canvas::text_width(lbl), y - 3, lbl, kBlack);
  }
  for (double v : nice_ticks(xmin, xmax, 6).values) {
    const int x = static_cast<int>(px(v));
    cv.line(x, mt, x, H - mb, kGrid);
    const std::string lbl = fmt_num(v);
    cv.text(x - Canvas::text_width(lbl) / 2, H - mb + 8, lbl, kBlack);
  }
  cv.line(ml, mt, ml, H - mb, kBlack);
  cv.line(ml, H - mb, W - mr, H - mb, kBlack);

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& color = kPalette[si % std::size(kPalette)];
    auto pts = series[si].points;
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      cv.line(px(pts[i].first), py(pts[i].second), px(pts[i + 1].first),
              py(pts[i + 1].second), color);
    }
    for (const auto& [x, y] : pts) {
      cv.marker(static_cast<int>(px(x)), static_cast<int>(py(y)), color);
    }
    const int ly = mt + 14 * static_cast<int>(si);
    cv.rect(W - mr - 110, ly, W - mr - 100, ly + 8, color);
    cv.text(W - mr - 94, ly, series[si].label, kBlack);
  }

  cv.text((W - Canvas::text_width(title, 2)) / 2, 10, title, kBlack, 2);
  cv.text((W - Canvas::text_width(xlabel)) / 2, H - 22, xlabel, kBlack);
  cv.text(8, mt - 14, ylabel, kBlack);
  cv.save_png(path);
}

void bar_chart(const std::filesystem::path& path, const std::string& title,
               const std::string& ylabel,
               const std::vector<std::pair<std::string, double>>& bars) {
  const int W = std::max(480, 120 + 90 * static_cast<int>(bars.size()));
  const int H = 480;
  const int ml = 70, mr = 30, mt = 40, mb = 70;
  Canvas cv(W, H);

  double ymax = 0.0;
  for (const auto& [label, v] : bars) ymax = std::max(ymax, v);
  if (ymax <= 0) ymax = 1.0;
  ymax *= 1.1;

  const auto py = [&](double y) {
    return (H - mb) - (y / ymax) * (H - mt - mb);
  };
  for (double v : nice_ticks(0, ymax, 5).values) {
    const int y = static_cast<int>(py(v));
    cv.line(ml, y, W - mr, y, kGrid);
    const std::string lbl = fmt_num(v);
    cv.text(ml - 8 - Canvas::text_width(lbl), y - 3, lbl, kBlack);
  }
  cv.line(ml, mt, ml, H - mb, kBlack);
  cv.line(ml, H - mb, W - mr, H - mb, kBlack);

  const double span = static_cast<double>(W - ml - mr);
  const double slot = span / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& color = kPalette[i % std::size(kPalette)];
    const int x0 = static_cast<int>(ml + slot * (static_cast<double>(i) + 0.2));
    const int x1 = static_cast<int>(ml + slot * (static_cast<double>(i) + 0.8));
    cv.rect(x0, static_cast<int>(py(bars[i].second)), x1, H - mb - 1, color);
    const std::string lbl = bars[i].first;
    cv.text((x0 + x1) / 2 - Canvas::text_width(lbl) / 2, H - mb + 8, lbl, kBlack);
    const std::string val = fmt_num(bars[i].second);
    cv.text((x0 + x1) / 2 - Canvas::text_width(val) / 2,
            static_cast<int>(py(bars[i].second)) - 12, val, kBlack);
  }
  cv.text((W - Canvas::text_width(title, 2)) / 2, 10, title, kBlack, 2);
  cv.text(8, mt - 14, ylabel, kBlack);
  cv.save_png(path);
}

}  // namespace fbind
