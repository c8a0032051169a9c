#include "image.hpp"

#include <algorithm>
#include <cmath>

namespace fbind {

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) {
    throw ValidationError("resize target must be positive");
  }
  if (src.h == out_h && src.w == out_w) return src;
  Image dst(out_h, out_w);
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(y0, x0, c) * (1.0 - wx) + src.at(y0, x1, c) * wx;
        const double bot = src.at(y1, x0, c) * (1.0 - wx) + src.at(y1, x1, c) * wx;
        dst.at(y, x, c) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

SegMask resize_nearest(const SegMask& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) {
    throw ValidationError("resize target must be positive");
  }
  if (src.h == out_h && src.w == out_w) return src;
  SegMask dst(out_h, out_w);
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const int yi = std::min(src.h - 1, static_cast<int>((y + 0.5) * sy));
    for (int x = 0; x < out_w; ++x) {
      const int xi = std::min(src.w - 1, static_cast<int>((x + 0.5) * sx));
      dst.at(y, x) = src.at(yi, xi);
    }
  }
  return dst;
}

namespace {

// Cover-scaled dimensions plus the centered crop offset into them.
struct CoverGeometry {
  int scaled_h, scaled_w, off_y, off_x;
};

CoverGeometry cover_geometry(int src_h, int src_w, int out_h, int out_w) {
  const double scale = std::max(static_cast<double>(out_h) / src_h,
                                static_cast<double>(out_w) / src_w);
  CoverGeometry g;
  g.scaled_h = std::max(out_h, static_cast<int>(std::lround(src_h * scale)));
  g.scaled_w = std::max(out_w, static_cast<int>(std::lround(src_w * scale)));
  g.off_y = (g.scaled_h - out_h) / 2;
  g.off_x = (g.scaled_w - out_w) / 2;
  return g;
}

}  // namespace

Image align_cover(const Image& src, int out_h, int out_w) {
  if (src.h == out_h && src.w == out_w) return src;
  const CoverGeometry g = cover_geometry(src.h, src.w, out_h, out_w);
  const Image scaled = resize_bilinear(src, g.scaled_h, g.scaled_w);
  Image dst(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < 3; ++c) {
        dst.at(y, x, c) = scaled.at(y + g.off_y, x + g.off_x, c);
      }
    }
  }
  return dst;
}

SegMask align_cover(const SegMask& src, int out_h, int out_w, int pad_label) {
  (void)pad_label;  // cover scaling never leaves uncovered cells
  if (src.h == out_h && src.w == out_w) return src;
  const CoverGeometry g = cover_geometry(src.h, src.w, out_h, out_w);
  const SegMask scaled = resize_nearest(src, g.scaled_h, g.scaled_w);
  SegMask dst(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      dst.at(y, x) = scaled.at(y + g.off_y, x + g.off_x);
    }
  }
  return dst;
}

}  // namespace fbind
