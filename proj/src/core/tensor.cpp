#include "tensor.hpp"

#include <algorithm>
#include <string>

namespace fbind {

namespace {

struct Lerp {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

Lerp axis_lerp(int out_i, int src_n, double scale) {
  double f = (out_i + 0.5) * scale - 0.5;
  f = std::clamp(f, 0.0, static_cast<double>(src_n - 1));
  Lerp l;
  l.i0 = static_cast<int>(f);
  l.i1 = std::min(l.i0 + 1, src_n - 1);
  l.w1 = f - l.i0;
  return l;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& src, int out_h, int out_w) {
  if (out_h < src.h || out_w < src.w) {
    throw ValidationError("upsample target " + std::to_string(out_h) + "x" +
                          std::to_string(out_w) + " smaller than source");
  }
  if (out_h == src.h && out_w == src.w) return src;
  Tensor dst(src.c, out_h, out_w);
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;
  std::vector<Lerp> xs(static_cast<std::size_t>(out_w));
  for (int x = 0; x < out_w; ++x) xs[x] = axis_lerp(x, src.w, sx);
  for (int ci = 0; ci < src.c; ++ci) {
    for (int y = 0; y < out_h; ++y) {
      const Lerp ly = axis_lerp(y, src.h, sy);
      for (int x = 0; x < out_w; ++x) {
        const Lerp& lx = xs[x];
        const double top = src.at(ci, ly.i0, lx.i0) * (1.0 - lx.w1) +
                           src.at(ci, ly.i0, lx.i1) * lx.w1;
        const double bot = src.at(ci, ly.i1, lx.i0) * (1.0 - lx.w1) +
                           src.at(ci, ly.i1, lx.i1) * lx.w1;
        dst.at(ci, y, x) = top * (1.0 - ly.w1) + bot * ly.w1;
      }
    }
  }
  return dst;
}

Tensor upsample_bilinear_backward(const Tensor& grad_out, int src_h, int src_w) {
  if (grad_out.h == src_h && grad_out.w == src_w) return grad_out;
  Tensor gx(grad_out.c, src_h, src_w);
  const double sy = static_cast<double>(src_h) / grad_out.h;
  const double sx = static_cast<double>(src_w) / grad_out.w;
  std::vector<Lerp> xs(static_cast<std::size_t>(grad_out.w));
  for (int x = 0; x < grad_out.w; ++x) xs[x] = axis_lerp(x, src_w, sx);
  for (int ci = 0; ci < grad_out.c; ++ci) {
    for (int y = 0; y < grad_out.h; ++y) {
      const Lerp ly = axis_lerp(y, src_h, sy);
      for (int x = 0; x < grad_out.w; ++x) {
        const Lerp& lx = xs[x];
        const double g = grad_out.at(ci, y, x);
        gx.at(ci, ly.i0, lx.i0) += g * (1.0 - ly.w1) * (1.0 - lx.w1);
        gx.at(ci, ly.i0, lx.i1) += g * (1.0 - ly.w1) * lx.w1;
        gx.at(ci, ly.i1, lx.i0) += g * ly.w1 * (1.0 - lx.w1);
        gx.at(ci, ly.i1, lx.i1) += g * ly.w1 * lx.w1;
      }
    }
  }
  return gx;
}

}  // namespace fbind
