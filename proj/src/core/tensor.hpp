#pragma once

#include <vector>

#include "common.hpp"

namespace fbind {

// Dense CHW activation/logit map, double precision throughout so gradient
// checks against central differences are not noise-limited.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(c_) * h_ * w_, fill) {}

  double& at(int ci, int y, int x) {
    return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
  }
  double at(int ci, int y, int x) const {
    return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
  }

  bool same_shape(const Tensor& o) const {
    return c == o.c && h == o.h && w == o.w;
  }
};

// Channel-wise bilinear interpolation, align-corners = false. Target must be
// at least as large as the source; equal size is the identity.
Tensor upsample_bilinear(const Tensor& src, int out_h, int out_w);

// Transpose of upsample_bilinear: routes output-resolution gradients back to
// the source grid.
Tensor upsample_bilinear_backward(const Tensor& grad_out, int src_h, int src_w);

}  // namespace fbind
