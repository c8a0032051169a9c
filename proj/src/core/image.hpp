#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"

namespace fbind {

// RGB image, values in [0, 1], row-major interleaved.
struct Image {
  int h = 0, w = 0;
  std::vector<double> v;  // h * w * 3

  Image() = default;
  Image(int h_, int w_, double fill = 0.0)
      : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_ * 3, fill) {}

  double& at(int y, int x, int c) {
    return v[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return v[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  }
};

// Dense class-id map paired with an image; values are class ids or the
// catalog's ignore id.
struct SegMask {
  int h = 0, w = 0;
  std::vector<int> v;  // h * w

  SegMask() = default;
  SegMask(int h_, int w_, int fill = 0)
      : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

  int& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  int at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

// Instance ids (0 = no instance) plus the id -> class map. The recorded
// occluding pairs come from the toy generator's sidecar when present.
struct InstanceMask {
  SegMask ids;
  std::map<int, int> instance_class;
  std::vector<std::pair<int, int>> recorded_occlusions;
};

struct LabeledSample {
  std::string id;
  Image image;
  SegMask mask;
  std::optional<InstanceMask> instances;
};

// Bilinear resize, align-corners = false. Identity sizes pass through
// untouched so same-size blends stay bit-exact.
Image resize_bilinear(const Image& src, int out_h, int out_w);

// Nearest-neighbor resize on label maps (pixel-center rule).
SegMask resize_nearest(const SegMask& src, int out_h, int out_w);

// Scale `src` so it covers (out_h, out_w) preserving aspect ratio, then
// center-crop; any 1px rounding shortfall is padded with `pad_image` /
// `pad_label`. Used to bring a phantom sample onto the dominant's geometry.
Image align_cover(const Image& src, int out_h, int out_w);
SegMask align_cover(const SegMask& src, int out_h, int out_w, int pad_label);

}  // namespace fbind
