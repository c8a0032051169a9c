#pragma once

#include <optional>

#include "image.hpp"
#include "tensor.hpp"

namespace fbind {

struct LossBreakdown {
  double l_fb = 0.0, l_t = 0.0, l_p = 0.0, l_ppa = 0.0;
  double total = 0.0;
};

struct CeResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, zero at ignored pixels
};

// Mean over non-ignore pixels of -log softmax(logits)[target]; zero (with
// zero gradient) when every pixel is ignored.
CeResult masked_cross_entropy(const Tensor& logits, const SegMask& target,
                              int ignore_id);

struct Stage1Grads {
  Tensor g_fb, g_t, g_p;
};

// L = l_fb + delta * l_t + (1 - delta) * l_p, all on upsampled logits;
// l_fb and l_t target g1, l_p targets g2.
LossBreakdown loss_stage1(const Tensor& sfb_up, const Tensor& st_up,
                          const Tensor& sp_up, const SegMask& g1,
                          const SegMask& g2, double delta, int ignore_id,
                          Stage1Grads* grads = nullptr);

// log(eps + sum of rectified phantom logits); the gradient vanishes once the
// phantom map is non-positive everywhere.
double loss_ppa(const Tensor& sp_up, double eps, Tensor* grad = nullptr);

// L = l_t + l_ppa (binding head excluded).
LossBreakdown loss_stage2(const Tensor& st_up, const Tensor& sp_up,
                          const SegMask& g1, double eps, int ignore_id,
                          Tensor* g_st = nullptr, Tensor* g_sp = nullptr);

}  // namespace fbind
