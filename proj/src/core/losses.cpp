#include "losses.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace fbind {

CeResult masked_cross_entropy(const Tensor& logits, const SegMask& target,
                              int ignore_id) {
  if (logits.h != target.h || logits.w != target.w) {
    throw ValidationError("cross entropy: logits " + std::to_string(logits.h) +
                          "x" + std::to_string(logits.w) + " vs target " +
                          std::to_string(target.h) + "x" +
                          std::to_string(target.w));
  }
  const int C = logits.c;
  CeResult r;
  r.grad = Tensor(C, logits.h, logits.w);

  long long n_valid = 0;
  for (int v : target.v) {
    if (v != ignore_id) ++n_valid;
  }
  if (n_valid == 0) return r;

  const double inv_n = 1.0 / static_cast<double>(n_valid);
  std::vector<double> prob(static_cast<std::size_t>(C));
  double loss = 0.0;
  for (int y = 0; y < logits.h; ++y) {
    for (int x = 0; x < logits.w; ++x) {
      const int t = target.at(y, x);
      if (t == ignore_id) continue;
      if (t < 0 || t >= C) {
        throw ValidationError("cross entropy: target class " +
                              std::to_string(t) + " outside [0, " +
                              std::to_string(C) + ")");
      }
      double mx = logits.at(0, y, x);
      for (int c = 1; c < C; ++c) mx = std::max(mx, logits.at(c, y, x));
      double z = 0.0;
      for (int c = 0; c < C; ++c) {
        prob[c] = std::exp(logits.at(c, y, x) - mx);
        z += prob[c];
      }
      const double inv_z = 1.0 / z;
      loss += -(std::log(prob[t] * inv_z));
      for (int c = 0; c < C; ++c) {
        r.grad.at(c, y, x) =
            (prob[c] * inv_z - (c == t ? 1.0 : 0.0)) * inv_n;
      }
    }
  }
  r.loss = loss * inv_n;
  return r;
}

LossBreakdown loss_stage1(const Tensor& sfb_up, const Tensor& st_up,
                          const Tensor& sp_up, const SegMask& g1,
                          const SegMask& g2, double delta, int ignore_id,
                          Stage1Grads* grads) {
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw ValidationError("stage-1 delta outside (0, 1]");
  }
  CeResult fb = masked_cross_entropy(sfb_up, g1, ignore_id);
  CeResult t = masked_cross_entropy(st_up, g1, ignore_id);
  CeResult p = masked_cross_entropy(sp_up, g2, ignore_id);

  LossBreakdown out;
  out.l_fb = fb.loss;
  out.l_t = t.loss;
  out.l_p = p.loss;
  out.total = fb.loss + delta * t.loss + (1.0 - delta) * p.loss;
  if (grads) {
    for (double& g : t.grad.v) g *= delta;
    for (double& g : p.grad.v) g *= (1.0 - delta);
    grads->g_fb = std::move(fb.grad);
    grads->g_t = std::move(t.grad);
    grads->g_p = std::move(p.grad);
  }
  return out;
}

double loss_ppa(const Tensor& sp_up, double eps, Tensor* grad) {
  double s = 0.0;
  for (double v : sp_up.v) {
    if (v > 0.0) s += v;
  }
  const double loss = std::log(eps + s);
  if (grad) {
    *grad = Tensor(sp_up.c, sp_up.h, sp_up.w);
    const double inv = 1.0 / (eps + s);
    for (std::size_t i = 0; i < sp_up.v.size(); ++i) {
      grad->v[i] = sp_up.v[i] > 0.0 ? inv : 0.0;
    }
  }
  return loss;
}

LossBreakdown loss_stage2(const Tensor& st_up, const Tensor& sp_up,
                          const SegMask& g1, double eps, int ignore_id,
                          Tensor* g_st, Tensor* g_sp) {
  CeResult t = masked_cross_entropy(st_up, g1, ignore_id);
  LossBreakdown out;
  out.l_t = t.loss;
  out.l_ppa = loss_ppa(sp_up, eps, g_sp);
  out.total = out.l_t + out.l_ppa;
  if (g_st) *g_st = std::move(t.grad);
  return out;
}

}  // namespace fbind
