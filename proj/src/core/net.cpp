#include "net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace fbind {

using nlohmann::json;

void NetworkConfig::validate() const {
  if (num_classes < 2) throw ValidationError("network needs >= 2 classes");
  if (output_stride != 4 && output_stride != 8 && output_stride != 16) {
    throw ValidationError("output_stride must be 4, 8 or 16");
  }
  if (encoder_width < 1 || branch_hidden < 1 || fbh_hidden < 0) {
    throw ValidationError("network widths must be positive");
  }
  if (encoder_tag != "toy") {
    throw ValidationError("unknown encoder_tag '" + encoder_tag +
                          "' (this build ships 'toy')");
  }
  const int n_down = output_stride == 4 ? 1 : output_stride == 8 ? 2 : 3;
  if (encoder_blocks < n_down) {
    throw ValidationError("encoder_blocks must be >= " + std::to_string(n_down) +
                          " for output_stride " + std::to_string(output_stride));
  }
}

// ---- Conv2d ----

void Conv2d::configure(int in_channels, int out_channels, int kernel,
                       int stride_, int pad_) {
  in_c = in_channels;
  out_c = out_channels;
  k = kernel;
  stride = stride_;
  pad = pad_;
  w.assign(static_cast<std::size_t>(out_c) * in_c * k * k, 0.0);
  b.assign(static_cast<std::size_t>(out_c), 0.0);
  gw.assign(w.size(), 0.0);
  gb.assign(b.size(), 0.0);
}

void Conv2d::init(Rng& rng) {
  const double std = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
  for (double& x : w) x = rng.normal(0.0, std);
  std::fill(b.begin(), b.end(), 0.0);
}

namespace {

// Output index range [lo, hi] whose sampled input index stays in bounds for
// kernel offset koff.
inline void out_range(int n_out, int n_in, int stride, int pad, int koff,
                      int* lo, int* hi) {
  int l = pad - koff;
  l = l <= 0 ? 0 : (l + stride - 1) / stride;
  int h = (n_in - 1 + pad - koff) / stride;
  if (h > n_out - 1) h = n_out - 1;
  *lo = l;
  *hi = h;
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x) {
  if (x.c != in_c) {
    throw ValidationError("conv expects " + std::to_string(in_c) +
                          " input channels, got " + std::to_string(x.c));
  }
  x_cache_ = x;
  const int oh = (x.h + 2 * pad - k) / stride + 1;
  const int ow = (x.w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ValidationError("conv input too small");
  Tensor y(out_c, oh, ow);
  for (int oc = 0; oc < out_c; ++oc) {
    double* yplane = &y.v[static_cast<std::size_t>(oc) * oh * ow];
    std::fill(yplane, yplane + static_cast<std::size_t>(oh) * ow, b[oc]);
  }
  for (int oc = 0; oc < out_c; ++oc) {
    for (int ic = 0; ic < in_c; ++ic) {
      const double* wk = &w[((static_cast<std::size_t>(oc) * in_c) + ic) * k * k];
      for (int ky = 0; ky < k; ++ky) {
        int ylo, yhi;
        out_range(oh, x.h, stride, pad, ky, &ylo, &yhi);
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wk[ky * k + kx];
          if (wv == 0.0) continue;
          int xlo, xhi;
          out_range(ow, x.w, stride, pad, kx, &xlo, &xhi);
          const int off = kx - pad;
          for (int oy = ylo; oy <= yhi; ++oy) {
            const int iy = oy * stride - pad + ky;
            const double* xrow =
                x.v.data() + (static_cast<std::size_t>(ic) * x.h + iy) * x.w;
            double* yrow = &y.v[(static_cast<std::size_t>(oc) * oh + oy) * ow];
            for (int ox = xlo; ox <= xhi; ++ox) {
              yrow[ox] += wv * xrow[ox * stride + off];
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
  const Tensor& x = x_cache_;
  const int oh = gy.h, ow = gy.w;
  Tensor gx(x.c, x.h, x.w);
  for (int oc = 0; oc < out_c; ++oc) {
    const double* gplane = &gy.v[static_cast<std::size_t>(oc) * oh * ow];
    double s = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) s += gplane[i];
    gb[oc] += s;
  }
  for (int oc = 0; oc < out_c; ++oc) {
    for (int ic = 0; ic < in_c; ++ic) {
      double* gwk = &gw[((static_cast<std::size_t>(oc) * in_c) + ic) * k * k];
      const double* wk = &w[((static_cast<std::size_t>(oc) * in_c) + ic) * k * k];
      for (int ky = 0; ky < k; ++ky) {
        int ylo, yhi;
        out_range(oh, x.h, stride, pad, ky, &ylo, &yhi);
        for (int kx = 0; kx < k; ++kx) {
          int xlo, xhi;
          out_range(ow, x.w, stride, pad, kx, &xlo, &xhi);
          double acc = 0.0;
          const double wv = wk[ky * k + kx];
          const int off = kx - pad;
          for (int oy = ylo; oy <= yhi; ++oy) {
            const int iy = oy * stride - pad + ky;
            const double* xrow =
                x.v.data() + (static_cast<std::size_t>(ic) * x.h + iy) * x.w;
            double* gxrow =
                gx.v.data() + (static_cast<std::size_t>(ic) * x.h + iy) * x.w;
            const double* grow = &gy.v[(static_cast<std::size_t>(oc) * oh + oy) * ow];
            for (int ox = xlo; ox <= xhi; ++ox) {
              const double g = grow[ox];
              acc += g * xrow[ox * stride + off];
              gxrow[ox * stride + off] += g * wv;
            }
          }
          gwk[ky * k + kx] += acc;
        }
      }
    }
  }
  return gx;
}

void Conv2d::collect(const std::string& prefix, bool frozen,
                     std::vector<ParamRef>* out) {
  out->push_back({prefix + ".w", &w, &gw, frozen});
  out->push_back({prefix + ".b", &b, &gb, frozen});
}

// ---- Rectifier ----

Tensor Rectifier::forward(const Tensor& x) {
  c_ = x.c;
  h_ = x.h;
  w_ = x.w;
  mask_.assign(x.v.size(), 0);
  Tensor y(x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    if (x.v[i] > 0.0) {
      y.v[i] = x.v[i];
      mask_[i] = 1;
    } else {
      y.v[i] = slope_ * x.v[i];
    }
  }
  return y;
}

Tensor Rectifier::backward(const Tensor& gy) const {
  Tensor gx(c_, h_, w_);
  for (std::size_t i = 0; i < gy.v.size(); ++i) {
    gx.v[i] = mask_[i] ? gy.v[i] : slope_ * gy.v[i];
  }
  return gx;
}

// ---- ResidualBlock ----

void ResidualBlock::configure(int in_c, int out_c, int stride) {
  conv1.configure(in_c, out_c, 3, stride, 1);
  conv2.configure(out_c, out_c, 3, 1, 1);
  if (stride != 1 || in_c != out_c) {
    proj.emplace();
    proj->configure(in_c, out_c, 1, stride, 0);
  } else {
    proj.reset();
  }
}

void ResidualBlock::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
  // damp the residual path so each block starts near the identity; keeps
  // deep unnormalized stacks trainable at useful step sizes
  for (double& w : conv2.w) w *= 0.1;
  if (proj) proj->init(rng);
}

Tensor ResidualBlock::forward(const Tensor& x) {
  Tensor t = relu1.forward(conv1.forward(x));
  Tensor m = conv2.forward(t);
  const Tensor sc = proj ? proj->forward(x) : x;
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] += sc.v[i];
  return relu2.forward(m);
}

Tensor ResidualBlock::backward(const Tensor& gy) {
  const Tensor g = relu2.backward(gy);
  Tensor gx = conv1.backward(relu1.backward(conv2.backward(g)));
  if (proj) {
    const Tensor gs = proj->backward(g);
    for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gs.v[i];
  } else {
    for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += g.v[i];
  }
  return gx;
}

void ResidualBlock::collect(const std::string& prefix, bool frozen,
                            std::vector<ParamRef>* out) {
  conv1.collect(prefix + ".conv1", frozen, out);
  conv2.collect(prefix + ".conv2", frozen, out);
  if (proj) proj->collect(prefix + ".proj", frozen, out);
}

// ---- ToyEncoder ----

void ToyEncoder::configure(const NetworkConfig& cfg) {
  const int width = cfg.encoder_width;
  const int n_down = cfg.output_stride == 4 ? 1 : cfg.output_stride == 8 ? 2 : 3;
  stem.configure(3, width, 3, 2, 1);
  blocks.assign(static_cast<std::size_t>(cfg.encoder_blocks), ResidualBlock{});
  for (int i = 0; i < cfg.encoder_blocks; ++i) {
    const int in_c = i == 0 ? width : 2 * width;
    const int stride = i < n_down ? 2 : 1;
    blocks[i].configure(in_c, 2 * width, stride);
  }
  out_channels = 2 * width;
}

void ToyEncoder::init(Rng& rng) {
  stem.init(rng);
  for (auto& b : blocks) b.init(rng);
}

Tensor ToyEncoder::forward(const Tensor& x) {
  Tensor t = stem_relu.forward(stem.forward(x));
  for (auto& b : blocks) t = b.forward(t);
  return t;
}

Tensor ToyEncoder::backward(const Tensor& gy) {
  Tensor g = gy;
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    g = it->backward(g);
  }
  return stem.backward(stem_relu.backward(g));
}

void ToyEncoder::collect(bool frozen, std::vector<ParamRef>* out) {
  stem.collect("encoder.stem", frozen, out);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect("encoder.block" + std::to_string(i), frozen, out);
  }
}

// ---- Branch ----

void Branch::configure(int in_c, int hidden, int classes) {
  conv1.configure(in_c, hidden, 3, 1, 1);
  conv2.configure(hidden, classes, 1, 1, 0);
}

void Branch::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
}

Tensor Branch::forward(const Tensor& x) {
  return conv2.forward(relu.forward(conv1.forward(x)));
}

Tensor Branch::backward(const Tensor& gy) {
  return conv1.backward(relu.backward(conv2.backward(gy)));
}

void Branch::collect(const std::string& prefix, bool frozen,
                     std::vector<ParamRef>* out) {
  conv1.collect(prefix + ".conv1", frozen, out);
  conv2.collect(prefix + ".conv2", frozen, out);
}

// ---- BindingHead ----

void BindingHead::configure(int classes, int hidden) {
  conv1.configure(2 * classes, hidden, 1, 1, 0);
  conv2.configure(hidden, classes, 1, 1, 0);
}

void BindingHead::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
}

Tensor BindingHead::forward(const Tensor& st, const Tensor& sp) {
  if (!st.same_shape(sp)) {
    throw ValidationError("binding head inputs must share shape");
  }
  Tensor cat(st.c + sp.c, st.h, st.w);
  std::memcpy(cat.v.data(), st.v.data(), st.v.size() * sizeof(double));
  std::memcpy(cat.v.data() + st.v.size(), sp.v.data(),
              sp.v.size() * sizeof(double));
  return conv2.forward(relu.forward(conv1.forward(cat)));
}

void BindingHead::backward(const Tensor& gy, Tensor* g_st, Tensor* g_sp) {
  const Tensor gcat = conv1.backward(relu.backward(conv2.backward(gy)));
  const std::size_t half = g_st->v.size();
  for (std::size_t i = 0; i < half; ++i) g_st->v[i] += gcat.v[i];
  for (std::size_t i = 0; i < half; ++i) g_sp->v[i] += gcat.v[half + i];
}

void BindingHead::collect(bool frozen, std::vector<ParamRef>* out) {
  conv1.collect("fbh.conv1", frozen, out);
  conv2.collect("fbh.conv2", frozen, out);
}

// ---- BindingNet ----

BindingNet BindingNet::build(const NetworkConfig& cfg, std::uint64_t init_seed) {
  cfg.validate();
  BindingNet net;
  net.cfg = cfg;
  net.enc_.configure(cfg);
  net.dom_.configure(net.enc_.out_channels, cfg.branch_hidden, cfg.num_classes);
  net.pha_.configure(net.enc_.out_channels, cfg.branch_hidden, cfg.num_classes);
  net.fbh_.configure(cfg.num_classes, cfg.resolved_fbh_hidden());
  Rng rng(init_seed);
  net.enc_.init(rng);
  net.dom_.init(rng);
  net.pha_.init(rng);
  net.fbh_.init(rng);
  return net;
}

Tensor BindingNet::make_input(const Image& image, int pad_h, int pad_w) const {
  Tensor x(3, pad_h, pad_w);
  for (int c = 0; c < 3; ++c) {
    const double inv = 1.0 / norm.stddev[c];
    for (int y = 0; y < image.h; ++y) {
      for (int xx = 0; xx < image.w; ++xx) {
        x.at(c, y, xx) = (image.at(y, xx, c) - norm.mean[c]) * inv;
      }
    }
  }
  return x;
}

PredictionTriple BindingNet::forward(const Image& image, bool include_fbh) {
  if (image.h < 1 || image.w < 1) throw ValidationError("empty input image");
  const int os = cfg.output_stride;
  PredictionTriple t;
  t.in_h = image.h;
  t.in_w = image.w;
  t.pad_h = (image.h + os - 1) / os * os;
  t.pad_w = (image.w + os - 1) / os * os;
  const Tensor x = make_input(image, t.pad_h, t.pad_w);
  const Tensor f = enc_.forward(x);
  t.st = dom_.forward(f);
  t.sp = pha_.forward(f);
  if (include_fbh) t.sfb = fbh_.forward(t.st, t.sp);
  return t;
}

Tensor BindingNet::upsample_to_input(const Tensor& branch_logits,
                                     const PredictionTriple& t) const {
  Tensor up = upsample_bilinear(branch_logits, t.pad_h, t.pad_w);
  if (t.pad_h == t.in_h && t.pad_w == t.in_w) return up;
  Tensor out(up.c, t.in_h, t.in_w);
  for (int c = 0; c < up.c; ++c) {
    for (int y = 0; y < t.in_h; ++y) {
      for (int x = 0; x < t.in_w; ++x) {
        out.at(c, y, x) = up.at(c, y, x);
      }
    }
  }
  return out;
}

namespace {

// Input-resolution gradient -> padded grid -> branch resolution.
Tensor grad_to_branch(const Tensor& g_up, const PredictionTriple& t,
                      int branch_h, int branch_w) {
  if (t.pad_h == t.in_h && t.pad_w == t.in_w) {
    return upsample_bilinear_backward(g_up, branch_h, branch_w);
  }
  Tensor padded(g_up.c, t.pad_h, t.pad_w);
  for (int c = 0; c < g_up.c; ++c) {
    for (int y = 0; y < t.in_h; ++y) {
      for (int x = 0; x < t.in_w; ++x) {
        padded.at(c, y, x) = g_up.at(c, y, x);
      }
    }
  }
  return upsample_bilinear_backward(padded, branch_h, branch_w);
}

}  // namespace

void BindingNet::backward(const PredictionTriple& t, const Tensor* g_st_up,
                          const Tensor* g_sp_up, const Tensor* g_sfb_up) {
  Tensor g_st(t.st.c, t.st.h, t.st.w);
  Tensor g_sp(t.sp.c, t.sp.h, t.sp.w);
  if (g_st_up) {
    const Tensor g = grad_to_branch(*g_st_up, t, t.st.h, t.st.w);
    for (std::size_t i = 0; i < g_st.v.size(); ++i) g_st.v[i] += g.v[i];
  }
  if (g_sp_up) {
    const Tensor g = grad_to_branch(*g_sp_up, t, t.sp.h, t.sp.w);
    for (std::size_t i = 0; i < g_sp.v.size(); ++i) g_sp.v[i] += g.v[i];
  }
  if (g_sfb_up) {
    if (!t.sfb) {
      throw ValidationError("binding-head gradient without a binding forward");
    }
    const Tensor g = grad_to_branch(*g_sfb_up, t, t.sfb->h, t.sfb->w);
    fbh_.backward(g, &g_st, &g_sp);
  }
  Tensor gf = dom_.backward(g_st);
  const Tensor gf2 = pha_.backward(g_sp);
  for (std::size_t i = 0; i < gf.v.size(); ++i) gf.v[i] += gf2.v[i];
  enc_.backward(gf);
}

std::vector<ParamRef> BindingNet::params(bool fbh_frozen) {
  std::vector<ParamRef> out;
  enc_.collect(false, &out);
  dom_.collect("ssm.dominant", false, &out);
  pha_.collect("ssm.phantom", false, &out);
  fbh_.collect(fbh_frozen, &out);
  return out;
}

void BindingNet::zero_grads() {
  for (auto& p : params(false)) {
    std::fill(p.g->begin(), p.g->end(), 0.0);
  }
}

std::size_t BindingNet::param_count() {
  std::size_t n = 0;
  for (auto& p : params(false)) n += p.w->size();
  return n;
}

// ---- checkpoint ----

namespace {

json config_to_json(const NetworkConfig& c) {
  return json{{"num_classes", c.num_classes},
              {"encoder_tag", c.encoder_tag},
              {"output_stride", c.output_stride},
              {"encoder_width", c.encoder_width},
              {"encoder_blocks", c.encoder_blocks},
              {"branch_hidden", c.branch_hidden},
              {"fbh_hidden", c.fbh_hidden}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.num_classes = j.at("num_classes").get<int>();
  c.encoder_tag = j.at("encoder_tag").get<std::string>();
  c.output_stride = j.at("output_stride").get<int>();
  c.encoder_width = j.at("encoder_width").get<int>();
  c.encoder_blocks = j.at("encoder_blocks").get<int>();
  c.branch_hidden = j.at("branch_hidden").get<int>();
  c.fbh_hidden = j.at("fbh_hidden").get<int>();
  return c;
}

constexpr char kMagic[8] = {'F', 'B', 'N', 'D', 'C', 'K', 'P', 'T'};

}  // namespace

void BindingNet::save(const std::filesystem::path& path) {
  json header;
  header["version"] = 1;
  header["stage"] = stage;
  header["config"] = config_to_json(cfg);
  header["normalization"] = {{"mean", norm.mean},
                             {"std", norm.stddev},
                             {"initialized", norm.initialized}};
  json plist = json::array();
  const auto ps = params(false);
  for (const auto& p : ps) {
    plist.push_back({{"name", p.name}, {"count", p.w->size()}});
  }
  header["params"] = plist;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, 8);
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& p : ps) {
    out.write(reinterpret_cast<const char*>(p.w->data()),
              static_cast<std::streamsize>(p.w->size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

BindingNet BindingNet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a checkpoint file");
  }
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 4);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw IoError("truncated checkpoint header in '" + path.string() + "'");
  json header = json::parse(hs, nullptr, false);
  if (header.is_discarded() || !header.contains("version")) {
    throw IoError("malformed checkpoint header in '" + path.string() + "'");
  }
  if (header["version"].get<int>() != 1) {
    throw ValidationError("unsupported checkpoint version in '" + path.string() + "'");
  }

  BindingNet net = BindingNet::build(config_from_json(header.at("config")), 0);
  net.stage = header.at("stage").get<int>();
  const auto& jn = header.at("normalization");
  net.norm.mean = jn.at("mean").get<std::array<double, 3>>();
  net.norm.stddev = jn.at("std").get<std::array<double, 3>>();
  net.norm.initialized = jn.at("initialized").get<bool>();

  auto ps = net.params(false);
  const auto& plist = header.at("params");
  if (plist.size() != ps.size()) {
    throw ValidationError("checkpoint parameter list does not match network");
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& meta = plist[i];
    if (meta.at("name").get<std::string>() != ps[i].name ||
        meta.at("count").get<std::size_t>() != ps[i].w->size()) {
      throw ValidationError("checkpoint tensor '" +
                            meta.at("name").get<std::string>() +
                            "' does not match network layout");
    }
    in.read(reinterpret_cast<char*>(ps[i].w->data()),
            static_cast<std::streamsize>(ps[i].w->size() * sizeof(double)));
  }
  if (!in) throw IoError("truncated checkpoint payload in '" + path.string() + "'");
  return net;
}

}  // namespace fbind
