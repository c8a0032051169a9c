#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "losses.hpp"
#include "net.hpp"
#include "oracles.hpp"

using namespace fbind;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.num_classes = 3;
  cfg.output_stride = 4;
  cfg.encoder_width = 4;
  cfg.encoder_blocks = 2;
  cfg.branch_hidden = 6;
  return cfg;
}

// Stage-1 loss of the network on a fixed instance; used as the scalar
// function for finite differencing.
double stage1_scalar(BindingNet& net, const Image& img, const SegMask& g1,
                     const SegMask& g2, double delta) {
  PredictionTriple t = net.forward(img, true);
  const Tensor sfb_up = net.upsample_to_input(*t.sfb, t);
  const Tensor st_up = net.upsample_to_input(t.st, t);
  const Tensor sp_up = net.upsample_to_input(t.sp, t);
  return loss_stage1(sfb_up, st_up, sp_up, g1, g2, delta, 255).total;
}

void set_all_params(BindingNet& net, double value) {
  for (auto& p : net.params(false)) {
    std::fill(p.w->begin(), p.w->end(), value);
  }
}

}  // namespace

TEST_CASE("network config validation") {
  NetworkConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.output_stride = 5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.encoder_tag = "vgg";
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.output_stride = 16;
  cfg.encoder_blocks = 2;  // needs three downsampling blocks
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = tiny_config();
  CHECK(cfg.resolved_fbh_hidden() == 6);
  cfg.fbh_hidden = 11;
  CHECK(cfg.resolved_fbh_hidden() == 11);
}

TEST_CASE("logit map shapes follow the output stride (ceiling)") {
  NetworkConfig cfg;
  cfg.num_classes = 5;
  cfg.output_stride = 8;
  cfg.encoder_width = 6;
  cfg.encoder_blocks = 3;
  cfg.branch_hidden = 8;
  BindingNet net = BindingNet::build(cfg, 1);

  const PredictionTriple t = net.forward(Image(64, 64, 0.5), true);
  CHECK(t.st.h == 8);
  CHECK(t.st.w == 8);
  CHECK(t.st.c == 5);
  CHECK(t.sp.h == 8);
  CHECK(t.sfb->h == 8);
  CHECK(t.sfb->c == 5);

  cfg.output_stride = 16;
  cfg.encoder_blocks = 4;
  BindingNet net16 = BindingNet::build(cfg, 1);
  const PredictionTriple t16 = net16.forward(Image(321, 321, 0.5), false);
  CHECK(t16.st.h == 21);  // ceil(321 / 16)
  CHECK(t16.st.w == 21);
  CHECK(!t16.sfb.has_value());

  // upsampled maps land exactly on the input grid, padding cropped away
  const Tensor up = net16.upsample_to_input(t16.st, t16);
  CHECK(up.h == 321);
  CHECK(up.w == 321);

  const PredictionTriple odd = net.forward(Image(30, 17, 0.2), false);
  const Tensor up2 = net.upsample_to_input(odd.st, odd);
  CHECK(up2.h == 30);
  CHECK(up2.w == 17);
}

TEST_CASE("forward is deterministic for fixed weights") {
  BindingNet net = BindingNet::build(tiny_config(), 7);
  Rng rng(3);
  const Image img = oracle::random_image(rng, 12, 12);
  const PredictionTriple a = net.forward(img, true);
  const PredictionTriple b = net.forward(img, true);
  CHECK(a.st.v == b.st.v);
  CHECK(a.sp.v == b.sp.v);
  CHECK(a.sfb->v == b.sfb->v);
}

TEST_CASE("zero weights produce zero logits everywhere") {
  BindingNet net = BindingNet::build(tiny_config(), 7);
  set_all_params(net, 0.0);
  const PredictionTriple t = net.forward(Image(8, 8, 0.7), true);
  for (double v : t.st.v) CHECK(v == 0.0);
  for (double v : t.sp.v) CHECK(v == 0.0);
  for (double v : t.sfb->v) CHECK(v == 0.0);
}

TEST_CASE("branches are independent") {
  BindingNet net = BindingNet::build(tiny_config(), 11);
  Rng rng(5);
  const Image img = oracle::random_image(rng, 12, 12);
  const PredictionTriple before = net.forward(img, false);

  // perturbing phantom weights must leave S_t bit-identical
  for (auto& p : net.params(false)) {
    if (p.name.rfind("ssm.phantom", 0) == 0) {
      for (double& w : *p.w) w += 0.37;
    }
  }
  const PredictionTriple after = net.forward(img, false);
  CHECK(after.st.v == before.st.v);
  CHECK(after.sp.v != before.sp.v);
}

TEST_CASE("gradients do not cross between branches") {
  BindingNet net = BindingNet::build(tiny_config(), 13);
  Rng rng(17);
  const Image img = oracle::random_image(rng, 12, 12);

  // dominant-only gradient: phantom parameters stay exactly zero
  {
    net.zero_grads();
    PredictionTriple t = net.forward(img, false);
    Tensor g_st(t.st.c, t.st.h, t.st.w, 0.0);
    for (double& v : g_st.v) v = rng.uniform(-1.0, 1.0);
    const Tensor g_up = upsample_bilinear(g_st, 12, 12);
    net.backward(t, &g_up, nullptr, nullptr);
    for (auto& p : net.params(false)) {
      if (p.name.rfind("ssm.phantom", 0) == 0) {
        for (double g : *p.g) CHECK(g == 0.0);
      }
    }
  }
  // phantom-only gradient: dominant parameters stay exactly zero
  {
    net.zero_grads();
    PredictionTriple t = net.forward(img, false);
    Tensor g_sp(t.sp.c, t.sp.h, t.sp.w, 0.0);
    for (double& v : g_sp.v) v = rng.uniform(-1.0, 1.0);
    const Tensor g_up = upsample_bilinear(g_sp, 12, 12);
    net.backward(t, nullptr, &g_up, nullptr);
    for (auto& p : net.params(false)) {
      if (p.name.rfind("ssm.dominant", 0) == 0) {
        for (double g : *p.g) CHECK(g == 0.0);
      }
    }
  }
}

TEST_CASE("binding head: 2C input channels, ordered concatenation") {
  BindingHead fbh;
  fbh.configure(21, 42);
  CHECK(fbh.conv1.in_c == 42);
  CHECK(fbh.conv2.out_c == 21);

  BindingHead small;
  small.configure(3, 6);
  Rng rng(23);
  small.init(rng);
  Tensor st = oracle::random_logits(rng, 3, 4, 4);
  Tensor sp = oracle::random_logits(rng, 3, 4, 4);
  const Tensor ab = small.forward(st, sp);
  const Tensor ba = small.forward(sp, st);
  CHECK(ab.v != ba.v);  // concatenation order matters

  // all-zero weights swallow any input
  BindingHead zero;
  zero.configure(3, 6);
  const Tensor z = zero.forward(st, sp);
  for (double v : z.v) CHECK(v == 0.0);
}

TEST_CASE("fbh gradients reach both branches") {
  BindingNet net = BindingNet::build(tiny_config(), 29);
  Rng rng(31);
  const Image img = oracle::random_image(rng, 12, 12);
  net.zero_grads();
  PredictionTriple t = net.forward(img, true);
  Tensor g_fb(t.sfb->c, t.sfb->h, t.sfb->w);
  for (double& v : g_fb.v) v = rng.uniform(-1.0, 1.0);
  const Tensor g_up = upsample_bilinear(g_fb, 12, 12);
  net.backward(t, nullptr, nullptr, &g_up);

  double dom_norm = 0.0, pha_norm = 0.0;
  for (auto& p : net.params(false)) {
    for (double g : *p.g) {
      if (p.name.rfind("ssm.dominant", 0) == 0) dom_norm += g * g;
      if (p.name.rfind("ssm.phantom", 0) == 0) pha_norm += g * g;
    }
  }
  CHECK(dom_norm > 0.0);
  CHECK(pha_norm > 0.0);
}

TEST_CASE("include_fbh=false leaves branch outputs unchanged") {
  BindingNet net = BindingNet::build(tiny_config(), 37);
  Rng rng(41);
  const Image img = oracle::random_image(rng, 10, 10);
  const PredictionTriple with = net.forward(img, true);
  const PredictionTriple without = net.forward(img, false);
  CHECK(!without.sfb.has_value());
  CHECK(with.sfb.has_value());
  CHECK(with.st.v == without.st.v);
  CHECK(with.sp.v == without.sp.v);
}

TEST_CASE("bilinear upsampling: constants, identity, closed form") {
  Tensor c(2, 3, 3, 0.4);
  const Tensor up = upsample_bilinear(c, 9, 9);
  for (double v : up.v) CHECK(v == doctest::Approx(0.4).epsilon(1e-12));

  Rng rng43(43);
  const Tensor t = oracle::random_logits(rng43, 3, 4, 5);
  const Tensor same = upsample_bilinear(t, 4, 5);
  CHECK(same.v == t.v);

  // 2x2 columns [0, 1] -> 4x4 columns [0, 0.25, 0.75, 1]
  Tensor two(1, 2, 2);
  two.at(0, 0, 1) = 1.0;
  two.at(0, 1, 1) = 1.0;
  const Tensor four = upsample_bilinear(two, 4, 4);
  for (int y = 0; y < 4; ++y) {
    CHECK(four.at(0, y, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(four.at(0, y, 1) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(four.at(0, y, 2) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(four.at(0, y, 3) == doctest::Approx(1.0).epsilon(1e-12));
    for (int x = 0; x + 1 < 4; ++x) {
      CHECK(four.at(0, y, x) <= four.at(0, y, x + 1));
    }
  }

  CHECK_THROWS_AS(upsample_bilinear(two, 1, 4), ValidationError);
}

TEST_CASE("upsample backward is the transpose of forward") {
  // <up(x), g> == <x, up^T(g)> for random x, g
  Rng rng(47);
  Tensor x = oracle::random_logits(rng, 2, 3, 4);
  Tensor g = oracle::random_logits(rng, 2, 7, 9);
  const Tensor ux = upsample_bilinear(x, 7, 9);
  const Tensor tg = upsample_bilinear_backward(g, 3, 4);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < ux.v.size(); ++i) lhs += ux.v[i] * g.v[i];
  for (std::size_t i = 0; i < x.v.size(); ++i) rhs += x.v[i] * tg.v[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("checkpoint round trip preserves everything") {
  const auto path = std::filesystem::temp_directory_path() / "fbind_net_ckpt.fbnd";
  BindingNet net = BindingNet::build(tiny_config(), 53);
  net.stage = 2;
  net.norm.mean = {0.4, 0.5, 0.6};
  net.norm.stddev = {0.2, 0.25, 0.3};
  net.norm.initialized = true;
  net.save(path);

  BindingNet back = BindingNet::load(path);
  CHECK(back.stage == 2);
  CHECK(back.norm.mean == net.norm.mean);
  CHECK(back.norm.stddev == net.norm.stddev);
  CHECK(back.cfg.num_classes == net.cfg.num_classes);

  auto pa = net.params(false);
  auto pb = back.params(false);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(*pa[i].w == *pb[i].w);
  }

  Rng rng(59);
  const Image img = oracle::random_image(rng, 9, 11);
  const PredictionTriple ta = net.forward(img, true);
  const PredictionTriple tb = back.forward(img, true);
  CHECK(ta.sfb->v == tb.sfb->v);

  CHECK_THROWS_AS(BindingNet::load(path.string() + ".missing"), IoError);
}

TEST_CASE("stage-1 gradients match central finite differences") {
  BindingNet net = BindingNet::build(tiny_config(), 61);
  Rng rng(67);
  const Image img = oracle::random_image(rng, 12, 12);
  const SegMask g1 = oracle::random_mask(rng, 12, 12, 3, 255);
  const SegMask g2 = oracle::random_mask(rng, 12, 12, 3, 255);
  const double delta = 0.8;

  // analytic gradients
  net.zero_grads();
  PredictionTriple t = net.forward(img, true);
  const Tensor sfb_up = net.upsample_to_input(*t.sfb, t);
  const Tensor st_up = net.upsample_to_input(t.st, t);
  const Tensor sp_up = net.upsample_to_input(t.sp, t);
  Stage1Grads grads;
  loss_stage1(sfb_up, st_up, sp_up, g1, g2, delta, 255, &grads);
  net.backward(t, &grads.g_t, &grads.g_p, &grads.g_fb);

  auto params = net.params(false);
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t i = 0; i < params.size(); ++i) {
    // a few indices from every tensor, biases included
    for (std::size_t j = 0; j < params[i].w->size();
         j += std::max<std::size_t>(1, params[i].w->size() / 3)) {
      picks.emplace_back(i, j);
    }
  }

  const double h = 1e-4;
  int ok = 0;
  for (const auto& [i, j] : picks) {
    double& w = (*params[i].w)[j];
    const double saved = w;
    w = saved + h;
    const double up = stage1_scalar(net, img, g1, g2, delta);
    w = saved - h;
    const double dn = stage1_scalar(net, img, g1, g2, delta);
    w = saved;
    const double fd = (up - dn) / (2.0 * h);
    const double an = (*params[i].g)[j];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    if (rel <= 1e-3) ++ok;
  }
  // expect essentially all sampled coordinates to agree
  CHECK(ok >= static_cast<int>(picks.size() * 95) / 100);
}
