#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "evaluator.hpp"
#include "imageio.hpp"
#include "oracles.hpp"
#include "toygen.hpp"

using namespace fbind;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fbind_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ConfusionMatrix from_oracle(const std::map<std::pair<int, int>, long long>& cm,
                            int num_classes) {
  ConfusionMatrix out(num_classes);
  for (const auto& [key, count] : cm) out.at(key.first, key.second) = count;
  return out;
}

}  // namespace

TEST_CASE("update_confusion basics") {
  ConfusionMatrix cm(5);
  SegMask pred(2, 5, 3), gt(2, 5, 3);
  update_confusion(cm, pred, gt, 255);
  CHECK(cm.at(3, 3) == 10);

  // ignore rows leave the matrix unchanged
  ConfusionMatrix cm2(5);
  SegMask ignored(4, 4, 255);
  SegMask anything(4, 4, 2);
  update_confusion(cm2, anything, ignored, 255);
  for (long long v : cm2.m) CHECK(v == 0);

  // 2x2 worked example
  ConfusionMatrix cm3(5);
  SegMask g(2, 2), p(2, 2);
  g.at(0, 0) = 1; g.at(0, 1) = 1; g.at(1, 0) = 2; g.at(1, 1) = 2;
  p.at(0, 0) = 1; p.at(0, 1) = 2; p.at(1, 0) = 2; p.at(1, 1) = 2;
  update_confusion(cm3, p, g, 255);
  CHECK(cm3.at(1, 1) == 1);
  CHECK(cm3.at(1, 2) == 1);
  CHECK(cm3.at(2, 2) == 2);

  const MiouResult r = miou(cm3);
  CHECK(*r.per_class[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(*r.per_class[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(!r.per_class[0].has_value());  // background absent -> excluded
  CHECK(r.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-12));

  SegMask wrong(3, 3, 0);
  CHECK_THROWS_AS(update_confusion(cm3, wrong, g, 255), ValidationError);
}

TEST_CASE("miou: perfect, disjoint, empty") {
  ConfusionMatrix perfect(4);
  perfect.at(0, 0) = 50;
  perfect.at(2, 2) = 30;
  const MiouResult p = miou(perfect);
  CHECK(p.miou == 1.0);
  CHECK(*p.per_class[0] == 1.0);
  CHECK(*p.per_class[2] == 1.0);
  CHECK(!p.per_class[1].has_value());

  ConfusionMatrix disjoint(3);
  disjoint.at(1, 2) = 10;  // class 1 fully mislabeled as 2
  const MiouResult d = miou(disjoint);
  CHECK(*d.per_class[1] == 0.0);
  CHECK(*d.per_class[2] == 0.0);

  ConfusionMatrix empty(3);
  CHECK_THROWS_WITH_AS(miou(empty), doctest::Contains("empty evaluation"),
                       ValidationError);
}

TEST_CASE("miou equals the brute-force oracle on random pairs") {
  Rng rng(23);
  for (int i = 0; i < 50; ++i) {
    const int C = 3 + static_cast<int>(rng.uniform_int(4));
    const SegMask gt = oracle::random_mask(rng, 9, 9, C, 255);
    SegMask pred = oracle::random_mask(rng, 9, 9, C, 0.0);
    // make some predictions correct so diagonals are populated
    for (std::size_t k = 0; k < pred.v.size(); ++k) {
      if (rng.uniform() < 0.4 && gt.v[k] != 255) pred.v[k] = gt.v[k];
      if (pred.v[k] == 255) pred.v[k] = 0;
    }
    ConfusionMatrix cm(C);
    update_confusion(cm, pred, gt, 255);
    const auto ocm = oracle::confusion(pred, gt, 255);
    CHECK(cm.m == from_oracle(ocm, C).m);

    bool any_union = false;
    for (long long v : cm.m) any_union = any_union || v != 0;
    if (!any_union) continue;
    const MiouResult mine = miou(cm);
    const oracle::MiouOracle want = oracle::miou(ocm, C);
    CHECK(mine.miou == want.miou);  // same integer arithmetic, bit-equal
    for (int c = 0; c < C; ++c) {
      CHECK(mine.per_class[c].has_value() == want.per_class[c].has_value());
      if (mine.per_class[c]) CHECK(*mine.per_class[c] == *want.per_class[c]);
    }
  }

  // ground-truth predictor scores a perfect 1.0
  Rng rng2(29);
  const SegMask gt = oracle::random_mask(rng2, 16, 16, 5, 255);
  SegMask pred = gt;
  for (int& v : pred.v) {
    if (v == 255) v = 0;
  }
  ConfusionMatrix cm(5);
  update_confusion(cm, pred, gt, 255);
  CHECK(miou(cm).miou == 1.0);
}

TEST_CASE("confusion accumulation is order-free") {
  Rng rng(31);
  std::vector<std::pair<SegMask, SegMask>> pairs;
  for (int i = 0; i < 6; ++i) {
    pairs.emplace_back(oracle::random_mask(rng, 6, 6, 4, 0.0),
                       oracle::random_mask(rng, 6, 6, 4, 255));
  }
  ConfusionMatrix fwd(4), rev(4), merged(4);
  for (const auto& [p, g] : pairs) update_confusion(fwd, p, g, 255);
  for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) {
    update_confusion(rev, it->first, it->second, 255);
  }
  for (const auto& [p, g] : pairs) {
    ConfusionMatrix one(4);
    update_confusion(one, p, g, 255);
    merged.merge(one);
  }
  CHECK(fwd.m == rev.m);
  CHECK(fwd.m == merged.m);
}

TEST_CASE("detect_occlusions rules") {
  // separated by >= 2 background pixels: no pairs
  InstanceMask far;
  far.ids = SegMask(8, 8, 0);
  far.ids.at(1, 1) = 1;
  far.ids.at(1, 2) = 1;
  far.ids.at(6, 6) = 2;
  far.instance_class = {{1, 1}, {2, 2}};
  CHECK(detect_occlusions(far).empty());

  // sharing an edge: one pair
  InstanceMask touch;
  touch.ids = SegMask(6, 6, 0);
  touch.ids.at(2, 2) = 1;
  touch.ids.at(2, 3) = 2;
  touch.instance_class = {{1, 1}, {2, 2}};
  const auto pairs = detect_occlusions(touch);
  CHECK(pairs == std::set<std::pair<int, int>>{{1, 2}});

  // one-pixel diagonal gap still counts (3x3 dilation)
  InstanceMask diag;
  diag.ids = SegMask(6, 6, 0);
  diag.ids.at(2, 2) = 1;
  diag.ids.at(3, 3) = 2;
  diag.instance_class = {{1, 1}, {2, 2}};
  CHECK(detect_occlusions(diag).size() == 1);

  // forced 3-way overlap: three pairs
  InstanceMask tri;
  tri.ids = SegMask(8, 8, 0);
  for (int y = 1; y <= 4; ++y) {
    for (int x = 1; x <= 4; ++x) tri.ids.at(y, x) = 1;
  }
  for (int y = 3; y <= 6; ++y) {
    for (int x = 2; x <= 5; ++x) tri.ids.at(y, x) = 2;
  }
  for (int y = 2; y <= 5; ++y) {
    for (int x = 4; x <= 7; ++x) tri.ids.at(y, x) = 3;
  }
  tri.instance_class = {{1, 1}, {2, 2}, {3, 3}};
  const auto three = detect_occlusions(tri);
  CHECK(three.size() == 3);
  CHECK(three == oracle::occluding_pairs(tri.ids));
}

TEST_CASE("subset spec parsing") {
  CHECK(SubsetSpec::parse("all", 1).kind == SubsetKind::All);
  CHECK(SubsetSpec::parse("occ1", 1).kind == SubsetKind::Occ1);
  CHECK(SubsetSpec::parse("occall", 1).kind == SubsetKind::OccAll);
  const SubsetSpec nobj = SubsetSpec::parse("nobj=3", 1);
  CHECK(nobj.kind == SubsetKind::NObjects);
  CHECK(nobj.n == 3);
  const SubsetSpec cooc = SubsetSpec::parse("cooc<40", 1);
  CHECK(cooc.kind == SubsetKind::CoocThreshold);
  CHECK(cooc.threshold == 40);
  const SubsetSpec with = SubsetSpec::parse("with=3", 2);
  CHECK(with.cls == 3);
  CHECK(with.anchor == 2);
  CHECK_THROWS_AS(SubsetSpec::parse("nuniq=1", 1), ValidationError);
  CHECK_THROWS_AS(SubsetSpec::parse("bogus", 1), ValidationError);
  CHECK_THROWS_AS(SubsetSpec::parse("nobj=x", 1), ValidationError);
}

TEST_CASE("filter_subset matches brute force on a toy manifest") {
  const auto dir = temp_dir("subsets");
  ToyConfig tc;
  tc.n_images = 50;
  tc.image_size = 32;
  tc.occlusion_rate = 0.5;
  tc.max_instances = 3;
  tc.seed = 77;
  const DatasetManifest m = generate_toy_dataset(tc, dir);
  const ClassCatalog cat = ClassCatalog::make(5, 255);
  const CoOccurrenceMatrix cooc = compute_cooccurrence(m, cat);

  // per-entry raw facts gathered once, straight from the files
  struct Facts {
    std::set<int> classes;
    std::set<int> visible;
    std::set<std::pair<int, int>> pairs;
  };
  std::vector<Facts> facts;
  for (const auto& e : m.entries) {
    Facts f;
    const SegMask mask = read_mask_png(m.resolve(e.mask_path));
    f.classes = oracle::class_set(mask, 0, 255);
    const InstanceMask inst = read_instance_mask(m.resolve(*e.instance_path));
    for (int v : inst.ids.v) {
      if (v != 0) f.visible.insert(v);
    }
    f.pairs = oracle::occluding_pairs(inst.ids);
    facts.push_back(std::move(f));
  }

  const auto ids_of = [](const DatasetManifest& sub) {
    std::vector<std::string> ids;
    for (const auto& e : sub.entries) ids.push_back(e.id);
    return ids;
  };
  const auto brute = [&](auto&& pred) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      if (pred(facts[i])) ids.push_back(m.entries[i].id);
    }
    return ids;
  };

  SubsetSpec spec;

  spec.kind = SubsetKind::Occ1;
  CHECK(ids_of(filter_subset(m, spec, cat, nullptr)) ==
        brute([](const Facts& f) { return !f.pairs.empty(); }));

  spec.kind = SubsetKind::OccAll;
  CHECK(ids_of(filter_subset(m, spec, cat, nullptr)) ==
        brute([](const Facts& f) {
          if (f.visible.empty()) return false;
          std::set<int> occluded;
          for (const auto& [a, b] : f.pairs) {
            occluded.insert(a);
            occluded.insert(b);
          }
          return occluded == f.visible;
        }));

  spec.kind = SubsetKind::NObjects;
  for (int n = 1; n <= 3; ++n) {
    spec.n = n;
    CHECK(ids_of(filter_subset(m, spec, cat, nullptr)) ==
          brute([n](const Facts& f) {
            return static_cast<int>(f.visible.size()) == n;
          }));
  }

  spec.kind = SubsetKind::NUnique;
  for (int n = 2; n <= 3; ++n) {
    spec.n = n;
    CHECK(ids_of(filter_subset(m, spec, cat, nullptr)) ==
          brute([n](const Facts& f) {
            return static_cast<int>(f.classes.size()) == n;
          }));
  }

  spec = SubsetSpec{};
  spec.kind = SubsetKind::Exclusive;
  spec.cls = 2;
  CHECK(ids_of(filter_subset(m, spec, cat, nullptr)) ==
        brute([](const Facts& f) {
          return f.classes.size() == 1 && *f.classes.begin() == 2;
        }));

  spec = SubsetSpec{};
  spec.kind = SubsetKind::CoOccurWith;
  spec.cls = 2;
  spec.anchor = 1;
  CHECK(ids_of(filter_subset(m, spec, cat, nullptr)) ==
        brute([](const Facts& f) {
          return f.classes.count(2) > 0 && f.classes.count(1) > 0;
        }));

  spec = SubsetSpec{};
  spec.kind = SubsetKind::CoocThreshold;
  for (long long thr : {5LL, 10LL, 20LL, 1000LL}) {
    spec.threshold = thr;
    spec.any_pair = false;
    CHECK(ids_of(filter_subset(m, spec, cat, &cooc)) ==
          brute([&](const Facts& f) {
            for (auto a = f.classes.begin(); a != f.classes.end(); ++a) {
              for (auto b = std::next(a); b != f.classes.end(); ++b) {
                if (cooc.at(*a, *b) >= thr) return false;
              }
            }
            return true;
          }));
    spec.any_pair = true;
    CHECK(ids_of(filter_subset(m, spec, cat, &cooc)) ==
          brute([&](const Facts& f) {
            bool has_pair = false;
            for (auto a = f.classes.begin(); a != f.classes.end(); ++a) {
              for (auto b = std::next(a); b != f.classes.end(); ++b) {
                has_pair = true;
                if (cooc.at(*a, *b) < thr) return true;
              }
            }
            return !has_pair;
          }));
  }

  // threshold above every count keeps the whole manifest
  spec.any_pair = false;
  spec.threshold = 1000000;
  CHECK(filter_subset(m, spec, cat, &cooc).entries.size() == m.entries.size());

  // instance-dependent kinds demand annotations
  DatasetManifest bare = m;
  for (auto& e : bare.entries) e.instance_path.reset();
  SubsetSpec occ;
  occ.kind = SubsetKind::Occ1;
  CHECK_THROWS_WITH_AS(filter_subset(bare, occ, cat, nullptr),
                       doctest::Contains("instance annotations"),
                       ValidationError);

  // subsets keep manifest order under input reordering
  DatasetManifest shuffled = m;
  std::reverse(shuffled.entries.begin(), shuffled.entries.end());
  SubsetSpec excl;
  excl.kind = SubsetKind::Exclusive;
  excl.cls = 1;
  auto a = ids_of(filter_subset(m, excl, cat, nullptr));
  auto b = ids_of(filter_subset(shuffled, excl, cat, nullptr));
  std::reverse(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("apply_perturbation: identity, clipping, norms, tiling") {
  Rng rng(37);
  const Image img = oracle::random_image(rng, 8, 8);

  const Image zero(8, 8, 0.0);
  CHECK(apply_perturbation(img, zero, 0.1).v == img.v);

  Image ones(8, 8, 1.0);
  Image pos(8, 8, 0.3);
  const Image clipped = apply_perturbation(ones, pos, std::nullopt);
  for (double v : clipped.v) CHECK(v == 1.0);

  Image tiny(8, 8, 0.05);
  CHECK_THROWS_AS(apply_perturbation(img, tiny, 0.01), ValidationError);

  // random +-8/255 perturbation: output within the norm of input pre-clip
  Image p(8, 8);
  const double norm = 8.0 / 255.0;
  for (double& v : p.v) v = rng.uniform() < 0.5 ? -norm : norm;
  const Image out = apply_perturbation(img, p, norm);
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    CHECK(out.v[i] >= 0.0);
    CHECK(out.v[i] <= 1.0);
    CHECK(std::abs(out.v[i] - img.v[i]) <= norm + 1e-12);
  }

  // smaller map tiles across the image
  Image small(2, 2, 0.0);
  small.at(0, 0, 0) = 0.5;
  const Image tiled = apply_perturbation(Image(4, 4, 0.0), small, std::nullopt);
  CHECK(tiled.at(0, 0, 0) == 0.5);
  CHECK(tiled.at(0, 2, 0) == 0.5);
  CHECK(tiled.at(2, 0, 0) == 0.5);
  CHECK(tiled.at(1, 1, 0) == 0.0);

  // larger map center-crops
  Image big(8, 8, 0.0);
  big.at(4, 4, 0) = 0.25;  // center of the 8x8 map
  const Image cropped = apply_perturbation(Image(4, 4, 0.0), big, std::nullopt);
  CHECK(cropped.at(2, 2, 0) == 0.25);
}

TEST_CASE("evaluate: deterministic reports, head and target selection") {
  const auto dir = temp_dir("evaluate");
  ToyConfig tc;
  tc.n_images = 6;
  tc.image_size = 24;
  tc.seed = 3;
  const DatasetManifest m = generate_toy_dataset(tc, dir);
  const ClassCatalog cat = ClassCatalog::make(5, 255);

  NetworkConfig nc;
  nc.num_classes = 5;
  nc.output_stride = 4;
  nc.encoder_width = 4;
  nc.encoder_blocks = 2;
  nc.branch_hidden = 6;
  BindingNet net = BindingNet::build(nc, 99);

  SubsetSpec all;
  EvalOptions opts;
  const EvalReport r1 = evaluate(net, m, cat, all, opts);
  const EvalReport r2 = evaluate(net, m, cat, all, opts);
  CHECK(r1.miou == r2.miou);
  CHECK(r1.per_class_iou == r2.per_class_iou);
  CHECK(r1.image_count == 6);
  CHECK(r1.mean_phantom_activation == r2.mean_phantom_activation);

  // constant-background predictor: background IoU equals its pixel share
  for (auto& p : net.params(false)) std::fill(p.w->begin(), p.w->end(), 0.0);
  const EvalReport bg = evaluate(net, m, cat, all, opts);
  long long bg_pixels = 0, all_pixels = 0;
  for (const auto& e : m.entries) {
    const SegMask mask = read_mask_png(m.resolve(e.mask_path));
    for (int v : mask.v) {
      bg_pixels += v == 0 ? 1 : 0;
      ++all_pixels;
    }
  }
  REQUIRE(bg.per_class_iou[0].has_value());
  CHECK(*bg.per_class_iou[0] ==
        doctest::Approx(static_cast<double>(bg_pixels) / all_pixels).epsilon(1e-12));
  for (int c = 1; c < 5; ++c) {
    if (bg.per_class_iou[c]) CHECK(*bg.per_class_iou[c] == 0.0);
  }

  // an empty subset is an error naming the spec
  SubsetSpec excl;
  excl.kind = SubsetKind::Exclusive;
  excl.cls = 4;
  DatasetManifest none = m;
  none.entries.clear();
  CHECK_THROWS_WITH_AS(evaluate(net, none, cat, excl, opts),
                       doctest::Contains("excl=4"), ValidationError);
}

TEST_CASE("eval report JSON round trip") {
  const auto dir = temp_dir("report_json");
  EvalReport r;
  r.subset = "occ1";
  r.method = "binding";
  r.setting = "uap";
  r.image_count = 42;
  r.class_names = {"background", "class_1"};
  r.per_class_iou = {0.9, std::nullopt};
  r.miou = 0.9;
  r.mean_phantom_activation = 123.5;
  r.threshold = 40.0;
  r.per_image_iou = {{"a", 0.5}, {"b", 0.75}};
  r.save_json(dir / "r.json");
  const EvalReport back = EvalReport::load_json(dir / "r.json");
  CHECK(back.subset == r.subset);
  CHECK(back.method == r.method);
  CHECK(back.setting == r.setting);
  CHECK(back.image_count == r.image_count);
  CHECK(back.class_names == r.class_names);
  CHECK(back.per_class_iou == r.per_class_iou);
  CHECK(back.miou == r.miou);
  CHECK(back.mean_phantom_activation == r.mean_phantom_activation);
  CHECK(back.threshold == r.threshold);
  CHECK(back.per_image_iou == r.per_image_iou);
}
