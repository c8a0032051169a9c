#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "imageio.hpp"
#include "manifest.hpp"
#include "oracles.hpp"

using namespace fbind;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fbind_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Palette-typed mask PNG (VOC style); the reader must return raw indices.
void write_palette_mask(const fs::path& path, const SegMask& mask) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  REQUIRE(f != nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  REQUIRE(setjmp(png_jmpbuf(png)) == 0);
  png_init_io(png, f);
  png_set_IHDR(png, info, mask.w, mask.h, 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_color palette[256];
  for (int i = 0; i < 256; ++i) {
    palette[i].red = static_cast<png_byte>(i);
    palette[i].green = static_cast<png_byte>((i * 37) % 256);
    palette[i].blue = static_cast<png_byte>((i * 101) % 256);
  }
  png_set_PLTE(png, info, palette, 256);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(mask.w));
  for (int y = 0; y < mask.h; ++y) {
    for (int x = 0; x < mask.w; ++x) row[x] = static_cast<png_byte>(mask.at(y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

ManifestEntry make_entry(const fs::path& dir, const std::string& id,
                         const Image& img, const SegMask& mask) {
  write_image_png(dir / (id + ".png"), img);
  write_mask_png(dir / (id + "_m.png"), mask);
  ManifestEntry e;
  e.id = id;
  e.image_path = id + ".png";
  e.mask_path = id + "_m.png";
  return e;
}

}  // namespace

TEST_CASE("load_sample: zero image, ignore passthrough, bad class id") {
  const auto dir = temp_dir("load_sample");
  const ClassCatalog cat = ClassCatalog::make(21, 255);

  SegMask mask(2, 2, 0);
  mask.at(0, 1) = 255;  // ignore label loads fine
  DatasetManifest m;
  m.dir = dir;
  m.entries.push_back(make_entry(dir, "a", Image(2, 2, 0.0), mask));

  const LabeledSample s = load_sample(m.entries[0], m, cat);
  for (double v : s.image.v) CHECK(v == 0.0);
  CHECK(s.mask.at(0, 1) == 255);

  SegMask bad(2, 2, 30);  // 30 outside [0, 21)
  m.entries.push_back(make_entry(dir, "b", Image(2, 2, 0.5), bad));
  CHECK_THROWS_WITH_AS(load_sample(m.entries[1], m, cat),
                       doctest::Contains("30"), ValidationError);

  ManifestEntry missing;
  missing.id = "c";
  missing.image_path = "nope.png";
  missing.mask_path = "nope_m.png";
  CHECK_THROWS_AS(load_sample(missing, m, cat), IoError);
}

TEST_CASE("class_set excludes background and ignore") {
  const ClassCatalog cat = ClassCatalog::make(21, 255);
  SegMask bg(3, 3, 0);
  CHECK(class_set(bg, cat).empty());

  SegMask m(2, 2, 0);
  m.at(0, 1) = 5;
  m.at(1, 0) = 5;
  m.at(1, 1) = 255;
  CHECK(class_set(m, cat) == std::set<int>{5});

  // brute-force comparison on a 4x4 mask
  SegMask m2(4, 4, 0);
  m2.at(0, 0) = 1;
  m2.at(1, 2) = 7;
  m2.at(2, 2) = 7;
  m2.at(3, 3) = 12;
  CHECK(class_set(m2, cat) == oracle::class_set(m2, 0, 255));
  CHECK(class_set(m2, cat) == std::set<int>{1, 7, 12});
}

TEST_CASE("compute_cooccurrence matches hand counts and brute force") {
  const auto dir = temp_dir("cooc");
  const ClassCatalog cat = ClassCatalog::make(5, 255);

  const auto mask_with = [&](std::vector<int> classes) {
    SegMask m(4, 4, 0);
    int i = 0;
    for (int c : classes) m.at(0, i++) = c;
    return m;
  };

  DatasetManifest m;
  m.dir = dir;
  m.entries.push_back(make_entry(dir, "i0", Image(4, 4, 0.1), mask_with({1, 2})));
  m.entries.push_back(make_entry(dir, "i1", Image(4, 4, 0.2), mask_with({1})));
  m.entries.push_back(make_entry(dir, "i2", Image(4, 4, 0.3), mask_with({2, 3})));

  const CoOccurrenceMatrix cm = compute_cooccurrence(m, cat);
  CHECK(cm.at(1, 2) == 1);
  CHECK(cm.at(2, 1) == 1);
  CHECK(cm.at(2, 3) == 1);
  CHECK(cm.at(1, 3) == 0);
  CHECK(cm.diagonal[1] == 2);
  CHECK(cm.diagonal[2] == 2);
  CHECK(cm.diagonal[3] == 1);

  // empty manifest -> all zero
  DatasetManifest empty;
  empty.dir = dir;
  const CoOccurrenceMatrix zero = compute_cooccurrence(empty, cat);
  for (long long v : zero.counts) CHECK(v == 0);
  for (long long v : zero.diagonal) CHECK(v == 0);

  // randomized brute-force property
  Rng rng(99);
  DatasetManifest rm;
  rm.dir = dir;
  std::vector<std::set<int>> sets;
  for (int i = 0; i < 12; ++i) {
    const SegMask mask = oracle::random_mask(rng, 5, 5, 5, 255, 0.1);
    rm.entries.push_back(make_entry(dir, "r" + std::to_string(i), Image(5, 5, 0.5), mask));
    sets.push_back(oracle::class_set(mask, 0, 255));
  }
  const CoOccurrenceMatrix rcm = compute_cooccurrence(rm, cat);
  for (int a = 1; a < 5; ++a) {
    long long diag = 0;
    for (const auto& s : sets) diag += s.count(a) ? 1 : 0;
    CHECK(rcm.diagonal[a] == diag);
    for (int b = a + 1; b < 5; ++b) {
      long long n = 0;
      for (const auto& s : sets) n += (s.count(a) && s.count(b)) ? 1 : 0;
      CHECK(rcm.at(a, b) == n);
      CHECK(rcm.at(b, a) == n);
      CHECK(rcm.at(a, b) <= std::min(rcm.diagonal[a], rcm.diagonal[b]));
    }
  }

  // propagated load error names the entry
  DatasetManifest broken;
  broken.dir = dir;
  ManifestEntry e;
  e.id = "ghost";
  e.image_path = "ghost.png";
  e.mask_path = "ghost_m.png";
  broken.entries.push_back(e);
  CHECK_THROWS_WITH_AS(compute_cooccurrence(broken, cat),
                       doctest::Contains("ghost"), IoError);
}

TEST_CASE("co-occurrence matrix JSON round trip") {
  const auto dir = temp_dir("cooc_json");
  CoOccurrenceMatrix m(4);
  m.at(1, 2) = 7;
  m.at(2, 1) = 7;
  m.diagonal = {0, 9, 8, 1};
  m.save_json(dir / "c.json");
  const CoOccurrenceMatrix r = CoOccurrenceMatrix::load_json(dir / "c.json");
  CHECK(r.num_classes == 4);
  CHECK(r.counts == m.counts);
  CHECK(r.diagonal == m.diagonal);
}

TEST_CASE("manifest JSONL round trip is field-exact") {
  const auto dir = temp_dir("manifest_rt");
  Rng rng(7);
  DatasetManifest m;
  m.dir = dir;
  for (int i = 0; i < 20; ++i) {
    ManifestEntry e;
    e.id = "s" + std::to_string(i);
    e.image_path = "img/" + std::to_string(i) + ".png";
    e.mask_path = "msk/" + std::to_string(i) + ".png";
    if (rng.uniform() < 0.5) e.instance_path = "inst/" + std::to_string(i) + ".png";
    if (rng.uniform() < 0.5) {
      e.second_mask_path = "msk2/" + std::to_string(i) + ".png";
      e.delta = 0.7 + 0.3 * rng.uniform();
      e.source_ids = std::vector<std::string>{"a", "b"};
    }
    e.strategy_tag = rng.uniform() < 0.5 ? "cfb" : "standard";
    m.entries.push_back(e);
  }
  m.write(dir / "m.jsonl");
  const DatasetManifest r = DatasetManifest::read(dir / "m.jsonl");
  REQUIRE(r.entries.size() == m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(r.entries[i].id == m.entries[i].id);
    CHECK(r.entries[i].image_path == m.entries[i].image_path);
    CHECK(r.entries[i].mask_path == m.entries[i].mask_path);
    CHECK(r.entries[i].instance_path == m.entries[i].instance_path);
    CHECK(r.entries[i].second_mask_path == m.entries[i].second_mask_path);
    CHECK(r.entries[i].delta == m.entries[i].delta);
    CHECK(r.entries[i].source_ids == m.entries[i].source_ids);
    CHECK(r.entries[i].strategy_tag == m.entries[i].strategy_tag);
  }
}

TEST_CASE("manifest invariants rejected") {
  DatasetManifest m;
  ManifestEntry a;
  a.id = "x";
  a.image_path = "a.png";
  a.mask_path = "a_m.png";
  m.entries.push_back(a);
  m.entries.push_back(a);
  CHECK_THROWS_AS(m.validate(), ValidationError);

  m.entries.pop_back();
  m.entries[0].delta = 0.8;  // delta without second mask
  CHECK_THROWS_AS(m.validate(), ValidationError);

  m.entries[0].second_mask_path = "a_m2.png";
  m.entries[0].delta = 1.5;  // outside (0, 1]
  CHECK_THROWS_AS(m.validate(), ValidationError);

  m.entries[0].delta = 1.0;
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("palette mask PNG reads as raw indices") {
  const auto dir = temp_dir("palette");
  SegMask mask(3, 4, 0);
  mask.at(0, 0) = 1;
  mask.at(1, 2) = 20;
  mask.at(2, 3) = 255;
  write_palette_mask(dir / "p.png", mask);
  const SegMask r = read_mask_png(dir / "p.png");
  REQUIRE(r.h == 3);
  REQUIRE(r.w == 4);
  CHECK(r.v == mask.v);
}

TEST_CASE("image codecs: png exact at 8-bit, jpeg approximate, npy lossless") {
  const auto dir = temp_dir("codecs");
  Rng rng(3);
  Image img = oracle::random_image(rng, 9, 13);
  // quantize to the 8-bit grid so PNG round trip is exact
  for (double& v : img.v) v = std::round(v * 255.0) / 255.0;

  write_image_png(dir / "a.png", img);
  const Image png = read_image(dir / "a.png");
  REQUIRE(png.h == img.h);
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    CHECK(png.v[i] == doctest::Approx(img.v[i]).epsilon(1e-12));
  }

  // a smooth gradient survives JPEG at high quality
  Image smooth(16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      smooth.at(y, x, 0) = y / 15.0;
      smooth.at(y, x, 1) = x / 15.0;
      smooth.at(y, x, 2) = 0.5;
    }
  }
  write_image_jpeg(dir / "a.jpg", smooth, 95);
  const Image jpg = read_image(dir / "a.jpg");
  REQUIRE(jpg.h == smooth.h);
  double mean_abs = 0.0;
  for (std::size_t i = 0; i < smooth.v.size(); ++i) {
    mean_abs += std::abs(jpg.v[i] - smooth.v[i]);
  }
  mean_abs /= static_cast<double>(smooth.v.size());
  CHECK(mean_abs < 0.05);

  write_image_npy(dir / "a.npy", img);
  const Image npy = read_image(dir / "a.npy");
  CHECK(npy.v == img.v);  // f8 storage is bit-exact
}

TEST_CASE("instance sidecar round trip and validation") {
  const auto dir = temp_dir("inst");
  InstanceMask inst;
  inst.ids = SegMask(4, 4, 0);
  inst.ids.at(0, 0) = 1;
  inst.ids.at(2, 2) = 2;
  inst.instance_class = {{1, 3}, {2, 1}};
  inst.recorded_occlusions = {{1, 2}};
  write_instance_mask(dir / "i.png", inst);

  const InstanceMask r = read_instance_mask(dir / "i.png");
  CHECK(r.ids.v == inst.ids.v);
  CHECK(r.instance_class == inst.instance_class);
  CHECK(r.recorded_occlusions == inst.recorded_occlusions);

  // id present in pixels but missing from the sidecar map
  InstanceMask bad = inst;
  bad.ids.at(3, 3) = 9;
  write_mask_png(dir / "j.png", bad.ids);
  std::ofstream side(instance_sidecar_path(dir / "j.png"));
  side << R"({"instances": {"1": 3, "2": 1}})";
  side.close();
  CHECK_THROWS_AS(read_instance_mask(dir / "j.png"), ValidationError);
}

TEST_CASE("catalog invariants") {
  CHECK_THROWS_AS(ClassCatalog::make(5, 3), ValidationError);  // ignore inside range
  const ClassCatalog c = ClassCatalog::make(5, 255);
  CHECK(c.valid_label(0));
  CHECK(c.valid_label(4));
  CHECK(c.valid_label(255));
  CHECK(!c.valid_label(5));
  CHECK(!c.valid_label(-1));
}
