#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "evaluator.hpp"
#include "imageio.hpp"
#include "oracles.hpp"
#include "toygen.hpp"

using namespace fbind;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fbind_toy_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("same config twice is byte-identical") {
  const auto d1 = temp_dir("det1");
  const auto d2 = temp_dir("det2");
  ToyConfig cfg;
  cfg.n_images = 12;
  cfg.image_size = 32;
  cfg.seed = 42;
  generate_toy_dataset(cfg, d1);
  generate_toy_dataset(cfg, d2);
  CHECK(slurp(d1 / "manifest.jsonl") == slurp(d2 / "manifest.jsonl"));
  CHECK(slurp(d1 / "images" / "0003.png") == slurp(d2 / "images" / "0003.png"));
  CHECK(slurp(d1 / "masks" / "0007.png") == slurp(d2 / "masks" / "0007.png"));
  CHECK(slurp(d1 / "instances" / "0005.json") == slurp(d2 / "instances" / "0005.json"));
}

TEST_CASE("occlusion_rate 0 with single instances yields no occluding pairs") {
  const auto dir = temp_dir("occ0");
  ToyConfig cfg;
  cfg.n_images = 16;
  cfg.image_size = 32;
  cfg.occlusion_rate = 0.0;
  cfg.max_instances = 1;
  cfg.seed = 5;
  const DatasetManifest m = generate_toy_dataset(cfg, dir);
  for (const auto& e : m.entries) {
    const InstanceMask inst = read_instance_mask(m.resolve(*e.instance_path));
    CHECK(detect_occlusions(inst).empty());
    CHECK(inst.recorded_occlusions.empty());
  }
}

TEST_CASE("occlusion_rate 0 with several instances still yields no pairs") {
  const auto dir = temp_dir("occ0multi");
  ToyConfig cfg;
  cfg.n_images = 12;
  cfg.image_size = 48;
  cfg.occlusion_rate = 0.0;
  cfg.max_instances = 3;
  cfg.seed = 6;
  const DatasetManifest m = generate_toy_dataset(cfg, dir);
  for (const auto& e : m.entries) {
    const InstanceMask inst = read_instance_mask(m.resolve(*e.instance_path));
    CHECK(detect_occlusions(inst).empty());
  }
}

TEST_CASE("occlusion_rate 1 forces a pair in every multi-instance image") {
  const auto dir = temp_dir("occ1");
  ToyConfig cfg;
  cfg.n_images = 20;
  cfg.image_size = 48;
  cfg.occlusion_rate = 1.0;
  cfg.max_instances = 3;
  cfg.seed = 9;
  const DatasetManifest m = generate_toy_dataset(cfg, dir);
  int multi = 0;
  for (const auto& e : m.entries) {
    const InstanceMask inst = read_instance_mask(m.resolve(*e.instance_path));
    std::set<int> visible;
    for (int v : inst.ids.v) {
      if (v != 0) visible.insert(v);
    }
    if (visible.size() >= 2) {
      ++multi;
      CHECK(!detect_occlusions(inst).empty());
    }
  }
  CHECK(multi > 0);  // the config must actually produce multi-instance images
}

TEST_CASE("recorded occluding pairs equal detect_occlusions exactly") {
  const auto dir = temp_dir("recorded");
  ToyConfig cfg;
  cfg.n_images = 30;
  cfg.image_size = 48;
  cfg.occlusion_rate = 0.5;
  cfg.max_instances = 3;
  cfg.seed = 13;
  const DatasetManifest m = generate_toy_dataset(cfg, dir);
  for (const auto& e : m.entries) {
    const InstanceMask inst = read_instance_mask(m.resolve(*e.instance_path));
    const auto detected = detect_occlusions(inst);
    const std::set<std::pair<int, int>> recorded(inst.recorded_occlusions.begin(),
                                                 inst.recorded_occlusions.end());
    CHECK(recorded == detected);
    // and both agree with a direct neighbor scan
    CHECK(recorded == oracle::occluding_pairs(inst.ids));
  }
}

TEST_CASE("class mask is consistent with instances and sidecar") {
  const auto dir = temp_dir("consistency");
  ToyConfig cfg;
  cfg.n_images = 10;
  cfg.image_size = 32;
  cfg.seed = 21;
  const DatasetManifest m = generate_toy_dataset(cfg, dir);
  const ClassCatalog cat = ClassCatalog::make(cfg.n_classes + 1, 255);
  for (const auto& e : m.entries) {
    const LabeledSample s = load_sample(e, m, cat);
    REQUIRE(s.instances.has_value());
    for (int y = 0; y < s.mask.h; ++y) {
      for (int x = 0; x < s.mask.w; ++x) {
        const int id = s.instances->ids.at(y, x);
        if (id == 0) {
          CHECK(s.mask.at(y, x) == 0);
        } else {
          CHECK(s.mask.at(y, x) == s.instances->instance_class.at(id));
        }
      }
    }
  }
}

TEST_CASE("every class appears and counts stay near uniform") {
  const auto dir = temp_dir("balance");
  ToyConfig cfg;
  cfg.n_images = 200;
  cfg.image_size = 32;
  cfg.occlusion_rate = 0.5;
  cfg.max_instances = 3;
  cfg.seed = 7;
  const DatasetManifest m = generate_toy_dataset(cfg, dir);
  const ClassCatalog cat = ClassCatalog::make(cfg.n_classes + 1, 255);

  std::vector<int> image_counts(static_cast<std::size_t>(cfg.n_classes) + 1, 0);
  for (const auto& e : m.entries) {
    const SegMask mask = read_mask_png(m.resolve(e.mask_path));
    for (int c : class_set(mask, cat)) image_counts[c] += 1;
  }
  double mean = 0.0;
  for (int c = 1; c <= cfg.n_classes; ++c) {
    CHECK(image_counts[c] > 0);
    mean += image_counts[c];
  }
  mean /= cfg.n_classes;
  for (int c = 1; c <= cfg.n_classes; ++c) {
    CHECK(std::abs(image_counts[c] - mean) <= 0.2 * mean);
  }
}

TEST_CASE("config validation") {
  ToyConfig cfg;
  cfg.occlusion_rate = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.occlusion_rate = 0.5;
  cfg.n_images = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
