#pragma once

#include <cstdint>
#include <filesystem>

#include "manifest.hpp"

namespace fbind {

// Synthetic shapes dataset: colored disks / squares / triangles / crosses on
// a noisy background, with full instance annotations and controllable
// occlusion. The desk-scale substrate every training and evaluation run here
// is exercised against.
struct ToyConfig {
  int n_images = 200;
  int image_size = 64;
  int n_classes = 4;  // foreground shape classes; background is extra
  double occlusion_rate = 0.5;
  int max_instances = 3;
  std::uint64_t seed = 7;

  void validate() const;
};

// Writes images/, masks/, instances/ and manifest.jsonl under out_dir.
// Deterministic: image k is generated from a seed derived from (seed, k).
DatasetManifest generate_toy_dataset(const ToyConfig& config,
                                     const std::filesystem::path& out_dir);

}  // namespace fbind
