#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "manifest.hpp"
#include "rng.hpp"

namespace fbind {

enum class BlendTag { CFB, RFB, CAFB, WRFB, MFB, MIXUP, CUTMIX };

const char* blend_tag_name(BlendTag tag);
BlendTag parse_blend_tag(const std::string& name);

struct BlendStrategy {
  BlendTag tag = BlendTag::CFB;
  double delta_lo = 0.7;
  double delta_hi = 1.0;
  int partners = 10;         // RFB / WRFB partner count
  double mixup_alpha = 1.0;  // Beta(alpha, alpha) for MIXUP

  void validate() const;
};

struct PlannedPair {
  std::string dominant_id;
  std::string phantom_id;  // empty for an unblended MFB entry
  double delta = 1.0;
};

struct PairPlan {
  std::vector<PlannedPair> pairs;
  BlendStrategy strategy;
  std::uint64_t seed = 0;
};

// Mixed image with both source ground-truth maps and the blend weight.
struct BlendedSample {
  std::string id;
  Image image;
  SegMask mask1;  // dominant ground truth, geometry never altered
  SegMask mask2;  // phantom ground truth on the dominant's geometry
  double delta = 1.0;
};

// cluster[c] = ids of images whose class set contains c; clusters overlap
// when an image holds several classes. With single_cluster, each image joins
// only the cluster of its primary class (most labeled pixels, lowest id on
// ties).
std::map<int, std::vector<std::string>> build_category_clusters(
    const DatasetManifest& manifest, const ClassCatalog& catalog,
    bool single_cluster = false);

// Uniform in the strategy's delta range; WRFB pins 0.6, MIXUP/CUTMIX draw
// from Beta.
double sample_delta(const BlendStrategy& strategy, Rng& rng);

PairPlan plan_pairs(const BlendStrategy& strategy,
                    const std::map<int, std::vector<std::string>>& clusters,
                    const DatasetManifest& manifest, std::uint64_t seed);

// I_fb = delta * dominant + (1 - delta) * phantom, per pixel. The phantom is
// brought onto the dominant's geometry first (bilinear cover + center crop;
// nearest for its mask).
BlendedSample blend_pair(const LabeledSample& dominant,
                         const LabeledSample& phantom, double delta);

BlendedSample mixup_blend(const LabeledSample& a, const LabeledSample& b,
                          double lambda);

// Rectangular region of b pasted into a, area fraction 1 - lambda with
// lambda ~ Beta(1, 1); second mask is all-ignore.
BlendedSample cutmix_blend(const LabeledSample& a, const LabeledSample& b,
                           Rng& rng, int ignore_id);

// CutMix with the weight fixed by the caller (the pair plan); only the box
// position comes from rng.
BlendedSample cutmix_blend_at(const LabeledSample& a, const LabeledSample& b,
                              double lambda, Rng& rng, int ignore_id);

struct BlendOutputOptions {
  bool float_npy = false;       // store images as lossless f8 .npy instead of PNG
  bool single_cluster = false;  // multi-class images join one cluster only
};

// Runs plan_pairs + blending, materializes D' under out_dir and returns its
// manifest. Deterministic for a given (manifest, strategy, seed); partial
// outputs are removed if generation aborts.
DatasetManifest generate_blended_dataset(const DatasetManifest& source,
                                         const ClassCatalog& catalog,
                                         const BlendStrategy& strategy,
                                         std::uint64_t seed,
                                         const std::filesystem::path& out_dir,
                                         const BlendOutputOptions& options = {});

}  // namespace fbind
