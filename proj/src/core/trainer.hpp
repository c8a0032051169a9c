#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "losses.hpp"
#include "manifest.hpp"
#include "net.hpp"

namespace fbind {

struct TrainConfig {
  int stage = 1;
  double base_lr = 0.0;  // 0 resolves to the stage default (2.5e-4 / 2.5e-5)
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 30;
  double poly_power = 0.9;
  int crop_size = 321;
  int batch_size = 8;
  std::uint64_t seed = 1;
  double ppa_epsilon = 1e-12;
  int workers = 0;  // 0 is the bit-reproducible mode; loading is sequential

  double resolved_lr() const {
    if (base_lr > 0.0) return base_lr;
    return stage == 2 ? 2.5e-5 : 2.5e-4;
  }
  void validate() const;
};

// base_lr * (1 - iter/max_iter)^power
double poly_lr(long long iter, long long max_iter, double base_lr, double power);

struct CropTriple {
  Image image;
  SegMask mask1;
  std::optional<SegMask> mask2;
};

// One crop window shared by the image and every mask. Inputs smaller than
// `size` are padded bottom/right first (image with 0, masks with ignore_id).
CropTriple random_crop(const Image& image, const SegMask& mask1,
                       const SegMask* mask2, int size, int ignore_id, Rng& rng);

// Per-channel pixel statistics over the manifest's images.
Normalization compute_normalization(const DatasetManifest& manifest);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double l_fb = 0.0, l_t = 0.0, l_p = 0.0, l_ppa = 0.0, total = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// SGD with momentum, weight decay and the poly schedule. Stage 1 trains the
// whole network on (possibly blended) entries, weighting the three
// cross-entropies per entry by its delta. Stage 2 fine-tunes encoder and SSM
// branches with l_t + l_PPA; the binding head is frozen and skipped.
std::vector<EpochRecord> train_stage(BindingNet& net,
                                     const DatasetManifest& manifest,
                                     const ClassCatalog& catalog,
                                     const TrainConfig& config,
                                     const EpochCallback& on_epoch = nullptr);

}  // namespace fbind
