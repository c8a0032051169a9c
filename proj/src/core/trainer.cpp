#include "trainer.hpp"

#include <algorithm>
#include <cmath>

#include "imageio.hpp"

namespace fbind {

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ValidationError("stage must be 1 or 2");
  if (base_lr < 0.0) throw ValidationError("base_lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ValidationError("momentum must lie in [0, 1)");
  }
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (poly_power <= 0.0) throw ValidationError("poly_power must be positive");
  if (crop_size < 1) throw ValidationError("crop_size must be positive");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (ppa_epsilon <= 0.0) throw ValidationError("ppa_epsilon must be positive");
  if (workers < 0) throw ValidationError("workers must be >= 0");
}

double poly_lr(long long iter, long long max_iter, double base_lr, double power) {
  if (iter < 0 || iter > max_iter || max_iter <= 0) {
    throw ValidationError("poly_lr: iter outside [0, max_iter]");
  }
  return base_lr *
         std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter),
                  power);
}

namespace {

Image pad_image(const Image& img, int h, int w) {
  if (img.h >= h && img.w >= w) return img;
  Image out(std::max(img.h, h), std::max(img.w, w), 0.0);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
    }
  }
  return out;
}

SegMask pad_mask(const SegMask& m, int h, int w, int fill) {
  if (m.h >= h && m.w >= w) return m;
  SegMask out(std::max(m.h, h), std::max(m.w, w), fill);
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < m.w; ++x) out.at(y, x) = m.at(y, x);
  }
  return out;
}

}  // namespace

CropTriple random_crop(const Image& image, const SegMask& mask1,
                       const SegMask* mask2, int size, int ignore_id,
                       Rng& rng) {
  if (size < 1) throw ValidationError("crop size must be positive");
  const Image img = pad_image(image, size, size);
  const SegMask m1 = pad_mask(mask1, size, size, ignore_id);
  std::optional<SegMask> m2;
  if (mask2) m2 = pad_mask(*mask2, size, size, ignore_id);

  const int oy = static_cast<int>(rng.uniform_int(
      static_cast<std::uint64_t>(img.h - size + 1)));
  const int ox = static_cast<int>(rng.uniform_int(
      static_cast<std::uint64_t>(img.w - size + 1)));

  CropTriple out;
  out.image = Image(size, size);
  out.mask1 = SegMask(size, size);
  if (m2) out.mask2 = SegMask(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.image.at(y, x, c) = img.at(y + oy, x + ox, c);
      }
      out.mask1.at(y, x) = m1.at(y + oy, x + ox);
      if (m2) out.mask2->at(y, x) = m2->at(y + oy, x + ox);
    }
  }
  return out;
}

Normalization compute_normalization(const DatasetManifest& manifest) {
  Normalization n;
  std::array<double, 3> sum{0, 0, 0}, sum_sq{0, 0, 0};
  long long count = 0;
  for (const auto& e : manifest.entries) {
    const Image img = read_image(manifest.resolve(e.image_path));
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double v = img.at(y, x, c);
          sum[c] += v;
          sum_sq[c] += v * v;
        }
      }
    }
    count += static_cast<long long>(img.h) * img.w;
  }
  if (count == 0) throw ValidationError("cannot normalize an empty manifest");
  for (int c = 0; c < 3; ++c) {
    n.mean[c] = sum[c] / static_cast<double>(count);
    const double var = sum_sq[c] / static_cast<double>(count) - n.mean[c] * n.mean[c];
    n.stddev[c] = std::sqrt(std::max(var, 1e-8));
  }
  n.initialized = true;
  return n;
}

namespace {

struct TrainEntry {
  const ManifestEntry* entry;
};

struct SgdState {
  std::vector<std::vector<double>> velocity;
};

}  // namespace

std::vector<EpochRecord> train_stage(BindingNet& net,
                                     const DatasetManifest& manifest,
                                     const ClassCatalog& catalog,
                                     const TrainConfig& config,
                                     const EpochCallback& on_epoch) {
  config.validate();
  if (manifest.entries.empty()) {
    throw ValidationError("training manifest is empty");
  }
  if (net.cfg.num_classes != catalog.num_classes) {
    throw ValidationError("network has " + std::to_string(net.cfg.num_classes) +
                          " classes but catalog has " +
                          std::to_string(catalog.num_classes));
  }

  if (!net.norm.initialized) {
    net.norm = compute_normalization(manifest);
  }

  const bool stage1 = config.stage == 1;
  const double base_lr = config.resolved_lr();
  auto params = net.params(/*fbh_frozen=*/!stage1);

  SgdState sgd;
  sgd.velocity.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    sgd.velocity[i].assign(params[i].w->size(), 0.0);
  }

  const long long n = static_cast<long long>(manifest.entries.size());
  const long long batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const long long max_iter = batches_per_epoch * config.epochs;
  long long iter = 0;

  std::vector<EpochRecord> log;
  net.zero_grads();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(Rng::derive(config.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(manifest.entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = poly_lr(iter, max_iter, base_lr, config.poly_power);
    long long seen = 0;

    for (long long b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * config.batch_size;
      const std::size_t hi =
          std::min(order.size(), lo + static_cast<std::size_t>(config.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(hi - lo);

      for (std::size_t s = lo; s < hi; ++s) {
        const ManifestEntry& entry = manifest.entries[order[s]];
        const LabeledSample sample = load_sample(entry, manifest, catalog);
        std::optional<SegMask> second;
        double delta = 1.0;
        if (entry.blended()) {
          second = load_second_mask(entry, manifest, catalog);
          delta = *entry.delta;
        }

        CropTriple crop =
            random_crop(sample.image, sample.mask,
                        second ? &*second : nullptr, config.crop_size,
                        catalog.ignore_id, rng);
        if (!crop.mask2) {
          crop.mask2 = SegMask(config.crop_size, config.crop_size, catalog.ignore_id);
        }

        PredictionTriple t = net.forward(crop.image, /*include_fbh=*/stage1);
        const Tensor st_up = net.upsample_to_input(t.st, t);
        const Tensor sp_up = net.upsample_to_input(t.sp, t);

        LossBreakdown lb;
        Tensor g_st, g_sp, g_fb;
        if (stage1) {
          const Tensor sfb_up = net.upsample_to_input(*t.sfb, t);
          Stage1Grads grads;
          lb = loss_stage1(sfb_up, st_up, sp_up, crop.mask1, *crop.mask2, delta,
                           catalog.ignore_id, &grads);
          g_fb = std::move(grads.g_fb);
          g_st = std::move(grads.g_t);
          g_sp = std::move(grads.g_p);
        } else {
          lb = loss_stage2(st_up, sp_up, crop.mask1, config.ppa_epsilon,
                           catalog.ignore_id, &g_st, &g_sp);
        }

        for (double& g : g_st.v) g *= inv_batch;
        for (double& g : g_sp.v) g *= inv_batch;
        if (stage1) {
          for (double& g : g_fb.v) g *= inv_batch;
        }
        net.backward(t, &g_st, &g_sp, stage1 ? &g_fb : nullptr);

        rec.l_fb += lb.l_fb;
        rec.l_t += lb.l_t;
        rec.l_p += lb.l_p;
        rec.l_ppa += lb.l_ppa;
        rec.total += lb.total;
        ++seen;
      }

      const double lr = poly_lr(iter, max_iter, base_lr, config.poly_power);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].frozen) continue;
        auto& w = *params[i].w;
        auto& g = *params[i].g;
        auto& v = sgd.velocity[i];
        const double wd = config.weight_decay;
        const double mu = config.momentum;
        for (std::size_t j = 0; j < w.size(); ++j) {
          v[j] = mu * v[j] + g[j] + wd * w[j];
          w[j] -= lr * v[j];
        }
      }
      net.zero_grads();
      ++iter;
    }

    const double inv = 1.0 / static_cast<double>(seen);
    rec.l_fb *= inv;
    rec.l_t *= inv;
    rec.l_p *= inv;
    rec.l_ppa *= inv;
    rec.total *= inv;
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  net.stage = config.stage;
  return log;
}

}  // namespace fbind
