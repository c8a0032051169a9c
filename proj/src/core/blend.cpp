#include "blend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <unordered_map>

#include "imageio.hpp"

namespace fbind {

const char* blend_tag_name(BlendTag tag) {
  switch (tag) {
    case BlendTag::CFB: return "cfb";
    case BlendTag::RFB: return "rfb";
    case BlendTag::CAFB: return "cafb";
    case BlendTag::WRFB: return "wrfb";
    case BlendTag::MFB: return "mfb";
    case BlendTag::MIXUP: return "mixup";
    case BlendTag::CUTMIX: return "cutmix";
  }
  return "?";
}

BlendTag parse_blend_tag(const std::string& name) {
  for (BlendTag t : {BlendTag::CFB, BlendTag::RFB, BlendTag::CAFB,
                     BlendTag::WRFB, BlendTag::MFB, BlendTag::MIXUP,
                     BlendTag::CUTMIX}) {
    if (name == blend_tag_name(t)) return t;
  }
  throw ValidationError("unknown blend strategy '" + name +
                        "' (expected cfb|rfb|cafb|wrfb|mfb|mixup|cutmix)");
}

void BlendStrategy::validate() const {
  if (!(delta_lo > 0.0 && delta_lo <= delta_hi && delta_hi <= 1.0)) {
    throw ValidationError("delta range must satisfy 0 < lo <= hi <= 1");
  }
  if (partners < 1) throw ValidationError("partner count must be >= 1");
  if (mixup_alpha <= 0.0) throw ValidationError("mixup alpha must be positive");
}

std::map<int, std::vector<std::string>> build_category_clusters(
    const DatasetManifest& manifest, const ClassCatalog& catalog,
    bool single_cluster) {
  std::map<int, std::vector<std::string>> clusters;
  for (int c = 1; c < catalog.num_classes; ++c) {
    clusters[c] = {};
  }
  for (const auto& e : manifest.entries) {
    SegMask mask = read_mask_png(manifest.resolve(e.mask_path));
    if (single_cluster) {
      std::map<int, long long> pixels;
      for (int v : mask.v) {
        if (v != catalog.background_id && v != catalog.ignore_id) ++pixels[v];
      }
      int best = 0;
      long long best_n = 0;
      for (const auto& [c, n] : pixels) {
        if (n > best_n) {
          best = c;
          best_n = n;
        }
      }
      if (best != 0) clusters[best].push_back(e.id);
    } else {
      for (int c : class_set(mask, catalog)) {
        clusters[c].push_back(e.id);
      }
    }
  }
  return clusters;
}

double sample_delta(const BlendStrategy& strategy, Rng& rng) {
  switch (strategy.tag) {
    case BlendTag::WRFB:
      return 0.6;
    case BlendTag::MIXUP: {
      double l = 0.0;
      do {
        l = rng.beta(strategy.mixup_alpha, strategy.mixup_alpha);
      } while (l <= 0.0);
      return l;
    }
    case BlendTag::CUTMIX: {
      double l = 0.0;
      do {
        l = rng.beta(1.0, 1.0);
      } while (l <= 0.0);
      return l;
    }
    default:
      return rng.uniform(strategy.delta_lo, strategy.delta_hi);
  }
}

namespace {

// Uniform element of `pool` excluding `self`; empty string when no candidate.
std::string pick_partner(const std::vector<std::string>& pool,
                         const std::string& self, Rng& rng) {
  std::size_t self_pos = pool.size();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i] == self) {
      self_pos = i;
      break;
    }
  }
  const std::size_t n = pool.size() - (self_pos < pool.size() ? 1 : 0);
  if (n == 0) return {};
  std::size_t r = static_cast<std::size_t>(rng.uniform_int(n));
  if (self_pos < pool.size() && r >= self_pos) ++r;
  return pool[r];
}

}  // namespace

PairPlan plan_pairs(const BlendStrategy& strategy,
                    const std::map<int, std::vector<std::string>>& clusters,
                    const DatasetManifest& manifest, std::uint64_t seed) {
  strategy.validate();
  PairPlan plan;
  plan.strategy = strategy;
  plan.seed = seed;
  Rng rng(seed);

  std::vector<std::string> all_ids;
  all_ids.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) all_ids.push_back(e.id);

  switch (strategy.tag) {
    case BlendTag::CFB: {
      for (const auto& [c, members] : clusters) {
        for (const auto& id : members) {
          for (const auto& [d, partners] : clusters) {
            if (d == c || partners.empty()) continue;
            const std::string partner = pick_partner(partners, id, rng);
            if (partner.empty()) continue;
            plan.pairs.push_back({id, partner, sample_delta(strategy, rng)});
          }
        }
      }
      break;
    }
    case BlendTag::RFB:
    case BlendTag::WRFB: {
      for (const auto& id : all_ids) {
        for (int k = 0; k < strategy.partners; ++k) {
          const std::string partner = pick_partner(all_ids, id, rng);
          if (partner.empty()) break;
          plan.pairs.push_back({id, partner, sample_delta(strategy, rng)});
        }
      }
      break;
    }
    case BlendTag::CAFB: {
      for (const auto& [c, members] : clusters) {
        for (const auto& id : members) {
          const std::string partner = pick_partner(members, id, rng);
          if (partner.empty()) {
            std::cerr << "WARN cafb: cluster " << c << " has only '" << id
                      << "', skipping\n";
            continue;
          }
          plan.pairs.push_back({id, partner, sample_delta(strategy, rng)});
        }
      }
      break;
    }
    case BlendTag::MFB: {
      std::vector<std::size_t> order(all_ids.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      std::vector<bool> in_blend_half(all_ids.size(), false);
      std::vector<std::string> blend_ids;
      for (std::size_t i = 0; i < order.size() / 2; ++i) {
        in_blend_half[order[i]] = true;
      }
      for (std::size_t i = 0; i < all_ids.size(); ++i) {
        if (in_blend_half[i]) blend_ids.push_back(all_ids[i]);
      }
      for (std::size_t i = 0; i < all_ids.size(); ++i) {
        if (in_blend_half[i]) {
          const std::string partner = pick_partner(blend_ids, all_ids[i], rng);
          if (!partner.empty()) {
            plan.pairs.push_back({all_ids[i], partner, sample_delta(strategy, rng)});
            continue;
          }
        }
        plan.pairs.push_back({all_ids[i], "", 1.0});  // unblended half
      }
      break;
    }
    case BlendTag::MIXUP:
    case BlendTag::CUTMIX: {
      for (const auto& id : all_ids) {
        const std::string partner = pick_partner(all_ids, id, rng);
        if (partner.empty()) continue;
        plan.pairs.push_back({id, partner, sample_delta(strategy, rng)});
      }
      break;
    }
  }
  return plan;
}

namespace {

// Phantom geometry onto the dominant's: cover-scale + center crop.
void align_phantom(const LabeledSample& phantom, int h, int w, Image* image,
                   SegMask* mask) {
  *image = align_cover(phantom.image, h, w);
  *mask = align_cover(phantom.mask, h, w, 0);
}

}  // namespace

BlendedSample blend_pair(const LabeledSample& dominant,
                         const LabeledSample& phantom, double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw ValidationError("blend delta " + std::to_string(delta) +
                          " outside (0, 1]");
  }
  BlendedSample out;
  out.delta = delta;
  out.mask1 = dominant.mask;
  Image ph_img;
  align_phantom(phantom, dominant.image.h, dominant.image.w, &ph_img, &out.mask2);
  out.image = Image(dominant.image.h, dominant.image.w);
  for (std::size_t i = 0; i < out.image.v.size(); ++i) {
    out.image.v[i] = delta * dominant.image.v[i] + (1.0 - delta) * ph_img.v[i];
  }
  return out;
}

BlendedSample mixup_blend(const LabeledSample& a, const LabeledSample& b,
                          double lambda) {
  return blend_pair(a, b, lambda);
}

BlendedSample cutmix_blend_at(const LabeledSample& a, const LabeledSample& b,
                              double lambda, Rng& rng, int ignore_id) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw ValidationError("cutmix lambda outside (0, 1]");
  }
  const int h = a.image.h, w = a.image.w;
  BlendedSample out;
  out.delta = lambda;
  out.image = a.image;
  out.mask1 = a.mask;
  out.mask2 = SegMask(h, w, ignore_id);

  const double frac = std::sqrt(1.0 - lambda);
  const int rh = static_cast<int>(std::lround(h * frac));
  const int rw = static_cast<int>(std::lround(w * frac));
  if (rh <= 0 || rw <= 0) return out;

  Image b_img;
  SegMask b_mask;
  align_phantom(b, h, w, &b_img, &b_mask);
  const int ty = static_cast<int>(rng.uniform_int(
      static_cast<std::uint64_t>(h - rh + 1)));
  const int tx = static_cast<int>(rng.uniform_int(
      static_cast<std::uint64_t>(w - rw + 1)));
  for (int y = ty; y < ty + rh; ++y) {
    for (int x = tx; x < tx + rw; ++x) {
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = b_img.at(y, x, c);
      out.mask1.at(y, x) = b_mask.at(y, x);
    }
  }
  return out;
}

BlendedSample cutmix_blend(const LabeledSample& a, const LabeledSample& b,
                           Rng& rng, int ignore_id) {
  double l = 0.0;
  do {
    l = rng.beta(1.0, 1.0);
  } while (l <= 0.0);
  return cutmix_blend_at(a, b, l, rng, ignore_id);
}

namespace {

struct OutputTracker {
  std::vector<std::filesystem::path> written;

  void record(const std::filesystem::path& p) { written.push_back(p); }
  void cleanup() {
    std::error_code ec;
    for (const auto& p : written) std::filesystem::remove(p, ec);
  }
};

std::string pair_entry_id(std::size_t index, const PlannedPair& p) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  if (p.phantom_id.empty()) return std::string(buf) + "_" + p.dominant_id;
  return std::string(buf) + "_" + p.dominant_id + "_" + p.phantom_id;
}

}  // namespace

DatasetManifest generate_blended_dataset(const DatasetManifest& source,
                                         const ClassCatalog& catalog,
                                         const BlendStrategy& strategy,
                                         std::uint64_t seed,
                                         const std::filesystem::path& out_dir,
                                         const BlendOutputOptions& options) {
  strategy.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");

  std::map<int, std::vector<std::string>> clusters;
  if (strategy.tag == BlendTag::CFB || strategy.tag == BlendTag::CAFB) {
    clusters = build_category_clusters(source, catalog, options.single_cluster);
    bool any = false;
    for (const auto& [c, members] : clusters) any = any || !members.empty();
    if (!any) {
      throw ValidationError("no nonempty category cluster; cannot plan " +
                            std::string(blend_tag_name(strategy.tag)) + " pairs");
    }
  }
  const PairPlan plan = plan_pairs(strategy, clusters, source, seed);

  std::unordered_map<std::string, LabeledSample> cache;
  const auto sample_of = [&](const std::string& id) -> const LabeledSample& {
    auto it = cache.find(id);
    if (it == cache.end()) {
      it = cache.emplace(id, load_sample(source.find(id), source, catalog)).first;
    }
    return it->second;
  };

  DatasetManifest manifest;
  manifest.dir = out_dir;
  OutputTracker tracker;
  try {
    for (std::size_t i = 0; i < plan.pairs.size(); ++i) {
      const PlannedPair& pp = plan.pairs[i];
      const LabeledSample& dom = sample_of(pp.dominant_id);

      BlendedSample blended;
      if (pp.phantom_id.empty()) {
        // MFB standard half: delta 1, all-ignore second map
        blended.image = dom.image;
        blended.mask1 = dom.mask;
        blended.mask2 = SegMask(dom.mask.h, dom.mask.w, catalog.ignore_id);
        blended.delta = 1.0;
      } else {
        const LabeledSample& pha = sample_of(pp.phantom_id);
        switch (strategy.tag) {
          case BlendTag::MIXUP:
            blended = mixup_blend(dom, pha, pp.delta);
            break;
          case BlendTag::CUTMIX: {
            Rng pair_rng(Rng::derive(seed, i));
            blended = cutmix_blend_at(dom, pha, pp.delta, pair_rng, catalog.ignore_id);
            break;
          }
          default:
            blended = blend_pair(dom, pha, pp.delta);
        }
      }

      const std::string id = pair_entry_id(i, pp);
      const std::string img_name =
          "images/" + id + (options.float_npy ? ".npy" : ".png");
      const auto img_path = out_dir / img_name;
      if (options.float_npy) {
        write_image_npy(img_path, blended.image);
      } else {
        write_image_png(img_path, blended.image);
      }
      tracker.record(img_path);
      const std::string m1_name = "masks/" + id + "_g1.png";
      const std::string m2_name = "masks/" + id + "_g2.png";
      write_mask_png(out_dir / m1_name, blended.mask1);
      tracker.record(out_dir / m1_name);
      write_mask_png(out_dir / m2_name, blended.mask2);
      tracker.record(out_dir / m2_name);

      ManifestEntry e;
      e.id = id;
      e.image_path = img_name;
      e.mask_path = m1_name;
      e.second_mask_path = m2_name;
      e.delta = blended.delta;
      if (pp.phantom_id.empty()) {
        e.source_ids = std::vector<std::string>{pp.dominant_id};
      } else {
        e.source_ids = std::vector<std::string>{pp.dominant_id, pp.phantom_id};
      }
      e.strategy_tag = blend_tag_name(strategy.tag);
      manifest.entries.push_back(std::move(e));
    }
    manifest.write(out_dir / "manifest.jsonl");
  } catch (...) {
    tracker.cleanup();
    throw;
  }
  return manifest;
}

}  // namespace fbind
