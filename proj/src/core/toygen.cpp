#include "toygen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>

#include "imageio.hpp"
#include "rng.hpp"

namespace fbind {

void ToyConfig::validate() const {
  if (n_images < 1) throw ValidationError("toygen: n_images must be positive");
  if (image_size < 16) throw ValidationError("toygen: image_size must be >= 16");
  if (n_classes < 1) throw ValidationError("toygen: need at least one shape class");
  if (occlusion_rate < 0.0 || occlusion_rate > 1.0) {
    throw ValidationError("toygen: occlusion_rate outside [0, 1]");
  }
  if (max_instances < 1) throw ValidationError("toygen: max_instances must be >= 1");
}

namespace {

enum class Shape { Disk, Square, Triangle, Cross };

Shape shape_for_class(int cls) {
  switch ((cls - 1) % 4) {
    case 0: return Shape::Disk;
    case 1: return Shape::Square;
    case 2: return Shape::Triangle;
    default: return Shape::Cross;
  }
}

// Hues kept moderately close so color alone does not saturate the task;
// shape identity carries part of the signal.
std::array<double, 3> base_color(int cls) {
  static const std::array<std::array<double, 3>, 8> palette = {{
      {0.70, 0.30, 0.30},
      {0.70, 0.55, 0.25},
      {0.45, 0.65, 0.30},
      {0.30, 0.55, 0.65},
      {0.60, 0.30, 0.60},
      {0.30, 0.65, 0.45},
      {0.75, 0.45, 0.45},
      {0.50, 0.40, 0.25},
  }};
  return palette[static_cast<std::size_t>(cls - 1) % palette.size()];
}

bool inside_shape(Shape s, int y, int x, int cy, int cx, int r) {
  const int dy = y - cy, dx = x - cx;
  switch (s) {
    case Shape::Disk:
      return dy * dy + dx * dx <= r * r;
    case Shape::Square:
      return std::abs(dy) <= r && std::abs(dx) <= r;
    case Shape::Triangle: {
      if (dy < -r || dy > r) return false;
      const double half = (dy + r) * 0.5;
      return std::abs(dx) <= half;
    }
    case Shape::Cross: {
      const int arm = std::max(1, r / 3);
      return (std::abs(dy) <= arm && std::abs(dx) <= r) ||
             (std::abs(dx) <= arm && std::abs(dy) <= r);
    }
  }
  return false;
}

struct Placement {
  int cls = 0, cy = 0, cx = 0, r = 0;
  Shape shape = Shape::Disk;
};

std::vector<std::pair<int, int>> shape_pixels(const Placement& p, int size) {
  std::vector<std::pair<int, int>> px;
  const int y0 = std::max(0, p.cy - p.r), y1 = std::min(size - 1, p.cy + p.r);
  const int x0 = std::max(0, p.cx - p.r), x1 = std::min(size - 1, p.cx + p.r);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (inside_shape(p.shape, y, x, p.cy, p.cx, p.r)) px.emplace_back(y, x);
    }
  }
  return px;
}

// Chebyshev distance from any candidate pixel to any occupied pixel.
int min_chebyshev_to_occupied(const std::vector<std::pair<int, int>>& px,
                              const SegMask& ids, int limit) {
  int best = limit + 1;
  for (const auto& [y, x] : px) {
    const int yy0 = std::max(0, y - limit), yy1 = std::min(ids.h - 1, y + limit);
    const int xx0 = std::max(0, x - limit), xx1 = std::min(ids.w - 1, x + limit);
    for (int yy = yy0; yy <= yy1; ++yy) {
      for (int xx = xx0; xx <= xx1; ++xx) {
        if (ids.at(yy, xx) != 0) {
          const int d = std::max(std::abs(yy - y), std::abs(xx - x));
          best = std::min(best, d);
          if (best == 0) return 0;
        }
      }
    }
  }
  return best;
}

// Occluding pairs from the final composited id map: ids are occluding when
// some pixel of one lies within Chebyshev distance 1 of the other.
std::vector<std::pair<int, int>> occlusions_from_ids(const SegMask& ids) {
  std::set<std::pair<int, int>> pairs;
  for (int y = 0; y < ids.h; ++y) {
    for (int x = 0; x < ids.w; ++x) {
      const int i = ids.at(y, x);
      if (i == 0) continue;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= ids.h || xx < 0 || xx >= ids.w) continue;
          const int j = ids.at(yy, xx);
          if (j != 0 && j != i) {
            pairs.emplace(std::min(i, j), std::max(i, j));
          }
        }
      }
    }
  }
  return {pairs.begin(), pairs.end()};
}

struct ToyImage {
  Image image;
  SegMask mask;
  InstanceMask instances;
};

ToyImage generate_one(const ToyConfig& cfg, int n_instances, int class_offset,
                      Rng& rng) {
  const int size = cfg.image_size;
  ToyImage out;
  out.mask = SegMask(size, size, 0);
  out.instances.ids = SegMask(size, size, 0);

  // noisy background around a per-image base gray
  out.image = Image(size, size);
  const double base = rng.uniform(0.35, 0.55);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.image.at(y, x, c) = std::clamp(base + rng.uniform(-0.04, 0.04), 0.0, 1.0);
      }
    }
  }

  const int r_lo = std::max(3, size / 8), r_hi = std::max(r_lo + 1, size / 4);
  std::vector<Placement> placed;
  int next_instance_id = 1;

  for (int slot = 0; slot < n_instances; ++slot) {
    const int cls = 1 + (class_offset + slot) % cfg.n_classes;
    const bool force_occlusion =
        !placed.empty() && rng.uniform() < cfg.occlusion_rate;

    Placement p;
    p.cls = cls;
    p.shape = shape_for_class(cls);
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      p.r = r_lo + static_cast<int>(rng.uniform_int(
                       static_cast<std::uint64_t>(r_hi - r_lo + 1)));
      if (force_occlusion) {
        const auto& prior =
            placed[static_cast<std::size_t>(rng.uniform_int(placed.size()))];
        p.cy = prior.cy + static_cast<int>(rng.uniform_int(
                              static_cast<std::uint64_t>(2 * prior.r + 1))) -
               prior.r;
        p.cx = prior.cx + static_cast<int>(rng.uniform_int(
                              static_cast<std::uint64_t>(2 * prior.r + 1))) -
               prior.r;
        p.cy = std::clamp(p.cy, p.r, size - 1 - p.r);
        p.cx = std::clamp(p.cx, p.r, size - 1 - p.r);
      } else {
        p.cy = p.r + static_cast<int>(rng.uniform_int(
                         static_cast<std::uint64_t>(size - 2 * p.r)));
        p.cx = p.r + static_cast<int>(rng.uniform_int(
                         static_cast<std::uint64_t>(size - 2 * p.r)));
      }
      const auto px = shape_pixels(p, size);
      if (px.empty()) continue;

      if (force_occlusion) {
        // must overlap something already visible...
        bool overlaps = false;
        for (const auto& [y, x] : px) {
          if (out.instances.ids.at(y, x) != 0) {
            overlaps = true;
            break;
          }
        }
        if (!overlaps) continue;
        // ...without erasing any earlier instance entirely
        std::set<int> survivors;
        for (int y = 0; y < size && survivors.size() < placed.size(); ++y) {
          for (int x = 0; x < size; ++x) {
            const int id = out.instances.ids.at(y, x);
            if (id == 0) continue;
            if (!inside_shape(p.shape, y, x, p.cy, p.cx, p.r)) survivors.insert(id);
          }
        }
        if (survivors.size() < static_cast<std::size_t>(next_instance_id - 1)) continue;
      } else {
        // keep a >= 2px background gap so no occlusion pair forms
        if (min_chebyshev_to_occupied(px, out.instances.ids, 2) <= 2) continue;
      }

      // draw on top
      auto color = base_color(cls);
      for (double& ch : color) {
        ch = std::clamp(ch + rng.uniform(-0.10, 0.10), 0.0, 1.0);
      }
      for (const auto& [y, x] : px) {
        out.instances.ids.at(y, x) = next_instance_id;
        out.mask.at(y, x) = cls;
        for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = color[c];
      }
      out.instances.instance_class[next_instance_id] = cls;
      placed.push_back(p);
      ++next_instance_id;
      ok = true;
    }
    // slot dropped when no valid placement was found
  }

  out.instances.recorded_occlusions = occlusions_from_ids(out.instances.ids);
  return out;
}

std::string zero_pad(int v, int width) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%0*d", width, v);
  return buf;
}

}  // namespace

DatasetManifest generate_toy_dataset(const ToyConfig& config,
                                     const std::filesystem::path& out_dir) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  fs::create_directories(out_dir / "instances");

  // Instance counts first: class assignment is round-robin over the global
  // slot sequence, so per-class totals stay balanced whatever each image
  // draws.
  std::vector<int> instance_counts(static_cast<std::size_t>(config.n_images));
  std::vector<int> class_offsets(static_cast<std::size_t>(config.n_images));
  int offset = 0;
  for (int i = 0; i < config.n_images; ++i) {
    Rng head(Rng::derive(config.seed, static_cast<std::uint64_t>(i)));
    instance_counts[i] =
        1 + static_cast<int>(head.uniform_int(
                static_cast<std::uint64_t>(config.max_instances)));
    class_offsets[i] = offset;
    offset += instance_counts[i];
  }

  DatasetManifest manifest;
  manifest.dir = out_dir;
  for (int i = 0; i < config.n_images; ++i) {
    Rng rng(Rng::derive(config.seed, static_cast<std::uint64_t>(i)));
    rng.uniform_int(static_cast<std::uint64_t>(config.max_instances));  // replay the count draw
    ToyImage img = generate_one(config, instance_counts[i], class_offsets[i], rng);

    const std::string stem = zero_pad(i, 4);
    write_image_png(out_dir / "images" / (stem + ".png"), img.image);
    write_mask_png(out_dir / "masks" / (stem + ".png"), img.mask);
    write_instance_mask(out_dir / "instances" / (stem + ".png"), img.instances);

    ManifestEntry e;
    e.id = "toy_" + stem;
    e.image_path = "images/" + stem + ".png";
    e.mask_path = "masks/" + stem + ".png";
    e.instance_path = "instances/" + stem + ".png";
    e.strategy_tag = "standard";
    manifest.entries.push_back(std::move(e));
  }
  manifest.write(out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace fbind
