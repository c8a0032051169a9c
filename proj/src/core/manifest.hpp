#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "catalog.hpp"
#include "image.hpp"

namespace fbind {

// One JSONL record. Paths are stored as written and resolved against the
// manifest's directory on load. `delta` is present iff `second_mask_path`
// is present (an entry is "blended" exactly when it carries both).
struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::string mask_path;
  std::optional<std::string> instance_path;
  std::optional<std::string> second_mask_path;
  std::optional<double> delta;
  std::optional<std::vector<std::string>> source_ids;
  std::string strategy_tag = "standard";

  bool blended() const { return second_mask_path.has_value(); }
};

struct DatasetManifest {
  std::filesystem::path dir;  // base for relative paths
  std::vector<ManifestEntry> entries;

  static DatasetManifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

  std::filesystem::path resolve(const std::string& rel) const;
  const ManifestEntry& find(const std::string& id) const;
  void validate() const;
};

// Symmetric per-pair image counts; diagonal holds per-class image counts.
struct CoOccurrenceMatrix {
  int num_classes = 0;
  std::vector<long long> counts;  // num_classes^2, pair counts, zero diagonal
  std::vector<long long> diagonal;

  explicit CoOccurrenceMatrix(int n = 0)
      : num_classes(n),
        counts(static_cast<std::size_t>(n) * n, 0),
        diagonal(static_cast<std::size_t>(n), 0) {}

  long long& at(int a, int b) {
    return counts[static_cast<std::size_t>(a) * num_classes + b];
  }
  long long at(int a, int b) const {
    return counts[static_cast<std::size_t>(a) * num_classes + b];
  }

  void save_json(const std::filesystem::path& path) const;
  static CoOccurrenceMatrix load_json(const std::filesystem::path& path);
};

LabeledSample load_sample(const ManifestEntry& entry,
                          const DatasetManifest& manifest,
                          const ClassCatalog& catalog);

// Second ground-truth map of a blended entry, resolved and validated.
SegMask load_second_mask(const ManifestEntry& entry,
                         const DatasetManifest& manifest,
                         const ClassCatalog& catalog);

// Non-background, non-ignore class ids present in the mask.
std::set<int> class_set(const SegMask& mask, const ClassCatalog& catalog);

CoOccurrenceMatrix compute_cooccurrence(const DatasetManifest& manifest,
                                        const ClassCatalog& catalog);

// Highest class id over all masks in the manifest (ignore excluded), used to
// infer a catalog when none is given.
int scan_max_class_id(const DatasetManifest& manifest, int ignore_id);

// Instance sidecar: {"instances": {"1": class, ...},
//                    "occluding_pairs": [[i, j], ...]}
InstanceMask read_instance_mask(const std::filesystem::path& png_path);
void write_instance_mask(const std::filesystem::path& png_path,
                         const InstanceMask& inst);

// Sidecar path convention: instance PNG path with extension swapped to .json.
std::filesystem::path instance_sidecar_path(const std::filesystem::path& png_path);

}  // namespace fbind
