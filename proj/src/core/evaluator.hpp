#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "manifest.hpp"
#include "net.hpp"

namespace fbind {

// Entry [g][p] counts pixels with ground truth g predicted p; ignore pixels
// are never counted.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<long long> m;

  explicit ConfusionMatrix(int n = 0)
      : num_classes(n), m(static_cast<std::size_t>(n) * n, 0) {}

  long long& at(int gt, int pred) {
    return m[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  long long at(int gt, int pred) const {
    return m[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  void merge(const ConfusionMatrix& other);
};

void update_confusion(ConfusionMatrix& cm, const SegMask& pred,
                      const SegMask& gt, int ignore_id);

struct MiouResult {
  std::vector<std::optional<double>> per_class;  // empty union -> nullopt
  double miou = 0.0;
};

// IoU_c = diag / (row + col - diag); classes with zero union are left out of
// the mean. All unions zero is an error.
MiouResult miou(const ConfusionMatrix& cm);

// (i, j) occlude each other when the 1-pixel dilation (3x3) of one instance
// intersects the other.
std::set<std::pair<int, int>> detect_occlusions(const InstanceMask& instances);

enum class SubsetKind {
  All,
  Occ1,
  OccAll,
  NObjects,
  NUnique,
  CoocThreshold,
  CoOccurWith,
  Exclusive,
};

struct SubsetSpec {
  SubsetKind kind = SubsetKind::All;
  int n = 0;                // NObjects / NUnique
  long long threshold = 0;  // CoocThreshold
  int cls = 0;              // CoOccurWith / Exclusive
  int anchor = 0;           // CoOccurWith
  bool any_pair = false;    // CoocThreshold: any pair under threshold instead of all

  // Grammar: all | occ1 | occall | nobj=K | nuniq=K | cooc<T | excl=CLS | with=CLS
  static SubsetSpec parse(const std::string& text, int default_anchor);
  std::string describe() const;
  void validate() const;
};

// Keeps manifest order; occlusion/object-count kinds need instance
// annotations, CoocThreshold needs the training co-occurrence matrix.
DatasetManifest filter_subset(const DatasetManifest& manifest,
                              const SubsetSpec& spec,
                              const ClassCatalog& catalog,
                              const CoOccurrenceMatrix* cooc);

// clip(image + perturbation, 0, 1). The perturbation is tiled when smaller
// than the image and center-cropped when larger; when max_norm is given its
// L-inf norm must not exceed it.
Image apply_perturbation(const Image& image, const Image& perturbation,
                         std::optional<double> max_norm);

enum class EvalHead { Auto, Dominant, Phantom, Binding };

struct EvalOptions {
  EvalHead head = EvalHead::Auto;
  bool target_second = false;  // score against G2 instead of G1
  std::optional<std::filesystem::path> perturbation;
  std::optional<double> max_norm;
  bool per_image = false;
  std::string method = "model";
  std::string setting = "clean";
};

struct EvalReport {
  std::string subset;
  std::string method = "model";
  std::string setting = "clean";
  long long image_count = 0;
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  double mean_phantom_activation = 0.0;  // mean over images of sum relu(S_p)
  std::optional<double> threshold;       // set for cooc subsets
  std::map<std::string, double> per_image_iou;

  void save_json(const std::filesystem::path& path) const;
  static EvalReport load_json(const std::filesystem::path& path);
  void save_csv(const std::filesystem::path& path) const;
};

// Full-resolution inference over the subset; the serving head follows the
// checkpoint stage unless overridden.
EvalReport evaluate(BindingNet& net, const DatasetManifest& manifest,
                    const ClassCatalog& catalog, const SubsetSpec& spec,
                    const EvalOptions& options,
                    const CoOccurrenceMatrix* cooc = nullptr);

}  // namespace fbind
