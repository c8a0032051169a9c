#include "evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "imageio.hpp"
#include "json.hpp"

namespace fbind {

using nlohmann::json;

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) {
    throw ValidationError("confusion matrices differ in class count");
  }
  for (std::size_t i = 0; i < m.size(); ++i) m[i] += other.m[i];
}

void update_confusion(ConfusionMatrix& cm, const SegMask& pred,
                      const SegMask& gt, int ignore_id) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw ValidationError("confusion update: prediction and ground truth differ in shape");
  }
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    const int g = gt.v[i];
    if (g == ignore_id) continue;
    const int p = pred.v[i];
    if (g < 0 || g >= cm.num_classes || p < 0 || p >= cm.num_classes) {
      throw ValidationError("confusion update: label outside class range");
    }
    ++cm.at(g, p);
  }
}

MiouResult miou(const ConfusionMatrix& cm) {
  const int C = cm.num_classes;
  MiouResult r;
  r.per_class.assign(static_cast<std::size_t>(C), std::nullopt);
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < C; ++c) {
    long long row = 0, col = 0;
    for (int k = 0; k < C; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const long long inter = cm.at(c, c);
    const long long uni = row + col - inter;
    if (uni == 0) continue;
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    r.per_class[c] = iou;
    sum += iou;
    ++counted;
  }
  if (counted == 0) throw ValidationError("empty evaluation: no class has pixels");
  r.miou = sum / counted;
  return r;
}

std::set<std::pair<int, int>> detect_occlusions(const InstanceMask& instances) {
  const SegMask& ids = instances.ids;
  std::set<std::pair<int, int>> pairs;
  for (const auto& [id, cls] : instances.instance_class) {
    (void)cls;
    // dilate this instance by one pixel, then intersect everyone else
    SegMask dilated(ids.h, ids.w, 0);
    for (int y = 0; y < ids.h; ++y) {
      for (int x = 0; x < ids.w; ++x) {
        if (ids.at(y, x) != id) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < ids.h && xx >= 0 && xx < ids.w) {
              dilated.at(yy, xx) = 1;
            }
          }
        }
      }
    }
    for (int y = 0; y < ids.h; ++y) {
      for (int x = 0; x < ids.w; ++x) {
        const int other = ids.at(y, x);
        if (other != 0 && other != id && dilated.at(y, x)) {
          pairs.emplace(std::min(id, other), std::max(id, other));
        }
      }
    }
  }
  return pairs;
}

SubsetSpec SubsetSpec::parse(const std::string& text, int default_anchor) {
  SubsetSpec s;
  const auto int_arg = [&](const std::string& prefix) {
    const std::string v = text.substr(prefix.size());
    try {
      std::size_t used = 0;
      const int n = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw ValidationError("bad subset argument in '" + text + "'");
    }
  };
  if (text.empty() || text == "all") {
    s.kind = SubsetKind::All;
  } else if (text == "occ1") {
    s.kind = SubsetKind::Occ1;
  } else if (text == "occall") {
    s.kind = SubsetKind::OccAll;
  } else if (text.rfind("nobj=", 0) == 0) {
    s.kind = SubsetKind::NObjects;
    s.n = int_arg("nobj=");
  } else if (text.rfind("nuniq=", 0) == 0) {
    s.kind = SubsetKind::NUnique;
    s.n = int_arg("nuniq=");
  } else if (text.rfind("cooc<", 0) == 0) {
    s.kind = SubsetKind::CoocThreshold;
    s.threshold = int_arg("cooc<");
  } else if (text.rfind("excl=", 0) == 0) {
    s.kind = SubsetKind::Exclusive;
    s.cls = int_arg("excl=");
  } else if (text.rfind("with=", 0) == 0) {
    s.kind = SubsetKind::CoOccurWith;
    s.cls = int_arg("with=");
    s.anchor = default_anchor;
  } else {
    throw ValidationError(
        "unknown subset '" + text +
        "' (expected all|occ1|occall|nobj=K|nuniq=K|cooc<T|excl=CLS|with=CLS)");
  }
  s.validate();
  return s;
}

void SubsetSpec::validate() const {
  switch (kind) {
    case SubsetKind::NObjects:
      if (n < 1) throw ValidationError("nobj subset needs a positive count");
      break;
    case SubsetKind::NUnique:
      if (n < 2) throw ValidationError("nuniq subset needs a count >= 2");
      break;
    case SubsetKind::CoocThreshold:
      if (threshold < 1) throw ValidationError("cooc subset needs a positive threshold");
      break;
    case SubsetKind::Exclusive:
      if (cls < 1) throw ValidationError("excl subset needs a foreground class id");
      break;
    case SubsetKind::CoOccurWith:
      if (cls < 1 || anchor < 1) {
        throw ValidationError("with subset needs a class and an anchor class");
      }
      break;
    default:
      break;
  }
}

std::string SubsetSpec::describe() const {
  switch (kind) {
    case SubsetKind::All: return "all";
    case SubsetKind::Occ1: return "occ1";
    case SubsetKind::OccAll: return "occall";
    case SubsetKind::NObjects: return "nobj=" + std::to_string(n);
    case SubsetKind::NUnique: return "nuniq=" + std::to_string(n);
    case SubsetKind::CoocThreshold:
      return (any_pair ? "cooc<any " : "cooc<") + std::to_string(threshold);
    case SubsetKind::CoOccurWith:
      return "with=" + std::to_string(cls) + " anchor=" + std::to_string(anchor);
    case SubsetKind::Exclusive: return "excl=" + std::to_string(cls);
  }
  return "?";
}

namespace {

bool needs_instances(SubsetKind k) {
  return k == SubsetKind::Occ1 || k == SubsetKind::OccAll ||
         k == SubsetKind::NObjects;
}

}  // namespace

DatasetManifest filter_subset(const DatasetManifest& manifest,
                              const SubsetSpec& spec,
                              const ClassCatalog& catalog,
                              const CoOccurrenceMatrix* cooc) {
  spec.validate();
  if (spec.kind == SubsetKind::CoocThreshold && cooc == nullptr) {
    throw ValidationError("cooc subset requires a co-occurrence matrix");
  }
  DatasetManifest out;
  out.dir = manifest.dir;
  for (const auto& e : manifest.entries) {
    bool keep = false;
    if (spec.kind == SubsetKind::All) {
      keep = true;
    } else if (needs_instances(spec.kind)) {
      if (!e.instance_path) {
        throw ValidationError("subset '" + spec.describe() +
                              "' requires instance annotations, entry '" +
                              e.id + "' has none");
      }
      const InstanceMask inst =
          read_instance_mask(manifest.resolve(*e.instance_path));
      if (spec.kind == SubsetKind::NObjects) {
        // instances present in pixels (fully hidden ones do not count)
        std::set<int> visible;
        for (int v : inst.ids.v) {
          if (v != 0) visible.insert(v);
        }
        keep = static_cast<int>(visible.size()) == spec.n;
      } else {
        const auto pairs = detect_occlusions(inst);
        if (spec.kind == SubsetKind::Occ1) {
          keep = !pairs.empty();
        } else {
          std::set<int> visible, occluded;
          for (int v : inst.ids.v) {
            if (v != 0) visible.insert(v);
          }
          for (const auto& [a, b] : pairs) {
            occluded.insert(a);
            occluded.insert(b);
          }
          keep = !visible.empty() && occluded == visible;
        }
      }
    } else {
      const SegMask mask = read_mask_png(manifest.resolve(e.mask_path));
      const std::set<int> classes = class_set(mask, catalog);
      switch (spec.kind) {
        case SubsetKind::NUnique:
          keep = static_cast<int>(classes.size()) == spec.n;
          break;
        case SubsetKind::Exclusive:
          keep = classes.size() == 1 && *classes.begin() == spec.cls;
          break;
        case SubsetKind::CoOccurWith:
          keep = classes.count(spec.cls) > 0 && classes.count(spec.anchor) > 0;
          break;
        case SubsetKind::CoocThreshold: {
          bool all_under = true, any_under = false;
          bool has_pair = false;
          for (auto a = classes.begin(); a != classes.end(); ++a) {
            for (auto b = std::next(a); b != classes.end(); ++b) {
              has_pair = true;
              const bool under = cooc->at(*a, *b) < spec.threshold;
              all_under = all_under && under;
              any_under = any_under || under;
            }
          }
          keep = spec.any_pair ? (has_pair ? any_under : true) : all_under;
          break;
        }
        default:
          break;
      }
    }
    if (keep) out.entries.push_back(e);
  }
  return out;
}

Image apply_perturbation(const Image& image, const Image& perturbation,
                         std::optional<double> max_norm) {
  if (max_norm) {
    for (double v : perturbation.v) {
      if (std::abs(v) > *max_norm + 1e-12) {
        throw ValidationError("perturbation exceeds max norm " +
                              std::to_string(*max_norm));
      }
    }
  }
  // per-axis: tile when smaller, center-crop when larger
  const auto src_index = [](int i, int out_n, int src_n) {
    if (src_n >= out_n) return i + (src_n - out_n) / 2;
    return i % src_n;
  };
  Image out(image.h, image.w);
  for (int y = 0; y < image.h; ++y) {
    const int sy = src_index(y, image.h, perturbation.h);
    for (int x = 0; x < image.w; ++x) {
      const int sx = src_index(x, image.w, perturbation.w);
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) =
            std::clamp(image.at(y, x, c) + perturbation.at(sy, sx, c), 0.0, 1.0);
      }
    }
  }
  return out;
}

namespace {

SegMask argmax_labels(const Tensor& logits) {
  SegMask out(logits.h, logits.w);
  for (int y = 0; y < logits.h; ++y) {
    for (int x = 0; x < logits.w; ++x) {
      int best = 0;
      double bv = logits.at(0, y, x);
      for (int c = 1; c < logits.c; ++c) {
        const double v = logits.at(c, y, x);
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out.at(y, x) = best;
    }
  }
  return out;
}

}  // namespace

EvalReport evaluate(BindingNet& net, const DatasetManifest& manifest,
                    const ClassCatalog& catalog, const SubsetSpec& spec,
                    const EvalOptions& options, const CoOccurrenceMatrix* cooc) {
  const DatasetManifest subset = filter_subset(manifest, spec, catalog, cooc);
  if (subset.entries.empty()) {
    throw ValidationError("subset '" + spec.describe() + "' selected no images");
  }
  EvalHead head = options.head;
  if (head == EvalHead::Auto) {
    head = net.stage == 2 ? EvalHead::Dominant : EvalHead::Binding;
  }
  std::optional<Image> perturbation;
  if (options.perturbation) {
    perturbation = read_perturbation(*options.perturbation);
  }

  EvalReport report;
  report.subset = spec.describe();
  report.method = options.method;
  report.setting = options.setting;
  if (spec.kind == SubsetKind::CoocThreshold) {
    report.threshold = static_cast<double>(spec.threshold);
  }
  report.class_names = catalog.names;

  ConfusionMatrix cm(catalog.num_classes);
  double phantom_sum = 0.0;
  for (const auto& entry : subset.entries) {
    LabeledSample sample = load_sample(entry, subset, catalog);
    if (perturbation) {
      sample.image =
          apply_perturbation(sample.image, *perturbation, options.max_norm);
    }
    SegMask target = sample.mask;
    if (options.target_second) {
      target = load_second_mask(entry, subset, catalog);
    }

    PredictionTriple t = net.forward(sample.image, head == EvalHead::Binding);
    const Tensor* branch = &t.st;
    if (head == EvalHead::Phantom) branch = &t.sp;
    if (head == EvalHead::Binding) branch = &*t.sfb;
    const Tensor logits = net.upsample_to_input(*branch, t);
    const SegMask pred = argmax_labels(logits);

    const Tensor sp_up = net.upsample_to_input(t.sp, t);
    double s = 0.0;
    for (double v : sp_up.v) {
      if (v > 0.0) s += v;
    }
    phantom_sum += s;

    update_confusion(cm, pred, target, catalog.ignore_id);
    if (options.per_image) {
      ConfusionMatrix one(catalog.num_classes);
      update_confusion(one, pred, target, catalog.ignore_id);
      report.per_image_iou[entry.id] = miou(one).miou;
    }
  }

  const MiouResult r = miou(cm);
  report.image_count = static_cast<long long>(subset.entries.size());
  report.per_class_iou = r.per_class;
  report.miou = r.miou;
  report.mean_phantom_activation =
      phantom_sum / static_cast<double>(subset.entries.size());
  return report;
}

void EvalReport::save_json(const std::filesystem::path& path) const {
  json j;
  j["schema"] = "fbind-eval-report/1";
  j["subset"] = subset;
  j["method"] = method;
  j["setting"] = setting;
  j["image_count"] = image_count;
  j["class_names"] = class_names;
  json per = json::array();
  for (const auto& v : per_class_iou) {
    if (v) {
      per.push_back(*v);
    } else {
      per.push_back(nullptr);
    }
  }
  j["per_class_iou"] = per;
  j["miou"] = miou;
  j["mean_phantom_activation"] = mean_phantom_activation;
  if (threshold) j["threshold"] = *threshold;
  if (!per_image_iou.empty()) j["per_image_iou"] = per_image_iou;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

EvalReport EvalReport::load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report '" + path.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw ValidationError("report '" + path.string() + "' is not valid JSON");
  }
  try {
    if (j.at("schema").get<std::string>() != "fbind-eval-report/1") {
      throw ValidationError("report '" + path.string() + "' has unknown schema");
    }
    EvalReport r;
    r.subset = j.at("subset").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.setting = j.at("setting").get<std::string>();
    r.image_count = j.at("image_count").get<long long>();
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& v : j.at("per_class_iou")) {
      if (v.is_null()) {
        r.per_class_iou.push_back(std::nullopt);
      } else {
        r.per_class_iou.push_back(v.get<double>());
      }
    }
    r.miou = j.at("miou").get<double>();
    r.mean_phantom_activation = j.at("mean_phantom_activation").get<double>();
    if (j.contains("threshold")) r.threshold = j["threshold"].get<double>();
    if (j.contains("per_image_iou")) {
      r.per_image_iou = j["per_image_iou"].get<std::map<std::string, double>>();
    }
    return r;
  } catch (const json::exception& ex) {
    throw ValidationError("report '" + path.string() + "': " + ex.what());
  }
}

void EvalReport::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "class,iou\n";
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    out << class_names[c] << ",";
    if (per_class_iou[c]) out << *per_class_iou[c];
    out << "\n";
  }
  out << "miou," << miou << "\n";
}

}  // namespace fbind
