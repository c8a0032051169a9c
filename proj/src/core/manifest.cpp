#include "manifest.hpp"

#include <fstream>
#include <unordered_set>

#include "imageio.hpp"
#include "json.hpp"

namespace fbind {

using nlohmann::json;

namespace {

json entry_to_json(const ManifestEntry& e) {
  json j;
  j["id"] = e.id;
  j["image_path"] = e.image_path;
  j["mask_path"] = e.mask_path;
  if (e.instance_path) j["instance_path"] = *e.instance_path;
  if (e.second_mask_path) j["second_mask_path"] = *e.second_mask_path;
  if (e.delta) j["delta"] = *e.delta;
  if (e.source_ids) j["source_ids"] = *e.source_ids;
  j["strategy_tag"] = e.strategy_tag;
  return j;
}

ManifestEntry entry_from_json(const json& j, int line_no) {
  try {
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.image_path = j.at("image_path").get<std::string>();
    e.mask_path = j.at("mask_path").get<std::string>();
    if (j.contains("instance_path")) e.instance_path = j["instance_path"].get<std::string>();
    if (j.contains("second_mask_path")) e.second_mask_path = j["second_mask_path"].get<std::string>();
    if (j.contains("delta")) e.delta = j["delta"].get<double>();
    if (j.contains("source_ids")) e.source_ids = j["source_ids"].get<std::vector<std::string>>();
    if (j.contains("strategy_tag")) e.strategy_tag = j["strategy_tag"].get<std::string>();
    return e;
  } catch (const json::exception& ex) {
    throw ValidationError("manifest line " + std::to_string(line_no) + ": " + ex.what());
  }
}

}  // namespace

DatasetManifest DatasetManifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  DatasetManifest m;
  m.dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw ValidationError("manifest line " + std::to_string(line_no) +
                            " is not valid JSON");
    }
    m.entries.push_back(entry_from_json(j, line_no));
  }
  m.validate();
  return m;
}

void DatasetManifest::write(const std::filesystem::path& path) const {
  validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  for (const auto& e : entries) {
    out << entry_to_json(e).dump() << "\n";
  }
  if (!out) throw IoError("failed writing manifest '" + path.string() + "'");
}

std::filesystem::path DatasetManifest::resolve(const std::string& rel) const {
  std::filesystem::path p(rel);
  if (p.is_absolute()) return p;
  return dir / p;
}

const ManifestEntry& DatasetManifest::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return e;
  }
  throw ValidationError("manifest has no entry with id '" + id + "'");
}

void DatasetManifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.id).second) {
      throw ValidationError("duplicate manifest id '" + e.id + "'");
    }
    if (e.delta.has_value() != e.second_mask_path.has_value()) {
      throw ValidationError("entry '" + e.id +
                            "': delta must be present iff second_mask_path is");
    }
    if (e.delta && (*e.delta <= 0.0 || *e.delta > 1.0)) {
      throw ValidationError("entry '" + e.id + "': delta " +
                            std::to_string(*e.delta) + " outside (0, 1]");
    }
  }
}

namespace {

void validate_mask(const SegMask& mask, const ClassCatalog& catalog,
                   const std::string& origin) {
  for (int v : mask.v) {
    if (!catalog.valid_label(v)) {
      throw ValidationError("mask '" + origin + "' holds class id " +
                            std::to_string(v) + " outside [0, " +
                            std::to_string(catalog.num_classes) +
                            ") and not the ignore label " +
                            std::to_string(catalog.ignore_id));
    }
  }
}

}  // namespace

LabeledSample load_sample(const ManifestEntry& entry,
                          const DatasetManifest& manifest,
                          const ClassCatalog& catalog) {
  LabeledSample s;
  s.id = entry.id;
  s.image = read_image(manifest.resolve(entry.image_path));
  s.mask = read_mask_png(manifest.resolve(entry.mask_path));
  validate_mask(s.mask, catalog, entry.mask_path);
  if (s.image.h != s.mask.h || s.image.w != s.mask.w) {
    throw ValidationError("entry '" + entry.id +
                          "': image and mask dimensions differ");
  }
  if (entry.instance_path) {
    s.instances = read_instance_mask(manifest.resolve(*entry.instance_path));
    if (s.instances->ids.h != s.mask.h || s.instances->ids.w != s.mask.w) {
      throw ValidationError("entry '" + entry.id +
                            "': instance mask dimensions differ from mask");
    }
  }
  return s;
}

SegMask load_second_mask(const ManifestEntry& entry,
                         const DatasetManifest& manifest,
                         const ClassCatalog& catalog) {
  if (!entry.second_mask_path) {
    throw ValidationError("entry '" + entry.id + "' has no second mask");
  }
  SegMask m = read_mask_png(manifest.resolve(*entry.second_mask_path));
  validate_mask(m, catalog, *entry.second_mask_path);
  return m;
}

std::set<int> class_set(const SegMask& mask, const ClassCatalog& catalog) {
  std::set<int> out;
  for (int v : mask.v) {
    if (v != catalog.background_id && v != catalog.ignore_id) {
      out.insert(v);
    }
  }
  return out;
}

CoOccurrenceMatrix compute_cooccurrence(const DatasetManifest& manifest,
                                        const ClassCatalog& catalog) {
  CoOccurrenceMatrix m(catalog.num_classes);
  for (const auto& e : manifest.entries) {
    std::set<int> present;
    try {
      SegMask mask = read_mask_png(manifest.resolve(e.mask_path));
      validate_mask(mask, catalog, e.mask_path);
      present = class_set(mask, catalog);
    } catch (const std::runtime_error& ex) {
      throw IoError("entry '" + e.id + "': " + ex.what());
    }
    for (int a : present) {
      m.diagonal[a] += 1;
      for (int b : present) {
        if (a < b) {
          m.at(a, b) += 1;
          m.at(b, a) += 1;
        }
      }
    }
  }
  return m;
}

int scan_max_class_id(const DatasetManifest& manifest, int ignore_id) {
  int max_id = 0;
  for (const auto& e : manifest.entries) {
    SegMask mask = read_mask_png(manifest.resolve(e.mask_path));
    for (int v : mask.v) {
      if (v != ignore_id && v > max_id) max_id = v;
    }
  }
  return max_id;
}

void CoOccurrenceMatrix::save_json(const std::filesystem::path& path) const {
  json j;
  j["num_classes"] = num_classes;
  j["diagonal"] = diagonal;
  std::vector<std::vector<long long>> rows(static_cast<std::size_t>(num_classes));
  for (int a = 0; a < num_classes; ++a) {
    rows[a].assign(counts.begin() + static_cast<std::ptrdiff_t>(a) * num_classes,
                   counts.begin() + static_cast<std::ptrdiff_t>(a + 1) * num_classes);
  }
  j["counts"] = rows;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

CoOccurrenceMatrix CoOccurrenceMatrix::load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open co-occurrence file '" + path.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw ValidationError("co-occurrence file '" + path.string() +
                          "' is not valid JSON");
  }
  try {
    CoOccurrenceMatrix m(j.at("num_classes").get<int>());
    m.diagonal = j.at("diagonal").get<std::vector<long long>>();
    const auto rows = j.at("counts").get<std::vector<std::vector<long long>>>();
    if (m.diagonal.size() != static_cast<std::size_t>(m.num_classes) ||
        rows.size() != static_cast<std::size_t>(m.num_classes)) {
      throw ValidationError("co-occurrence matrix shape mismatch in '" +
                            path.string() + "'");
    }
    for (int a = 0; a < m.num_classes; ++a) {
      if (rows[a].size() != static_cast<std::size_t>(m.num_classes)) {
        throw ValidationError("co-occurrence matrix shape mismatch in '" +
                              path.string() + "'");
      }
      for (int b = 0; b < m.num_classes; ++b) m.at(a, b) = rows[a][b];
    }
    return m;
  } catch (const json::exception& ex) {
    throw ValidationError("co-occurrence file '" + path.string() + "': " + ex.what());
  }
}

std::filesystem::path instance_sidecar_path(const std::filesystem::path& png_path) {
  std::filesystem::path p = png_path;
  p.replace_extension(".json");
  return p;
}

InstanceMask read_instance_mask(const std::filesystem::path& png_path) {
  InstanceMask inst;
  inst.ids = read_mask_png(png_path);
  const auto sidecar = instance_sidecar_path(png_path);
  std::ifstream in(sidecar);
  if (!in) throw IoError("missing instance sidecar '" + sidecar.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw ValidationError("instance sidecar '" + sidecar.string() +
                          "' is not valid JSON");
  }
  try {
    for (const auto& [key, val] : j.at("instances").items()) {
      inst.instance_class[std::stoi(key)] = val.get<int>();
    }
    if (j.contains("occluding_pairs")) {
      for (const auto& pair : j["occluding_pairs"]) {
        inst.recorded_occlusions.emplace_back(pair.at(0).get<int>(),
                                              pair.at(1).get<int>());
      }
    }
  } catch (const json::exception& ex) {
    throw ValidationError("instance sidecar '" + sidecar.string() + "': " + ex.what());
  }
  for (int v : inst.ids.v) {
    if (v != 0 && !inst.instance_class.count(v)) {
      throw ValidationError("instance id " + std::to_string(v) +
                            " in '" + png_path.string() +
                            "' missing from sidecar map");
    }
  }
  return inst;
}

void write_instance_mask(const std::filesystem::path& png_path,
                         const InstanceMask& inst) {
  write_mask_png(png_path, inst.ids);
  json j;
  json ids = json::object();
  for (const auto& [id, cls] : inst.instance_class) {
    ids[std::to_string(id)] = cls;
  }
  j["instances"] = ids;
  json pairs = json::array();
  for (const auto& [a, b] : inst.recorded_occlusions) {
    pairs.push_back({a, b});
  }
  j["occluding_pairs"] = pairs;
  const auto sidecar = instance_sidecar_path(png_path);
  std::ofstream out(sidecar);
  if (!out) throw IoError("cannot write '" + sidecar.string() + "'");
  out << j.dump() << "\n";
}

}  // namespace fbind
