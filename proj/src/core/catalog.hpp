#pragma once

#include <string>
#include <vector>

#include "common.hpp"

namespace fbind {

// Semantic category set. num_classes includes the background class; the
// ignore label sits outside [0, num_classes) and is excluded from every loss
// and metric.
struct ClassCatalog {
  int num_classes = 0;
  int background_id = 0;
  int ignore_id = 255;
  std::vector<std::string> names;

  static ClassCatalog make(int num_classes, int ignore_id = 255) {
    ClassCatalog c;
    c.num_classes = num_classes;
    c.ignore_id = ignore_id;
    c.names.reserve(static_cast<std::size_t>(num_classes));
    c.names.emplace_back("background");
    for (int i = 1; i < num_classes; ++i) {
      c.names.push_back("class_" + std::to_string(i));
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (num_classes < 1) {
      throw ValidationError("catalog needs at least one class");
    }
    if (ignore_id >= 0 && ignore_id < num_classes) {
      throw ValidationError("ignore_id " + std::to_string(ignore_id) +
                            " collides with class range [0, " +
                            std::to_string(num_classes) + ")");
    }
    if (names.size() != static_cast<std::size_t>(num_classes)) {
      throw ValidationError("catalog names list must have num_classes entries");
    }
  }

  bool valid_label(int v) const {
    return v == ignore_id || (v >= 0 && v < num_classes);
  }
};

}  // namespace fbind
