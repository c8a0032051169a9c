#pragma once

#include <filesystem>
#include <vector>

#include "evaluator.hpp"

namespace fbind {

struct ReportOutput {
  std::filesystem::path summary_csv;
  std::filesystem::path plot;                     // curve or bar chart
  std::optional<std::filesystem::path> grid_csv;  // methods x settings pivot
  int rows = 0;
};

// Merges eval reports into one CSV plus a plot. When every input carries a
// co-occurrence threshold the plot is the mIoU-vs-threshold curve per method
// (threshold axis descending); otherwise a bar chart. Reports from different
// class catalogs do not merge. A methods x settings grid CSV is emitted when
// both dimensions are present.
ReportOutput merge_reports(const std::vector<std::filesystem::path>& inputs,
                           const std::filesystem::path& out_dir);

}  // namespace fbind
