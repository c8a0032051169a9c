#include "report.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "plot.hpp"

namespace fbind {

ReportOutput merge_reports(const std::vector<std::filesystem::path>& inputs,
                           const std::filesystem::path& out_dir) {
  if (inputs.empty()) throw ValidationError("report: need at least one input");
  std::vector<EvalReport> reports;
  reports.reserve(inputs.size());
  for (const auto& p : inputs) reports.push_back(EvalReport::load_json(p));

  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].class_names != reports[0].class_names) {
      throw ValidationError("report: class sets differ between '" +
                            inputs[0].string() + "' and '" +
                            inputs[i].string() + "'");
    }
  }

  std::filesystem::create_directories(out_dir);
  ReportOutput out;

  const bool curve = std::all_of(reports.begin(), reports.end(),
                                 [](const EvalReport& r) {
                                   return r.threshold.has_value();
                                 });
  if (curve) {
    std::stable_sort(reports.begin(), reports.end(),
                     [](const EvalReport& a, const EvalReport& b) {
                       if (a.method != b.method) return a.method < b.method;
                       return *a.threshold > *b.threshold;
                     });
  }

  out.summary_csv = out_dir / "summary.csv";
  {
    std::ofstream csv(out.summary_csv);
    if (!csv) throw IoError("cannot write '" + out.summary_csv.string() + "'");
    csv << "subset,method,setting,image_count,miou";
    for (const auto& name : reports[0].class_names) csv << ",iou_" << name;
    csv << "\n";
    for (const auto& r : reports) {
      csv << r.subset << "," << r.method << "," << r.setting << ","
          << r.image_count << "," << r.miou;
      for (const auto& v : r.per_class_iou) {
        csv << ",";
        if (v) csv << *v;
      }
      csv << "\n";
    }
  }
  out.rows = static_cast<int>(reports.size());

  std::set<std::string> methods, settings;
  for (const auto& r : reports) {
    methods.insert(r.method);
    settings.insert(r.setting);
  }

  if (curve) {
    std::map<std::string, PlotSeries> by_method;
    for (const auto& r : reports) {
      auto& s = by_method[r.method];
      s.label = r.method;
      s.points.emplace_back(*r.threshold, r.miou);
    }
    std::vector<PlotSeries> series;
    for (auto& [m, s] : by_method) series.push_back(std::move(s));
    out.plot = out_dir / "cooc_curve.png";
    line_plot(out.plot, "miou vs co-occurrence threshold",
              "co-occurrence threshold", "miou", series,
              /*x_descending=*/true);
  } else {
    std::vector<std::pair<std::string, double>> bars;
    const bool methods_unique = methods.size() == reports.size();
    for (const auto& r : reports) {
      std::string label = methods_unique ? r.method : r.method + "/" + r.setting;
      if (!methods_unique && settings.size() == 1) label = r.subset;
      bars.emplace_back(label, r.miou);
    }
    out.plot = out_dir / "bars.png";
    bar_chart(out.plot, "miou by method", "miou", bars);
  }

  if (methods.size() >= 2 && settings.size() >= 2) {
    // Table-style grid: one row per method, one column per attack setting.
    std::map<std::string, std::map<std::string, double>> grid;
    for (const auto& r : reports) grid[r.method][r.setting] = r.miou;
    const auto grid_path = out_dir / "attack_grid.csv";
    std::ofstream csv(grid_path);
    if (!csv) throw IoError("cannot write '" + grid_path.string() + "'");
    csv << "method";
    for (const auto& s : settings) csv << "," << s;
    csv << "\n";
    for (const auto& [m, row] : grid) {
      csv << m;
      for (const auto& s : settings) {
        csv << ",";
        const auto it = row.find(s);
        if (it != row.end()) csv << it->second;
      }
      csv << "\n";
    }
    out.grid_csv = grid_path;
  }
  return out;
}

}  // namespace fbind
