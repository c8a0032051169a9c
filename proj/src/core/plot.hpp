#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "image.hpp"

namespace fbind {

// Minimal raster plotting (PNG out, built-in 5x7 font). Enough for the
// mIoU-vs-threshold curves and method bar charts the report command emits.
class Canvas {
 public:
  Canvas(int w, int h);

  void fill(std::array<double, 3> rgb);
  void rect(int x0, int y0, int x1, int y1, std::array<double, 3> rgb);
  void line(double x0, double y0, double x1, double y1,
            std::array<double, 3> rgb);
  void marker(int x, int y, std::array<double, 3> rgb);
  // scale 1 -> 5x7 glyphs; lowercase maps onto the uppercase table
  void text(int x, int y, const std::string& s, std::array<double, 3> rgb,
            int scale = 1);
  static int text_width(const std::string& s, int scale = 1);

  void save_png(const std::filesystem::path& path) const;
  int width() const { return img_.w; }
  int height() const { return img_.h; }

 private:
  Image img_;
  void put(int x, int y, const std::array<double, 3>& rgb);
};

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

// x axis drawn descending left-to-right when x_descending (threshold curves).
void line_plot(const std::filesystem::path& path, const std::string& title,
               const std::string& xlabel, const std::string& ylabel,
               const std::vector<PlotSeries>& series, bool x_descending);

void bar_chart(const std::filesystem::path& path, const std::string& title,
               const std::string& ylabel,
               const std::vector<std::pair<std::string, double>>& bars);

}  // namespace fbind
