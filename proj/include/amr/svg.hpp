#pragma once

#include <string>
#include <utility>
#include <vector>

namespace amr::svg {

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (x, y), plotted in order
};

// Self-contained SVG line plot with axes, ticks and a legend.
std::string line_plot(const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const std::vector<Series>& series,
                      int width = 640, int height = 420);

void save_svg(const std::string& path, const std::string& svg);

}  // namespace amr::svg
