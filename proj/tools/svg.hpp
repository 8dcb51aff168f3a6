#pragma once

// Minimal SVG line charts for the CLI's plot artifacts.

#include <string>
#include <vector>

namespace yolod::tools {

struct Series {
  std::string name;
  std::vector<double> x, y;
  bool dashed = false;
};

std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series, bool log_y = false);

}  // namespace yolod::tools
