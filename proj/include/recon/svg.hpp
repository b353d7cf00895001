#pragma once

#include <optional>
#include <string>
#include <vector>

namespace recon {

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  int cls = 0;
};

struct ScatterStyle {
  int width = 720;
  int height = 540;
  std::string title;
  std::string x_label = "margin distance";
  std::string y_label = "best SSIM";
  // Horizontal threshold line; the annotation counts points strictly above it.
  std::optional<double> threshold = 0.4;
};

// Deterministic standalone SVG scatter plot; an empty point list renders
// axes only.
std::string scatter_svg(const std::vector<ScatterPoint>& points, const ScatterStyle& style);

}  // namespace recon
