#include "recon/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace recon {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Range {
  double lo, hi;
  double span() const { return hi - lo; }
};

Range padded_range(double lo, double hi) {
  if (!(lo < hi)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

std::string scatter_svg(const std::vector<ScatterPoint>& points, const ScatterStyle& style) {
  const double ml = 64, mr = 16, mt = style.title.empty() ? 16 : 36, mb = 48;
  const double pw = style.width - ml - mr;
  const double ph = style.height - mt - mb;

  double xlo = 0.0, xhi = 1.0, ylo = 0.0, yhi = 1.0;
  if (!points.empty()) {
    xlo = xhi = points.front().x;
    ylo = yhi = points.front().y;
    for (const auto& p : points) {
      xlo = std::min(xlo, p.x);
      xhi = std::max(xhi, p.x);
      ylo = std::min(ylo, p.y);
      yhi = std::max(yhi, p.y);
    }
  }
  if (style.threshold) {
    ylo = std::min(ylo, *style.threshold);
    yhi = std::max(yhi, *style.threshold);
  }
  const Range xr = padded_range(xlo, xhi);
  const Range yr = padded_range(ylo, yhi);

  const auto sx = [&](double x) { return ml + (x - xr.lo) / xr.span() * pw; };
  const auto sy = [&](double y) { return mt + ph - (y - yr.lo) / yr.span() * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << style.width << "\" height=\""
      << style.height << "\" viewBox=\"0 0 " << style.width << " " << style.height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!style.title.empty())
    svg << "<text x=\"" << num(ml + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << style.title << "</text>\n";

  // grid and ticks
  const int ticks = 5;
  svg << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (int t = 0; t <= ticks; ++t) {
    const double fx = xr.lo + xr.span() * t / ticks;
    const double fy = yr.lo + yr.span() * t / ticks;
    svg << "<line x1=\"" << num(sx(fx)) << "\" y1=\"" << num(mt) << "\" x2=\"" << num(sx(fx))
        << "\" y2=\"" << num(mt + ph) << "\" stroke=\"#eee\"/>\n";
    svg << "<line x1=\"" << num(ml) << "\" y1=\"" << num(sy(fy)) << "\" x2=\"" << num(ml + pw)
        << "\" y2=\"" << num(sy(fy)) << "\" stroke=\"#eee\"/>\n";
    svg << "<text x=\"" << num(sx(fx)) << "\" y=\"" << num(mt + ph + 16)
        << "\" text-anchor=\"middle\">" << num(fx) << "</text>\n";
    svg << "<text x=\"" << num(ml - 6) << "\" y=\"" << num(sy(fy) + 4)
        << "\" text-anchor=\"end\">" << num(fy) << "</text>\n";
  }
  svg << "</g>\n";

  // axes
  svg << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt + ph) << "\" x2=\"" << num(ml + pw)
      << "\" y2=\"" << num(mt + ph) << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt) << "\" x2=\"" << num(ml) << "\" y2=\""
      << num(mt + ph) << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << num(ml + pw / 2) << "\" y=\"" << num(style.height - 10)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << style.x_label
      << "</text>\n";
  svg << "<text x=\"14\" y=\"" << num(mt + ph / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
      << "transform=\"rotate(-90 14 " << num(mt + ph / 2) << ")\">" << style.y_label
      << "</text>\n";

  std::size_t good = 0;
  for (const auto& p : points) {
    svg << "<circle cx=\"" << num(sx(p.x)) << "\" cy=\"" << num(sy(p.y)) << "\" r=\"3\" fill=\""
        << kPalette[static_cast<std::size_t>(std::max(0, p.cls)) % 10]
        << "\" fill-opacity=\"0.75\"/>\n";
    if (style.threshold && p.y > *style.threshold) ++good;
  }

  if (style.threshold) {
    const double yline = sy(*style.threshold);
    svg << "<line x1=\"" << num(ml) << "\" y1=\"" << num(yline) << "\" x2=\"" << num(ml + pw)
        << "\" y2=\"" << num(yline)
        << "\" stroke=\"#d62728\" stroke-dasharray=\"6 4\" stroke-width=\"1.5\"/>\n";
    svg << "<text x=\"" << num(ml + pw - 4) << "\" y=\"" << num(yline - 6)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#d62728\">"
        << "good: " << good << " / " << points.size() << " (&gt; " << num(*style.threshold)
        << ")</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace recon
