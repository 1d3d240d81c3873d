#ifndef SFATTACK_SVG_HPP
#define SFATTACK_SVG_HPP

#include <algorithm>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sfattack/pointcloud.hpp"

namespace sfattack {

struct SvgOptions {
  int drop_axis = 2;  // orthographic projection discards this coordinate
  double size = 800.0;
  double margin = 20.0;
  double radius = 2.5;
};

/// pc1 in gray, pc1 + flow_a in red, pc1 + flow_b in green, each displaced
/// point joined to its source by a segment.
inline std::string render_flow_svg(const ScenePair& pair, const FlowField& flow_a,
                                   const std::optional<FlowField>& flow_b = std::nullopt, const SvgOptions& opt = {}) {
  const std::size_t n = pair.pc1.size();
  if (flow_a.size() != n || (flow_b && flow_b->size() != n))
    throw DimensionError("render_flow_svg: flow length differs from pc1 point count");
  if (opt.drop_axis < 0 || opt.drop_axis > 2) throw ValidationError("render_flow_svg: drop_axis must be 0, 1 or 2");
  const std::size_t ax = opt.drop_axis == 0 ? 1 : 0;
  const std::size_t ay = opt.drop_axis == 2 ? 1 : 2;

  const Tensor& p = pair.pc1.positions;
  auto layer = [&](const FlowField* f) {
    std::vector<std::pair<double, double>> pts(n);
    for (std::size_t i = 0; i < n; ++i) {
      pts[i] = {p(i, ax) + (f ? f->vectors(i, ax) : 0.0), p(i, ay) + (f ? f->vectors(i, ay) : 0.0)};
    }
    return pts;
  };
  const auto base = layer(nullptr);
  const auto red = layer(&flow_a);
  const auto green = flow_b ? layer(&*flow_b) : std::vector<std::pair<double, double>>{};

  double xmin = std::numeric_limits<double>::infinity(), ymin = xmin;
  double xmax = -xmin, ymax = -xmin;
  for (const auto* l : {&base, &red, &green}) {
    for (auto [x, y] : *l) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-12});
  const double s = (opt.size - 2.0 * opt.margin) / span;

  char buf[160];
  auto px = [&](double x) { return opt.margin + (x - xmin) * s; };
  auto py = [&](double y) { return opt.size - opt.margin - (y - ymin) * s; };  // y up

  std::string out;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                opt.size, opt.size, opt.size, opt.size);
  out += buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  auto segments = [&](const std::vector<std::pair<double, double>>& to, const char* cls, const char* color) {
    out += std::string("<g class=\"") + cls + "\" stroke=\"" + color + "\" stroke-width=\"0.6\">\n";
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof buf, "<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\"/>\n", px(base[i].first),
                    py(base[i].second), px(to[i].first), py(to[i].second));
      out += buf;
    }
    out += "</g>\n";
  };
  auto markers = [&](const std::vector<std::pair<double, double>>& pts, const char* cls, const char* color) {
    out += std::string("<g class=\"") + cls + "\" fill=\"" + color + "\">\n";
    for (auto [x, y] : pts) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"%.2f\"/>\n", px(x), py(y), opt.radius);
      out += buf;
    }
    out += "</g>\n";
  };

  segments(red, "segments-a", "#d62728");
  if (flow_b) segments(green, "segments-b", "#2ca02c");
  markers(base, "pc1", "#7f7f7f");
  markers(red, "flow-a", "#d62728");
  if (flow_b) markers(green, "flow-b", "#2ca02c");
  out += "</svg>\n";
  return out;
}

}  // namespace sfattack

#endif  // SFATTACK_SVG_HPP
