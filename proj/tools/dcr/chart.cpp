#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "commands.hpp"

namespace dcr::cli {

namespace {

constexpr double kWidth = 720, kPanelHeight = 220, kLeft = 70, kRight = 20, kTop = 30, kBottom = 30;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

std::string render_svg(const std::vector<Series>& panels) {
  const double height = kPanelHeight * static_cast<double>(panels.size());
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      kWidth, height, kWidth, height);

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Series& s = panels[p];
    const double y0 = kPanelHeight * static_cast<double>(p);
    const double plot_w = kWidth - kLeft - kRight, plot_h = kPanelHeight - kTop - kBottom;
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"13\">{}</text>\n", kLeft, y0 + 18, escape(s.title));
    svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n", kLeft,
                       y0 + kTop, plot_w, plot_h);

    std::vector<std::pair<double, double>> pts;
    for (const auto& pt : s.points) {
      if (std::isfinite(pt.second)) pts.push_back(pt);
    }
    if (pts.empty()) {
      svg += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"#888\">no data</text>\n", kLeft + plot_w / 2 - 20,
                         y0 + kTop + plot_h / 2);
      continue;
    }
    auto [xmin_it, xmax_it] = std::minmax_element(pts.begin(), pts.end());
    double xmin = xmin_it->first, xmax = xmax_it->first;
    double ymin = pts[0].second, ymax = ymin;
    for (const auto& pt : pts) ymin = std::min(ymin, pt.second), ymax = std::max(ymax, pt.second);
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
    auto sx = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * plot_w; };
    auto sy = [&](double y) { return y0 + kTop + (ymax - y) / (ymax - ymin) * plot_h; };

    if (ymin < 0 && ymax > 0) {
      svg += fmt::format("<line x1=\"{}\" y1=\"{:.2f}\" x2=\"{}\" y2=\"{:.2f}\" stroke=\"#c33\" stroke-dasharray=\"4 3\"/>\n",
                         kLeft, sy(0), kLeft + plot_w, sy(0));
    }
    svg += "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1\" points=\"";
    for (const auto& [x, y] : pts) svg += fmt::format("{:.2f},{:.2f} ", sx(x), sy(y));
    svg += "\"/>\n";
    svg += fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">{:.4g}</text>\n", kLeft - 4, sy(ymax) + 4, ymax);
    svg += fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">{:.4g}</text>\n", kLeft - 4, sy(ymin) + 4, ymin);
    svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", kLeft, y0 + kPanelHeight - 10, xmin);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">step {}</text>\n", kLeft + plot_w,
                       y0 + kPanelHeight - 10, xmax);
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace dcr::cli
