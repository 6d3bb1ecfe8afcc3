#include <algorithm>
#include <cmath>
#include <cstdio>

#include "trialbridge/pipeline.hpp"

namespace trialbridge {

namespace {

constexpr double kWidth = 640, kHeight = 360;
constexpr double kLeft = 60, kRight = 20, kTop = 30, kBottom = 50;

std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string header(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f2(kWidth) + "\" height=\"" + f2(kHeight) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + f2(kWidth / 2) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_ps_density_svg(const nlohmann::json& report) {
  const auto& d = report.at("similarity").at("ps_density");
  const auto grid = d.at("grid");
  std::string svg = header("Sampling score density");
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;

  double ymax = 0.0;
  for (const char* side : {"trial", "target"}) {
    for (const auto& v : d.at(side)) {
      if (v.is_number()) ymax = std::max(ymax, v.get<double>());
    }
  }
  if (ymax <= 0.0) ymax = 1.0;
  auto px = [&](double x) { return kLeft + x * pw; };
  auto py = [&](double y) { return kTop + ph - y / ymax * ph; };

  svg += "<line x1=\"" + f2(kLeft) + "\" y1=\"" + f2(kTop + ph) + "\" x2=\"" + f2(kLeft + pw) + "\" y2=\"" +
         f2(kTop + ph) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + f2(kLeft) + "\" y1=\"" + f2(kTop) + "\" x2=\"" + f2(kLeft) + "\" y2=\"" + f2(kTop + ph) +
         "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double x = k / 4.0;
    svg += "<text x=\"" + f2(px(x)) + "\" y=\"" + f2(kTop + ph + 16) + "\" text-anchor=\"middle\">" + f2(x) +
           "</text>\n";
  }
  svg += "<text x=\"" + f2(kLeft + pw / 2) + "\" y=\"" + f2(kHeight - 10) +
         "\" text-anchor=\"middle\">Pr(S = 1 | X)</text>\n";

  const struct {
    const char* key;
    const char* colour;
  } series[] = {{"trial", "#1f77b4"}, {"target", "#d62728"}};
  int row = 0;
  for (const auto& s : series) {
    std::string pts;
    const auto& dens = d.at(s.key);
    for (std::size_t i = 0; i < grid.size() && i < dens.size(); ++i) {
      const double y = dens[i].is_number() ? dens[i].get<double>() : 0.0;
      pts += f2(px(grid[i].get<double>())) + "," + f2(py(y)) + " ";
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(s.colour) + "\" stroke-width=\"2\" points=\"" + pts +
           "\"/>\n";
    const double ly = kTop + 12 + 16 * row++;
    svg += "<line x1=\"" + f2(kLeft + pw - 90) + "\" y1=\"" + f2(ly) + "\" x2=\"" + f2(kLeft + pw - 70) + "\" y2=\"" +
           f2(ly) + "\" stroke=\"" + s.colour + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + f2(kLeft + pw - 64) + "\" y=\"" + f2(ly + 4) + "\">" + s.key + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::string render_smd_svg(const nlohmann::json& report) {
  const auto& sim = report.at("similarity");
  const auto& rows = sim.at("smd");
  std::string svg = header("Standardized mean differences");
  const double pw = kWidth - kLeft - kRight - 60, ph = kHeight - kTop - kBottom;
  const double left = kLeft + 60;

  double xmax = sim.at("smd_threshold").get<double>();
  for (const auto& r : rows) {
    for (const char* k : {"smd_unweighted", "smd_weighted"}) {
      if (r.at(k).is_number()) xmax = std::max(xmax, std::abs(r.at(k).get<double>()));
    }
  }
  xmax *= 1.1;
  auto px = [&](double x) { return left + std::abs(x) / xmax * pw; };
  const double step = rows.empty() ? ph : ph / static_cast<double>(rows.size());

  svg += "<line x1=\"" + f2(left) + "\" y1=\"" + f2(kTop + ph) + "\" x2=\"" + f2(left + pw) + "\" y2=\"" +
         f2(kTop + ph) + "\" stroke=\"black\"/>\n";
  const double thr = sim.at("smd_threshold").get<double>();
  svg += "<line x1=\"" + f2(px(thr)) + "\" y1=\"" + f2(kTop) + "\" x2=\"" + f2(px(thr)) + "\" y2=\"" + f2(kTop + ph) +
         "\" stroke=\"grey\" stroke-dasharray=\"4 3\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double x = xmax * k / 4.0;
    svg += "<text x=\"" + f2(px(x)) + "\" y=\"" + f2(kTop + ph + 16) + "\" text-anchor=\"middle\">" + f2(x) +
           "</text>\n";
  }
  svg += "<text x=\"" + f2(left + pw / 2) + "\" y=\"" + f2(kHeight - 10) +
         "\" text-anchor=\"middle\">|SMD| (open: unweighted, filled: weighted)</text>\n";

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double y = kTop + step * (static_cast<double>(i) + 0.5);
    svg += "<text x=\"" + f2(left - 6) + "\" y=\"" + f2(y + 4) + "\" text-anchor=\"end\">" +
           escape(r.at("covariate").get<std::string>()) + "</text>\n";
    if (r.at("smd_unweighted").is_number()) {
      svg += "<circle cx=\"" + f2(px(r.at("smd_unweighted").get<double>())) + "\" cy=\"" + f2(y) +
             "\" r=\"5\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    }
    if (r.at("smd_weighted").is_number()) {
      svg += "<circle cx=\"" + f2(px(r.at("smd_weighted").get<double>())) + "\" cy=\"" + f2(y) +
             "\" r=\"5\" fill=\"#1f77b4\"/>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace trialbridge
