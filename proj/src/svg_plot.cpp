#include "qfilt/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace qfilt::sim {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void take(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (lo > hi) {
      lo = 0.0;
      hi = 1.0;
    }
    if (lo == hi) {
      const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
      lo -= pad;
      hi += pad;
    }
  }
};

double nice_step(double span, int target) {
  const double raw = span / std::max(target, 1);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double norm = raw / mag;
  double step = 10.0;
  if (norm < 1.5)
    step = 1.0;
  else if (norm < 3.5)
    step = 2.0;
  else if (norm < 7.5)
    step = 5.0;
  return step * mag;
}

}  // namespace

SvgPlot::SvgPlot(std::string title, std::string xlabel, std::string ylabel)
    : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

void SvgPlot::add(Series s) {
  if (s.x.size() != s.y.size())
    throw std::invalid_argument("series x and y lengths differ");
  if (s.color.empty())
    s.color = kPalette[series_.size() % kPaletteSize];
  series_.push_back(std::move(s));
}

void SvgPlot::add(Band b) {
  if (b.x.size() != b.lo.size() || b.x.size() != b.hi.size())
    throw std::invalid_argument("band x, lo, hi lengths differ");
  if (b.color.empty())
    b.color = kPalette[bands_.size() % kPaletteSize];
  bands_.push_back(std::move(b));
}

std::string SvgPlot::render(int width, int height) const {
  const double ml = 64, mr = 16, mt = 34, mb = 46;
  const double pw = width - ml - mr;
  const double ph = height - mt - mb;

  Range rx, ry;
  for (const auto& s : series_) {
    for (double v : s.x) rx.take(v);
    for (double v : s.y) ry.take(v);
  }
  for (const auto& b : bands_) {
    for (double v : b.x) rx.take(v);
    for (double v : b.lo) ry.take(v);
    for (double v : b.hi) ry.take(v);
  }
  rx.finish();
  ry.finish();

  auto px = [&](double v) { return ml + (v - rx.lo) / (rx.hi - rx.lo) * pw; };
  auto py = [&](double v) { return mt + (ry.hi - v) / (ry.hi - ry.lo) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " +
         std::to_string(width) + " " + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt2(width / 2.0) +
         "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">" + escape(title_) + "</text>\n";

  // gridlines and tick labels
  const double xs = nice_step(rx.hi - rx.lo, 6);
  const double ys = nice_step(ry.hi - ry.lo, 5);
  svg += "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (double v = std::ceil(rx.lo / xs) * xs; v <= rx.hi + 1e-9 * xs; v += xs) {
    const double x = px(v);
    svg += "<line x1=\"" + fmt2(x) + "\" y1=\"" + fmt2(mt) + "\" x2=\"" + fmt2(x) +
           "\" y2=\"" + fmt2(mt + ph) + "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + fmt2(x) + "\" y=\"" + fmt2(mt + ph + 16) +
           "\" text-anchor=\"middle\">" + fmt(std::abs(v) < 1e-12 * xs ? 0.0 : v) +
           "</text>\n";
  }
  for (double v = std::ceil(ry.lo / ys) * ys; v <= ry.hi + 1e-9 * ys; v += ys) {
    const double y = py(v);
    svg += "<line x1=\"" + fmt2(ml) + "\" y1=\"" + fmt2(y) + "\" x2=\"" + fmt2(ml + pw) +
           "\" y2=\"" + fmt2(y) + "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + fmt2(ml - 6) + "\" y=\"" + fmt2(y + 4) +
           "\" text-anchor=\"end\">" + fmt(std::abs(v) < 1e-12 * ys ? 0.0 : v) +
           "</text>\n";
  }
  svg += "</g>\n";

  for (const auto& b : bands_) {
    std::string pts;
    for (std::size_t i = 0; i < b.x.size(); ++i)
      pts += fmt2(px(b.x[i])) + "," + fmt2(py(b.hi[i])) + " ";
    for (std::size_t i = b.x.size(); i-- > 0;)
      pts += fmt2(px(b.x[i])) + "," + fmt2(py(b.lo[i])) + " ";
    svg += "<polygon points=\"" + pts + "\" fill=\"" + b.color +
           "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
  }

  for (const auto& s : series_) {
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      pts += fmt2(px(s.x[i])) + "," + fmt2(py(s.y[i])) + " ";
    }
    svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + s.color +
           "\" stroke-width=\"1.5\"/>\n";
  }

  // frame
  svg += "<rect x=\"" + fmt2(ml) + "\" y=\"" + fmt2(mt) + "\" width=\"" + fmt2(pw) +
         "\" height=\"" + fmt2(ph) +
         "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";

  svg += "<text x=\"" + fmt2(ml + pw / 2) + "\" y=\"" + fmt2(height - 8.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
         escape(xlabel_) + "</text>\n";
  if (!ylabel_.empty())
    svg += "<text x=\"14\" y=\"" + fmt2(mt + ph / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 14 " + fmt2(mt + ph / 2) + ")\">" +
           escape(ylabel_) + "</text>\n";

  double ly = mt + 14;
  for (const auto& s : series_) {
    if (s.label.empty()) continue;
    const double lx = ml + pw - 150;
    svg += "<line x1=\"" + fmt2(lx) + "\" y1=\"" + fmt2(ly - 4) + "\" x2=\"" +
           fmt2(lx + 22) + "\" y2=\"" + fmt2(ly - 4) + "\" stroke=\"" + s.color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt2(lx + 28) + "\" y=\"" + fmt2(ly) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + escape(s.label) +
           "</text>\n";
    ly += 16;
  }

  svg += "</svg>\n";
  return svg;
}

void SvgPlot::write(const std::string& path, int width, int height) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << render(width, height);
}

}  // namespace qfilt::sim
