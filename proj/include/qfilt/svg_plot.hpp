#pragma once

#include <string>
#include <vector>

namespace qfilt::sim {

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::string color;  // empty: palette color by insertion order
};

/* Shaded region between lo(x) and hi(x), drawn behind the lines. */
struct Band {
  std::string label;
  std::vector<double> x, lo, hi;
  std::string color;
};

class SvgPlot {
 public:
  explicit SvgPlot(std::string title, std::string xlabel = "t",
                   std::string ylabel = "");

  void add(Series s);
  void add(Band b);

  std::string render(int width = 760, int height = 460) const;
  void write(const std::string& path, int width = 760, int height = 460) const;

 private:
  std::string title_, xlabel_, ylabel_;
  std::vector<Series> series_;
  std::vector<Band> bands_;
};

}  // namespace qfilt::sim
