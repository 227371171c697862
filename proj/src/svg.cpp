#include "biopt/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace biopt {

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                         "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kNumColors = 8;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

void emit_weight_plot(const RunRecord& record, const std::string& path) {
  if (record.rows.empty())
    throw std::invalid_argument("emit_weight_plot: record has no rows");
  const int num_series = static_cast<int>(record.rows.front().p.size());
  if (num_series == 0)
    throw std::invalid_argument("emit_weight_plot: record has no weight columns");

  const double width = 800, height = 500;
  const double ml = 60, mr = 20, mt = 20, mb = 45;
  const double pw = width - ml - mr;
  const double ph = height - mt - mb;

  int64_t max_step = 1;
  for (const auto& row : record.rows) max_step = std::max(max_step, row.step);

  auto sx = [&](double step) { return ml + pw * step / static_cast<double>(max_step); };
  auto sy = [&](double w) { return mt + ph * (1.0 - std::clamp(w, 0.0, 1.0)); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" "
         "viewBox=\"0 0 800 500\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" fill=\"white\"/>\n";

  // frame
  out << "<rect x=\"" << fmt(ml) << "\" y=\"" << fmt(mt) << "\" width=\"" << fmt(pw)
      << "\" height=\"" << fmt(ph)
      << "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";

  // y ticks at 0, 0.25, 0.5, 0.75, 1
  for (int i = 0; i <= 4; ++i) {
    double v = 0.25 * i;
    double y = sy(v);
    out << "<line x1=\"" << fmt(ml - 4) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(ml)
        << "\" y2=\"" << fmt(y) << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt(ml - 8) << "\" y=\"" << fmt(y + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">" << fmt(v)
        << "</text>\n";
    if (i > 0 && i < 4)
      out << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(ml + pw)
          << "\" y2=\"" << fmt(y)
          << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
  }

  // x ticks at quarters of the horizon
  for (int i = 0; i <= 4; ++i) {
    int64_t step = static_cast<int64_t>(std::lround(static_cast<double>(max_step) * i / 4.0));
    double x = sx(step);
    out << "<line x1=\"" << fmt(x) << "\" y1=\"" << fmt(mt + ph) << "\" x2=\"" << fmt(x)
        << "\" y2=\"" << fmt(mt + ph + 4) << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(mt + ph + 18)
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" << step
        << "</text>\n";
  }

  // axis labels
  out << "<text x=\"" << fmt(ml + pw / 2) << "\" y=\"" << fmt(height - 8)
      << "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">step</text>\n";
  out << "<text x=\"16\" y=\"" << fmt(mt + ph / 2)
      << "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 16 "
      << fmt(mt + ph / 2) << ")\">weight</text>\n";

  for (int s = 0; s < num_series; ++s) {
    out << "<polyline fill=\"none\" stroke=\"" << kColors[s % kNumColors]
        << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (const auto& row : record.rows) {
      if (static_cast<int>(row.p.size()) != num_series)
        throw std::invalid_argument("emit_weight_plot: inconsistent weight columns");
      if (!first) out << " ";
      out << fmt(sx(row.step)) << "," << fmt(sy(row.p[s]));
      first = false;
    }
    out << "\"/>\n";
    // legend swatch
    double ly = mt + 14 + 16.0 * s;
    out << "<rect x=\"" << fmt(ml + pw - 92) << "\" y=\"" << fmt(ly - 9)
        << "\" width=\"10\" height=\"10\" fill=\"" << kColors[s % kNumColors] << "\"/>\n";
    out << "<text x=\"" << fmt(ml + pw - 78) << "\" y=\"" << fmt(ly)
        << "\" font-family=\"sans-serif\" font-size=\"12\">source " << s << "</text>\n";
  }

  out << "</svg>\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("emit_weight_plot: cannot open " + path);
  f << out.str();
}

}  // namespace biopt
