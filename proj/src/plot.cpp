#include "dexplore/plot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "dexplore/errors.hpp"
#include "dexplore/io.hpp"

namespace dexplore {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

Series parse_series_csv(const std::string& text, const std::string& x_column,
                        const std::string& y_column, const std::string& label) {
  Series s;
  s.label = label;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  int xi = -1, yi = -1;
  size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv(line);
    if (xi < 0) {
      columns = cells.size();
      for (size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == x_column) xi = static_cast<int>(i);
        if (cells[i] == y_column) yi = static_cast<int>(i);
      }
      if (xi < 0 || yi < 0) {
        throw ContractError("line " + std::to_string(line_no) + ": header lacks column '" +
                            (xi < 0 ? x_column : y_column) + "'");
      }
      continue;
    }
    if (cells.size() != columns) {
      throw ContractError("line " + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                          " fields, found " + std::to_string(cells.size()));
    }
    double x = 0.0, y = 0.0;
    try {
      x = parse_double(cells[xi]);
      y = parse_double(cells[yi]);
    } catch (const std::exception& e) {
      throw ContractError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (std::isnan(y)) continue;
    s.x.push_back(x);
    s.y.push_back(y);
  }
  if (xi < 0) throw ContractError("CSV has no header row");
  return s;
}

std::vector<BandPoint> median_band(const std::vector<Series>& series) {
  std::map<double, std::vector<double>> by_x;
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size(); ++i) by_x[s.x[i]].push_back(s.y[i]);
  }
  std::vector<BandPoint> out;
  for (auto& [x, ys] : by_x) {
    std::sort(ys.begin(), ys.end());
    const size_t n = ys.size();
    BandPoint p;
    p.x = x;
    p.count = static_cast<int>(n);
    p.min = ys.front();
    p.max = ys.back();
    p.median = n % 2 ? ys[n / 2] : 0.5 * (ys[n / 2 - 1] + ys[n / 2]);
    out.push_back(p);
  }
  return out;
}

PlotKind plot_kind(const std::string& name) {
  if (name == "coverage") {
    return {"iteration", "max_rotation", "Tree coverage", "iteration", "max rotation (rad)"};
  }
  if (name == "training") {
    return {"env_steps", "mean_episode_rotation", "Training rotation", "environment steps",
            "mean episode rotation (rad)"};
  }
  if (name == "eval") {
    return {"env_steps", "mean_rotation", "Evaluation rotation", "environment steps",
            "mean rotation (rad)"};
  }
  throw ConfigError("unknown plot kind '" + name + "' (coverage|training|eval)");
}

std::string render_svg(const std::vector<Series>& series, const PlotKind& kind) {
  const auto band = median_band(series);
  if (band.empty()) throw ContractError("nothing to plot: no data rows");
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  double x0 = band.front().x, x1 = band.back().x;
  double y0 = band.front().min, y1 = band.front().max;
  for (const auto& p : band) {
    y0 = std::min(y0, p.min);
    y1 = std::max(y1, p.max);
  }
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
                    "viewBox=\"0 0 640 400\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         kind.title + "</text>\n";
  svg += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(H - B) + "\" x2=\"" + fmt(W - R) + "\" y2=\"" + fmt(H - B) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(T) + "\" x2=\"" + fmt(L) + "\" y2=\"" + fmt(H - B) +
         "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    svg += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(H - B + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + tick_label(xv) + "</text>\n";
    svg += "<text x=\"" + fmt(L - 6) + "\" y=\"" + fmt(py(yv) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + tick_label(yv) + "</text>\n";
  }
  svg += "<text x=\"" + fmt((L + W - R) / 2) + "\" y=\"" + fmt(H - 10) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + kind.x_label + "</text>\n";
  svg += "<text x=\"16\" y=\"" + fmt((T + H - B) / 2) + "\" transform=\"rotate(-90 16 " + fmt((T + H - B) / 2) +
         ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + kind.y_label + "</text>\n";

  if (series.size() > 1) {
    std::string pts;
    for (const auto& p : band) pts += fmt(px(p.x)) + "," + fmt(py(p.max)) + " ";
    for (auto it = band.rbegin(); it != band.rend(); ++it) pts += fmt(px(it->x)) + "," + fmt(py(it->min)) + " ";
    pts.pop_back();
    svg += "<polygon class=\"band\" points=\"" + pts + "\" fill=\"#4477aa\" fill-opacity=\"0.25\" stroke=\"none\"/>\n";
  }
  std::string line;
  for (const auto& p : band) line += fmt(px(p.x)) + "," + fmt(py(p.median)) + " ";
  line.pop_back();
  svg += "<polyline class=\"median\" points=\"" + line + "\" fill=\"none\" stroke=\"#4477aa\" stroke-width=\"2\"/>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace dexplore
