#pragma once

#include <string>
#include <vector>

namespace dexplore {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

/// Reads columns `x_column` and `y_column` from CSV text with a header row.
/// Lines starting with '#' are skipped; rows whose y is NaN are dropped.
/// Malformed rows throw ContractError naming the line.
Series parse_series_csv(const std::string& text, const std::string& x_column,
                        const std::string& y_column, const std::string& label = "");

struct BandPoint {
  double x = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
  int count = 0;
};

/// Per distinct x (ascending) across all series: median, min and max of y.
std::vector<BandPoint> median_band(const std::vector<Series>& series);

struct PlotKind {
  std::string x_column, y_column, title, x_label, y_label;
};
/// coverage | training | eval
PlotKind plot_kind(const std::string& name);

/// Standalone SVG: a single series is drawn as one polyline; several series
/// as their median polyline over a shaded min-max band.
std::string render_svg(const std::vector<Series>& series, const PlotKind& kind);

}  // namespace dexplore
