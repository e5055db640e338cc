#include "tokenlens/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "tokenlens/error.hpp"

namespace tokenlens::stats {
namespace {

[[noreturn]] void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, "stats", msg);
}

bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

std::string xml_escape(const std::string& s) {
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

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorKind::degenerate, "correlation of a constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    fail(ErrorKind::invalid_argument, "spearman inputs differ in length");
  if (x.size() < 3) fail(ErrorKind::invalid_argument, "spearman needs at least 3 pairs");
  if (is_constant(x) || is_constant(y))
    fail(ErrorKind::degenerate, "spearman undefined for a constant input");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

std::optional<double> spearman_or_null(std::span<const double> x, std::span<const double> y) {
  std::vector<double> fx;
  std::vector<double> fy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isnan(x[i]) || std::isnan(y[i])) continue;
    fx.push_back(x[i]);
    fy.push_back(y[i]);
  }
  if (fx.size() < 3 || is_constant(fx) || is_constant(fy)) return std::nullopt;
  return spearman(fx, fy);
}

void MetricTable::add_row(MetricRow row) {
  if (row.metrics.size() != metric_columns_.size() ||
      row.attributes.size() != attribute_columns_.size()) {
    fail(ErrorKind::contract, "row width does not match table columns");
  }
  const auto key = std::make_pair(row.image_id, row.layer);
  if (index_.contains(key)) {
    fail(ErrorKind::contract, "duplicate key (" + row.image_id + ", layer " +
                                  std::to_string(row.layer) + ")");
  }
  auto [it, inserted] = image_attributes_.try_emplace(row.image_id, row.attributes);
  if (!inserted) {
    for (std::size_t i = 0; i < row.attributes.size(); ++i) {
      const double a = it->second[i];
      const double b = row.attributes[i];
      if (!(a == b || (std::isnan(a) && std::isnan(b)))) {
        fail(ErrorKind::contract, "attribute '" + attribute_columns_[i] + "' of image " +
                                      row.image_id + " differs across layers");
      }
    }
  }
  index_[key] = rows_.size();
  rows_.push_back(std::move(row));
}

std::vector<std::size_t> MetricTable::layers() const {
  std::set<std::size_t> s;
  for (const auto& r : rows_) s.insert(r.layer);
  return {s.begin(), s.end()};
}

CorrelationGrid correlate_table(const MetricTable& table, bool by_layer) {
  CorrelationGrid g;
  g.metrics = table.metric_columns();
  g.attributes = table.attribute_columns();
  g.pooled = !by_layer;
  std::vector<std::vector<const MetricRow*>> groups;
  if (by_layer) {
    g.layers = table.layers();
    groups.resize(g.layers.size());
    for (const auto& r : table.rows()) {
      const auto pos = std::lower_bound(g.layers.begin(), g.layers.end(), r.layer);
      groups[static_cast<std::size_t>(pos - g.layers.begin())].push_back(&r);
    }
  } else {
    groups.emplace_back();
    for (const auto& r : table.rows()) groups.back().push_back(&r);
  }
  for (const auto& rows : groups) {
    auto& layer_cells = g.values.emplace_back(
        g.metrics.size(), std::vector<std::optional<double>>(g.attributes.size()));
    for (std::size_t m = 0; m < g.metrics.size(); ++m) {
      std::vector<double> x(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) x[i] = rows[i]->metrics[m];
      for (std::size_t a = 0; a < g.attributes.size(); ++a) {
        std::vector<double> y(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) y[i] = rows[i]->attributes[a];
        layer_cells[m][a] = spearman_or_null(x, y);
      }
    }
  }
  return g;
}

std::vector<AggregateCell> aggregate(std::span<const KeyedTable> tables,
                                     const std::vector<std::string>& group_keys) {
  if (tables.empty()) fail(ErrorKind::invalid_argument, "nothing to aggregate");
  const auto& metrics = tables.front().table.metric_columns();
  // group -> layer -> metric -> values
  std::map<std::string, std::map<std::size_t, std::vector<std::vector<double>>>> acc;
  for (const auto& t : tables) {
    if (t.table.metric_columns() != metrics)
      fail(ErrorKind::contract, "tables disagree on metric columns");
    std::string group;
    for (const auto& key : group_keys) {
      const auto it = t.keys.find(key);
      if (it == t.keys.end()) fail(ErrorKind::contract, "table lacks group key '" + key + "'");
      if (!group.empty()) group += '/';
      group += it->second;
    }
    if (group_keys.empty()) group = "all";
    auto& by_layer = acc[group];
    if (t.table.rows().empty()) continue;
    for (const auto& r : t.table.rows()) {
      auto& cols = by_layer[r.layer];
      cols.resize(metrics.size());
      for (std::size_t m = 0; m < metrics.size(); ++m)
        if (!std::isnan(r.metrics[m])) cols[m].push_back(r.metrics[m]);
    }
  }
  std::vector<AggregateCell> out;
  for (const auto& [group, by_layer] : acc) {
    if (by_layer.empty()) fail(ErrorKind::contract, "empty group '" + group + "'");
    for (const auto& [layer, cols] : by_layer) {
      for (std::size_t m = 0; m < metrics.size(); ++m) {
        const auto& v = cols[m];
        AggregateCell c{group, layer, metrics[m], std::numeric_limits<double>::quiet_NaN(),
                        std::numeric_limits<double>::quiet_NaN(), v.size()};
        if (!v.empty()) {
          const double n = static_cast<double>(v.size());
          c.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
          double ss = 0.0;
          for (double x : v) ss += (x - c.mean) * (x - c.mean);
          c.variance = ss / n;
        }
        out.push_back(c);
      }
    }
  }
  return out;
}

std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label, std::span<const Series> series) {
  constexpr double kWidth = 640;
  constexpr double kHeight = 400;
  constexpr double kLeft = 70;
  constexpr double kRight = 150;
  constexpr double kTop = 40;
  constexpr double kBottom = 50;
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  double xmin = std::numeric_limits<double>::infinity();
  double xmax = -xmin;
  double ymin = xmin;
  double ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream svg;
  svg << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      kWidth, kHeight);
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
                     kLeft + pw / 2, xml_escape(title));
  svg << fmt::format(
      "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n", kLeft,
      kTop, pw, ph);
  for (int t = 0; t <= 4; ++t) {
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    svg << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.4g}</text>\n",
                       kLeft - 6, py(yv) + 4, yv);
    svg << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.4g}</text>\n",
                       px(xv), kTop + ph + 16, xv);
  }
  svg << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n",
                     kLeft + pw / 2, kHeight - 10, xml_escape(x_label));
  svg << fmt::format(
      "<text x=\"16\" y=\"{:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1f})\">{}"
      "</text>\n",
      kTop + ph / 2, kTop + ph / 2, xml_escape(y_label));
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      points += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
    }
    svg << fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
                       color, points);
    const double ly = kTop + 14 + 18.0 * static_cast<double>(k);
    svg << fmt::format(
        "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" "
        "stroke-width=\"2\"/>\n",
        kLeft + pw + 10, ly, kLeft + pw + 30, ly, color);
    svg << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", kLeft + pw + 36, ly + 4,
                       xml_escape(s.name));
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace tokenlens::stats
