#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tokenlens::stats {

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> values);

double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of average ranks. Requires equal lengths >= 3 and
/// non-constant inputs (throws Error{degenerate} otherwise).
double spearman(std::span<const double> x, std::span<const double> y);

/// Spearman with NaN pairs dropped; nullopt when undefined.
std::optional<double> spearman_or_null(std::span<const double> x, std::span<const double> y);

struct MetricRow {
  std::string image_id;
  std::size_t layer = 0;
  std::vector<double> metrics;     // aligned with MetricTable::metric_columns
  std::vector<double> attributes;  // aligned with MetricTable::attribute_columns
};

/// Rows keyed by (image_id, layer). Attribute values must be numeric
/// (booleans as 0/1); NaN marks a missing metric.
class MetricTable {
 public:
  MetricTable() = default;
  MetricTable(std::vector<std::string> metric_columns, std::vector<std::string> attribute_columns)
      : metric_columns_(std::move(metric_columns)),
        attribute_columns_(std::move(attribute_columns)) {}

  void add_row(MetricRow row);

  const std::vector<std::string>& metric_columns() const { return metric_columns_; }
  const std::vector<std::string>& attribute_columns() const { return attribute_columns_; }
  const std::vector<MetricRow>& rows() const { return rows_; }
  std::vector<std::size_t> layers() const;

 private:
  std::vector<std::string> metric_columns_;
  std::vector<std::string> attribute_columns_;
  std::vector<MetricRow> rows_;
  std::map<std::pair<std::string, std::size_t>, std::size_t> index_;
  std::map<std::string, std::vector<double>> image_attributes_;
};

struct CorrelationGrid {
  std::vector<std::size_t> layers;  // empty layer list + pooled flag when not by layer
  bool pooled = false;
  std::vector<std::string> metrics;
  std::vector<std::string> attributes;
  /// values[layer_index][metric][attribute]; nullopt marks an undefined cell.
  std::vector<std::vector<std::vector<std::optional<double>>>> values;
};

CorrelationGrid correlate_table(const MetricTable& table, bool by_layer);

struct KeyedTable {
  std::map<std::string, std::string> keys;  // e.g. {"family": "spatial"}
  MetricTable table;
};

struct AggregateCell {
  std::string group;
  std::size_t layer = 0;
  std::string metric;
  double mean = 0.0;
  double variance = 0.0;  // population
  std::size_t count = 0;
};

/// Groups tables by the values of `group_keys` and reports mean/variance of
/// every metric over all rows of the group at each layer.
std::vector<AggregateCell> aggregate(std::span<const KeyedTable> tables,
                                     const std::vector<std::string>& group_keys);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained SVG line chart.
std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label, std::span<const Series> series);

}  // namespace tokenlens::stats
