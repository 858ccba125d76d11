#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "convgrade/corpus.hpp"

namespace convgrade {

/// Rows are true CEFR groups, columns predicted groups.
struct Confusion {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;
  /// Row-normalized percentages; empty rows stay all zero.
  std::vector<std::vector<double>> percent;
};

struct MetricsReport {
  std::size_t n = 0;
  double rmse = 0;
  double pcc = 0;
  bool pcc_undefined = false;  // constant predictions or targets; pcc reported as 0
  double acc05 = 0;            // percent within 0.5
  double acc10 = 0;            // percent within 1.0
  double macro05 = 0;          // mean over CEFR groups present in the targets
  double macro10 = 0;
  Confusion confusion;
};

/// Metric names in report order.
const std::vector<std::string>& metric_names();
/// Value of a metric by name (see metric_names()).
double metric_value(const MetricsReport& r, const std::string& name);

double rmse(std::span<const double> pred, std::span<const int> target);
/// Pearson correlation; `undefined` is set and 0 returned when either side is constant.
double pearson(std::span<const double> pred, std::span<const int> target, bool* undefined = nullptr);
double margin_accuracy(std::span<const double> pred, std::span<const int> target, double margin);
double macro_margin_accuracy(std::span<const double> pred, std::span<const int> target, double margin,
                             const CefrMap& cefr);
/// Bins clamp(round(pred), 1, 9) through the CEFR map.
Confusion confusion_matrix(std::span<const double> pred, std::span<const int> target, const CefrMap& cefr);

/// ContractError for empty input or a length mismatch. Predictions are used as given.
MetricsReport compute_metrics(std::span<const double> pred, std::span<const int> target, const CefrMap& cefr);

double clamp_score(double y);

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample (n - 1) standard deviation; 0 for one value
  /// "0.507 (0.001)"
  std::string str(int precision = 3) const;
};
MeanStd mean_std(std::span<const double> values);

nlohmann::ordered_json to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);

/// Writes the CSV to `csv_path` and an aligned text table next to it (".txt").
void emit_confusion(const MetricsReport& r, const std::filesystem::path& csv_path);
std::string render_confusion(const Confusion& c);

}  // namespace convgrade
