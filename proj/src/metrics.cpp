#include "convgrade/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace convgrade {

namespace {

void check_pair(std::span<const double> pred, std::span<const int> target, const char* what) {
  if (pred.empty()) throw ContractError(std::string(what) + ": empty input");
  if (pred.size() != target.size()) {
    throw ContractError(std::string(what) + ": " + std::to_string(pred.size()) + " predictions for " +
                        std::to_string(target.size()) + " targets");
  }
}

}  // namespace

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"rmse", "pcc", "acc@0.5", "acc@1.0", "macro_acc@0.5", "macro_acc@1.0"};
  return names;
}

double metric_value(const MetricsReport& r, const std::string& name) {
  if (name == "rmse") return r.rmse;
  if (name == "pcc") return r.pcc;
  if (name == "acc@0.5") return r.acc05;
  if (name == "acc@1.0") return r.acc10;
  if (name == "macro_acc@0.5") return r.macro05;
  if (name == "macro_acc@1.0") return r.macro10;
  throw ContractError("unknown metric '" + name + "'");
}

double clamp_score(double y) { return std::clamp(y, 1.0, 9.0); }

double rmse(std::span<const double> pred, std::span<const int> target) {
  check_pair(pred, target, "rmse");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double pearson(std::span<const double> pred, std::span<const int> target, bool* undefined) {
  check_pair(pred, target, "pearson");
  const bool flat_pred = std::all_of(pred.begin(), pred.end(), [&](double v) { return v == pred[0]; });
  const bool flat_target = std::all_of(target.begin(), target.end(), [&](int v) { return v == target[0]; });
  if (undefined) *undefined = flat_pred || flat_target;
  if (flat_pred || flat_target) return 0.0;
  const double n = static_cast<double>(pred.size());
  double mp = 0, mt = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mt += target[i];
  }
  mp /= n;
  mt /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred[i] - mp, dy = target[i] - mt;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double margin_accuracy(std::span<const double> pred, std::span<const int> target, double margin) {
  check_pair(pred, target, "margin_accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (std::abs(pred[i] - target[i]) <= margin) ++hit;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

double macro_margin_accuracy(std::span<const double> pred, std::span<const int> target, double margin,
                             const CefrMap& cefr) {
  check_pair(pred, target, "macro_margin_accuracy");
  const std::size_t G = cefr.labels().size();
  std::vector<std::size_t> hit(G, 0), total(G, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t g = cefr.group_index(target[i]);
    ++total[g];
    if (std::abs(pred[i] - target[i]) <= margin) ++hit[g];
  }
  double sum = 0;
  std::size_t groups = 0;
  for (std::size_t g = 0; g < G; ++g) {
    if (!total[g]) continue;
    sum += 100.0 * static_cast<double>(hit[g]) / static_cast<double>(total[g]);
    ++groups;
  }
  return sum / static_cast<double>(groups);
}

Confusion confusion_matrix(std::span<const double> pred, std::span<const int> target, const CefrMap& cefr) {
  check_pair(pred, target, "confusion_matrix");
  Confusion c;
  c.labels = cefr.labels();
  const std::size_t G = c.labels.size();
  c.counts.assign(G, std::vector<std::size_t>(G, 0));
  c.percent.assign(G, std::vector<double>(G, 0.0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int binned = static_cast<int>(std::lround(clamp_score(pred[i])));
    ++c.counts[cefr.group_index(target[i])][cefr.group_index(binned)];
  }
  for (std::size_t r = 0; r < G; ++r) {
    std::size_t row = 0;
    for (auto v : c.counts[r]) row += v;
    if (!row) continue;
    for (std::size_t k = 0; k < G; ++k) c.percent[r][k] = 100.0 * static_cast<double>(c.counts[r][k]) / static_cast<double>(row);
  }
  return c;
}

MetricsReport compute_metrics(std::span<const double> pred, std::span<const int> target, const CefrMap& cefr) {
  check_pair(pred, target, "compute_metrics");
  MetricsReport r;
  r.n = pred.size();
  r.rmse = rmse(pred, target);
  r.pcc = pearson(pred, target, &r.pcc_undefined);
  r.acc05 = margin_accuracy(pred, target, 0.5);
  r.acc10 = margin_accuracy(pred, target, 1.0);
  r.macro05 = macro_margin_accuracy(pred, target, 0.5, cefr);
  r.macro10 = macro_margin_accuracy(pred, target, 1.0, cefr);
  r.confusion = confusion_matrix(pred, target, cefr);
  return r;
}

std::string MeanStd::str(int precision) const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << mean << " (" << std << ")";
  return os.str();
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw ContractError("mean_std: no values");
  MeanStd out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["rmse"] = r.rmse;
  j["pcc"] = r.pcc;
  j["pcc_undefined"] = r.pcc_undefined;
  j["acc@0.5"] = r.acc05;
  j["acc@1.0"] = r.acc10;
  j["macro_acc@0.5"] = r.macro05;
  j["macro_acc@1.0"] = r.macro10;
  j["confusion"] = {{"labels", r.confusion.labels}, {"counts", r.confusion.counts}, {"percent", r.confusion.percent}};
  return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.n = j.at("n").get<std::size_t>();
    r.rmse = j.at("rmse").get<double>();
    r.pcc = j.at("pcc").get<double>();
    r.pcc_undefined = j.value("pcc_undefined", false);
    r.acc05 = j.at("acc@0.5").get<double>();
    r.acc10 = j.at("acc@1.0").get<double>();
    r.macro05 = j.at("macro_acc@0.5").get<double>();
    r.macro10 = j.at("macro_acc@1.0").get<double>();
    const auto& c = j.at("confusion");
    r.confusion.labels = c.at("labels").get<std::vector<std::string>>();
    r.confusion.counts = c.at("counts").get<std::vector<std::vector<std::size_t>>>();
    r.confusion.percent = c.at("percent").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed metrics report: ") + e.what());
  }
  const std::size_t G = r.confusion.labels.size();
  if (r.confusion.percent.size() != G) throw ConfigError("malformed metrics report: confusion size");
  for (const auto& row : r.confusion.percent)
    if (row.size() != G) throw ConfigError("malformed metrics report: confusion row size");
  return r;
}

std::string render_confusion(const Confusion& c) {
  std::size_t w = 7;
  for (const auto& l : c.labels) w = std::max(w, l.size() + 2);
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "true\\pred";
  for (const auto& l : c.labels) os << std::right << std::setw(static_cast<int>(w)) << l;
  os << "\n";
  for (std::size_t r = 0; r < c.labels.size(); ++r) {
    os << std::left << std::setw(static_cast<int>(w)) << c.labels[r];
    for (std::size_t k = 0; k < c.labels.size(); ++k) {
      os << std::right << std::setw(static_cast<int>(w)) << std::fixed << std::setprecision(2) << c.percent[r][k];
    }
    os << "\n";
  }
  return os.str();
}

void emit_confusion(const MetricsReport& r, const std::filesystem::path& csv_path) {
  const Confusion& c = r.confusion;
  if (c.labels.empty()) throw ContractError("emit_confusion: report has no confusion matrix");
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "true\\pred";
  for (const auto& l : c.labels) csv << "," << l;
  csv << "\n";
  for (std::size_t row = 0; row < c.labels.size(); ++row) {
    csv << c.labels[row];
    for (double v : c.percent[row]) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", v);
      csv << "," << buf;
    }
    csv << "\n";
  }
  if (!csv) throw IoError("write failed for " + csv_path.string());
  auto txt_path = csv_path;
  if (txt_path.extension() == ".txt") {
    txt_path += ".txt";
  } else {
    txt_path.replace_extension(".txt");
  }
  std::ofstream txt(txt_path);
  if (!txt) throw IoError("cannot write " + txt_path.string());
  txt << render_confusion(c);
  if (!txt) throw IoError("write failed for " + txt_path.string());
}

}  // namespace convgrade
