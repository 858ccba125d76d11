#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "convgrade/metrics.hpp"
#include "metric_oracle.hpp"

using namespace convgrade;


TEST_CASE("metrics agree with a streaming recomputation") {
  std::mt19937_64 g(21);
  const CefrMap cefr;
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + g() % 60;
    std::vector<double> pred(n);
    std::vector<int> y(n);
    metric_oracle::Streaming s;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = 1 + static_cast<int>(g() % 9);
      pred[i] = y[i] + std::normal_distribution<double>(0, 1.2)(g);
      s.push(pred[i], y[i], cefr);
    }
    const MetricsReport r = compute_metrics(pred, y, cefr);
    worst = std::max(worst, std::abs(r.rmse - std::sqrt(s.sq / s.n)));
    if (s.cyy > 0) worst = std::max(worst, std::abs(r.pcc - s.cxy / std::sqrt(s.cxx * s.cyy)));
    worst = std::max(worst, std::abs(r.acc05 - 100.0 * s.hit05 / s.n));
    worst = std::max(worst, std::abs(r.acc10 - 100.0 * s.hit10 / s.n));
    worst = std::max(worst, std::abs(r.macro05 - metric_oracle::Streaming::macro(s.g05)));
    worst = std::max(worst, std::abs(r.macro10 - metric_oracle::Streaming::macro(s.g10)));
    CHECK(r.rmse >= 0);
    CHECK(std::abs(r.pcc) <= 1.0 + 1e-12);
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("hand-checked fixtures") {
  const CefrMap cefr;
  const std::vector<double> p{4.4, 5.6, 7.0};
  const std::vector<int> y{4, 5, 7};
  CHECK(margin_accuracy(p, y, 0.5) == doctest::Approx(200.0 / 3.0));
  CHECK(margin_accuracy(p, y, 1.0) == 100.0);
  CHECK(pearson(std::vector<double>{2, 1}, std::vector<int>{1, 2}) == doctest::Approx(-1.0));

  const std::vector<int> yy{2, 4, 6, 8};
  const std::vector<double> exact{2, 4, 6, 8};
  const MetricsReport r = compute_metrics(exact, yy, cefr);
  CHECK(r.rmse == 0.0);
  CHECK(r.pcc == doctest::Approx(1.0));
  CHECK(r.acc05 == 100.0);
  CHECK(r.macro10 == 100.0);

  bool undefined = false;
  CHECK(pearson(std::vector<double>{3, 3, 3}, std::vector<int>{1, 2, 3}, &undefined) == 0.0);
  CHECK(undefined);
  CHECK(compute_metrics(std::vector<double>{3, 3}, std::vector<int>{1, 2}, cefr).pcc_undefined);

  CHECK_THROWS_AS(compute_metrics(std::vector<double>{}, std::vector<int>{}, cefr), ContractError);
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{1}, std::vector<int>{1, 2}, cefr), ContractError);
}

TEST_CASE("macro equals micro within one group") {
  std::mt19937_64 g(3);
  const CefrMap cefr;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(10);
    std::vector<int> y(10);
    for (std::size_t i = 0; i < 10; ++i) {
      y[i] = 5 + static_cast<int>(g() % 2);  // both B1
      p[i] = y[i] + std::normal_distribution<double>(0, 1)(g);
    }
    CHECK(macro_margin_accuracy(p, y, 0.5, cefr) == doctest::Approx(margin_accuracy(p, y, 0.5)));
    CHECK(macro_margin_accuracy(p, y, 1.0, cefr) == doctest::Approx(margin_accuracy(p, y, 1.0)));
  }
}

TEST_CASE("confusion matrix") {
  const CefrMap cefr;
  std::vector<int> y;
  std::vector<double> exact, low;
  for (int s = 1; s <= 9; ++s) {
    for (int k = 0; k < 3; ++k) {
      y.push_back(s);
      exact.push_back(s);
      low.push_back(std::max(1, s - 2));  // one CEFR group lower
    }
  }
  const Confusion c = confusion_matrix(exact, y, cefr);
  REQUIRE(c.labels == std::vector<std::string>{"A1", "A2", "B1", "B2", "C1"});
  for (std::size_t i = 0; i < c.labels.size(); ++i)
    for (std::size_t j = 0; j < c.labels.size(); ++j) CHECK(c.percent[i][j] == (i == j ? 100.0 : 0.0));

  const Confusion d = confusion_matrix(low, y, cefr);
  CHECK(d.percent[0][0] == 100.0);
  for (std::size_t i = 1; i < d.labels.size(); ++i) CHECK(d.percent[i][i - 1] == 100.0);

  // Clamping and rounding: 9.7 and 12 land in C1, -3 in A1.
  const Confusion e = confusion_matrix(std::vector<double>{9.7, 12, -3}, std::vector<int>{9, 9, 1}, cefr);
  CHECK(e.counts[4][4] == 2);
  CHECK(e.counts[0][0] == 1);

  std::mt19937_64 g(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(30);
    std::vector<int> t(30);
    for (std::size_t i = 0; i < 30; ++i) {
      t[i] = 1 + static_cast<int>(g() % 9);
      p[i] = std::uniform_real_distribution<double>(0, 10)(g);
    }
    const Confusion m = confusion_matrix(p, t, cefr);
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
      double row = 0, n = 0;
      for (std::size_t j = 0; j < m.labels.size(); ++j) {
        row += m.percent[i][j];
        n += static_cast<double>(m.counts[i][j]);
      }
      if (n > 0) CHECK(std::abs(row - 100.0) <= 0.01);
      else CHECK(row == 0.0);
    }
  }
}

TEST_CASE("mean and sample deviation") {
  const MeanStd a = mean_std(std::vector<double>{0.5, 0.7});
  CHECK(a.mean == doctest::Approx(0.6));
  CHECK(a.std == doctest::Approx(0.1414213562));
  CHECK(a.str() == "0.600 (0.141)");
  const MeanStd one = mean_std(std::vector<double>{0.507});
  CHECK(one.std == 0.0);
  CHECK(one.str() == "0.507 (0.000)");
}

TEST_CASE("metric names, json and confusion files") {
  const CefrMap cefr;
  const MetricsReport r = compute_metrics(std::vector<double>{1.2, 3.9, 6.4, 8.8}, std::vector<int>{1, 4, 6, 9}, cefr);
  CHECK(metric_names().size() == 6);
  CHECK(metric_value(r, "rmse") == r.rmse);
  CHECK(metric_value(r, "macro_acc@1.0") == r.macro10);
  CHECK_THROWS(metric_value(r, "f1"));
  const MetricsReport back = metrics_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(to_json(back).dump() == to_json(r).dump());

  const auto dir = std::filesystem::temp_directory_path() / "convgrade_test_metrics";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  emit_confusion(r, dir / "cm.csv");
  std::ifstream csv(dir / "cm.csv");
  std::string header;
  std::getline(csv, header);
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    double sum = 0;
    while (std::getline(ss, cell, ',')) sum += std::stod(cell);
    if (sum > 0) CHECK(std::abs(sum - 100.0) <= 0.01);
    ++rows;
  }
  CHECK(rows == 5);
  CHECK(std::filesystem::exists(dir / "cm.txt"));
  CHECK_THROWS_AS(emit_confusion(r, dir / "missing" / "cm.csv"), IoError);
  std::filesystem::remove_all(dir);
}
