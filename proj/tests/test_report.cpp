/*
 * Copyright 2026 The ricasso authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ricasso/report.hpp"
#include "ricasso/rng.hpp"

using namespace ricasso;
namespace fs = std::filesystem;

namespace {

ScoreSet random_scores(int n, int m, std::uint64_t seed) {
  Rng rng(seed);
  ScoreSet s;
  s.id_scores.resize(n);
  s.ood_scores.resize(m);
  for (int i = 0; i < n; ++i) s.id_scores(i) = rng.normal() + 1.0;
  for (int i = 0; i < m; ++i) s.ood_scores(i) = rng.normal();
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("roc points span the unit square corners") {
  ScoreSet s = random_scores(50, 40, 3);
  const auto pts = roc_points(s);
  CHECK(pts.front() == std::make_pair(0.0, 0.0));
  CHECK(pts.back() == std::make_pair(1.0, 1.0));
  for (size_t i = 1; i < pts.size(); ++i) {
    CHECK(pts[i].first >= pts[i - 1].first - 1e-12);
    CHECK(pts[i].second >= pts[i - 1].second - 1e-12);
  }
}

TEST_CASE("figures regenerate bit-identically from their raw data") {
  ScoreSet s = random_scores(60, 45, 5);

  SUBCASE("roc") {
    const auto pts = roc_points(s);
    const std::string csv = roc_csv(pts);
    const std::string svg = roc_svg(pts);
    CHECK(regenerate_svg(csv) == svg);
  }
  SUBCASE("histogram") {
    const HistogramData h = score_histogram(s, 24);
    CHECK(regenerate_svg(histogram_csv(h)) == histogram_svg(h));
  }
  SUBCASE("bars") {
    const std::vector<std::string> labels = {"0", "1", "2"};
    const std::vector<double> values = {0.25, 1.0, 0.5};
    CHECK(regenerate_svg(bars_csv(labels, values)) == bars_svg(labels, values));
  }
  SUBCASE("unknown tags rejected") {
    CHECK_THROWS_AS(regenerate_svg("# ricasso-figure: pie\nx\n1\n"), std::invalid_argument);
  }
}

TEST_CASE("report csv keeps full precision") {
  OODReport r;
  r.dataset = "blob";
  r.kind = ScoreKind::kEnergy;
  r.auroc = 0.123456789012345678;
  r.fpr95 = 1.0 / 3.0;
  r.acc = 0.987654321098765;
  r.group_acc = {0.1, 0.2, 1.0 / 7.0};
  r.id_count = 100;
  r.ood_count = 50;
  r.config_hash = "abc123";
  OODReport mean = r;
  mean.dataset = "mean";

  const std::string csv = ood_report_csv({r}, mean);
  const auto rows = parse_ood_report_csv(csv);
  REQUIRE(rows.size() == 2);
  CHECK(std::abs(rows[0].auroc - r.auroc) < 1e-12);
  CHECK(std::abs(rows[0].fpr95 - r.fpr95) < 1e-12);
  CHECK(std::abs(rows[0].group_acc.tail - r.group_acc.tail) < 1e-12);
  CHECK(rows[0].config_hash == "abc123");
  CHECK(rows[1].dataset == "mean");

  const std::string table = ood_report_table({r}, mean);
  CHECK(table.find("blob") != std::string::npos);
  CHECK(table.find("12.35") != std::string::npos);  // 2-decimal percentage
}

TEST_CASE("ablation tables carry the toggle pattern") {
  std::vector<AblationRow> rows(2);
  rows[0].toggles = {false, false, true, false};
  rows[0].acc = 0.5;
  rows[1].toggles = {true, true, true, true};
  rows[1].auroc = 0.75;
  const std::string csv = ablation_csv(rows);
  CHECK(csv.find("0,0,1,0") != std::string::npos);
  CHECK(csv.find("1,1,1,1") != std::string::npos);
  const std::string table = ablation_table(rows);
  CHECK(table.find("off") != std::string::npos);
  CHECK(table.find("on ") != std::string::npos);
}

TEST_CASE("eval bundles write paired figure and data files") {
  EvalResult result;
  OODReport rep;
  rep.dataset = "blob";
  rep.kind = ScoreKind::kEnergy;
  rep.auroc = 0.9;
  rep.fpr95 = 0.2;
  rep.acc = 0.8;
  result.per_source.push_back(rep);
  result.mean_row = rep;
  result.mean_row.dataset = "mean";
  result.all_scores.push_back(random_scores(30, 30, 7));
  result.labels = {0, 1, 0, 1};
  result.predictions = {0, 1, 1, 1};

  const fs::path dir = fs::temp_directory_path() / "ricasso_bundle_test";
  fs::remove_all(dir);
  write_eval_bundle(dir.string(), result, /*with_figures=*/true);
  CHECK(fs::exists(dir / "report.txt"));
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(fs::exists(dir / "roc_blob.csv"));
  CHECK(fs::exists(dir / "roc_blob.svg"));
  CHECK(fs::exists(dir / "hist_blob.csv"));
  CHECK(fs::exists(dir / "hist_blob.svg"));
  CHECK(fs::exists(dir / "class_acc.csv"));
  CHECK(fs::exists(dir / "scores_id.txt"));
  CHECK(fs::exists(dir / "scores_blob.txt"));

  SUBCASE("regeneration reproduces the stored SVG bytes") {
    const std::string before = slurp(dir / "roc_blob.svg");
    const auto written = regenerate_bundle_figures(dir.string());
    CHECK(!written.empty());
    CHECK(slurp(dir / "roc_blob.svg") == before);
  }
  SUBCASE("tables-only mode skips figures") {
    const fs::path lean = fs::temp_directory_path() / "ricasso_bundle_lean";
    fs::remove_all(lean);
    write_eval_bundle(lean.string(), result, /*with_figures=*/false);
    CHECK(fs::exists(lean / "report.csv"));
    CHECK(!fs::exists(lean / "roc_blob.svg"));
    fs::remove_all(lean);
  }
  fs::remove_all(dir);
}
