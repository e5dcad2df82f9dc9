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

#ifndef RICASSO_REPORT_HPP_
#define RICASSO_REPORT_HPP_

#include <string>
#include <vector>

#include "ricasso/ood.hpp"
#include "ricasso/train.hpp"

namespace ricasso {

// ROC curve from a score set: (fpr, tpr) pairs swept over thresholds,
// from (0,0) to (1,1).
std::vector<std::pair<double, double>> roc_points(const ScoreSet& scores);

// Figures are deterministic SVG strings paired with a CSV holding exactly
// the data needed to re-render them. The CSV's first line tags the figure
// type so regenerate_svg can dispatch.
std::string roc_csv(const std::vector<std::pair<double, double>>& points);
std::string roc_svg(const std::vector<std::pair<double, double>>& points);

struct HistogramData {
  std::vector<double> edges;     // bins+1 edges
  std::vector<long long> id_counts;
  std::vector<long long> ood_counts;
};
HistogramData score_histogram(const ScoreSet& scores, int bins = 40);
std::string histogram_csv(const HistogramData& h);
std::string histogram_svg(const HistogramData& h);

std::string bars_csv(const std::vector<std::string>& labels, const std::vector<double>& values);
std::string bars_svg(const std::vector<std::string>& labels, const std::vector<double>& values);

// Re-renders the SVG from a figure CSV (bit-identical to the original).
std::string regenerate_svg(const std::string& csv_text);

// Human-readable table (2 decimals) and full-precision CSV rows.
std::string ood_report_table(const std::vector<OODReport>& rows, const OODReport& mean_row);
std::string ood_report_csv(const std::vector<OODReport>& rows, const OODReport& mean_row);
std::vector<OODReport> parse_ood_report_csv(const std::string& text);

std::string ablation_table(const std::vector<AblationRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);

// Writes report.txt/report.csv plus figure pairs (and the raw score files
// they derive from) into dir.
void write_eval_bundle(const std::string& dir, const EvalResult& result, bool with_figures);

// Re-renders every figure in dir from its CSV; returns the file names that
// were written.
std::vector<std::string> regenerate_bundle_figures(const std::string& dir);

}  // namespace ricasso

#endif  // RICASSO_REPORT_HPP_
