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

#include "ricasso/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ricasso {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, const char* spec = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string fmt12(double v) { return fmt(v, "%.12g"); }

// Shared SVG scaffolding: fixed 480x360 viewport with a 40px margin.
constexpr int kW = 480;
constexpr int kH = 360;
constexpr int kMargin = 40;

double sx(double t) { return kMargin + t * (kW - 2 * kMargin); }
double sy(double t) { return kH - kMargin - t * (kH - 2 * kMargin); }

std::string svg_header(const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
  os << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << title << "</text>\n";
  return os.str();
}

std::string svg_axes() {
  std::ostringstream os;
  os << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\"" << kW - kMargin
     << "\" y2=\"" << kH - kMargin << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\""
     << kH - kMargin << "\" stroke=\"black\"/>\n";
  return os.str();
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace

std::vector<std::pair<double, double>> roc_points(const ScoreSet& scores) {
  scores.check_nonempty();
  std::vector<double> thresholds;
  thresholds.reserve(scores.id_scores.size() + scores.ood_scores.size());
  for (Eigen::Index i = 0; i < scores.id_scores.size(); ++i) {
    thresholds.push_back(scores.id_scores(i));
  }
  for (Eigen::Index i = 0; i < scores.ood_scores.size(); ++i) {
    thresholds.push_back(scores.ood_scores(i));
  }
  std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<std::pair<double, double>> pts;
  pts.emplace_back(0.0, 0.0);
  const double n_id = static_cast<double>(scores.id_scores.size());
  const double n_ood = static_cast<double>(scores.ood_scores.size());
  for (double th : thresholds) {
    const double tpr = (scores.id_scores.array() >= th).count() / n_id;
    const double fpr = (scores.ood_scores.array() >= th).count() / n_ood;
    pts.emplace_back(fpr, tpr);
  }
  pts.emplace_back(1.0, 1.0);
  return pts;
}

std::string roc_csv(const std::vector<std::pair<double, double>>& points) {
  std::ostringstream os;
  os << "# ricasso-figure: roc\n";
  os << "fpr,tpr\n";
  for (const auto& [fpr, tpr] : points) os << fmt(fpr) << ',' << fmt(tpr) << '\n';
  return os.str();
}

std::string roc_svg(const std::vector<std::pair<double, double>>& points) {
  std::ostringstream os;
  os << svg_header("ROC");
  os << svg_axes();
  os << "<line x1=\"" << fmt12(sx(0)) << "\" y1=\"" << fmt12(sy(0)) << "\" x2=\""
     << fmt12(sx(1)) << "\" y2=\"" << fmt12(sy(1))
     << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n";
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (const auto& [fpr, tpr] : points) {
    os << fmt12(sx(fpr)) << ',' << fmt12(sy(tpr)) << ' ';
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

HistogramData score_histogram(const ScoreSet& scores, int bins) {
  scores.check_nonempty();
  if (bins < 1) throw std::invalid_argument("score_histogram: bins >= 1");
  double lo = std::min(scores.id_scores.minCoeff(), scores.ood_scores.minCoeff());
  double hi = std::max(scores.id_scores.maxCoeff(), scores.ood_scores.maxCoeff());
  if (lo == hi) hi = lo + 1.0;
  HistogramData h;
  h.edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b) {
    h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / bins;
  }
  h.id_counts.assign(bins, 0);
  h.ood_counts.assign(bins, 0);
  auto bin_of = [&](double v) {
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    return std::clamp(b, 0, bins - 1);
  };
  for (Eigen::Index i = 0; i < scores.id_scores.size(); ++i) {
    ++h.id_counts[bin_of(scores.id_scores(i))];
  }
  for (Eigen::Index i = 0; i < scores.ood_scores.size(); ++i) {
    ++h.ood_counts[bin_of(scores.ood_scores(i))];
  }
  return h;
}

std::string histogram_csv(const HistogramData& h) {
  std::ostringstream os;
  os << "# ricasso-figure: histogram\n";
  os << "bin_lo,bin_hi,id_count,ood_count\n";
  for (size_t b = 0; b + 1 < h.edges.size(); ++b) {
    os << fmt(h.edges[b]) << ',' << fmt(h.edges[b + 1]) << ',' << h.id_counts[b] << ','
       << h.ood_counts[b] << '\n';
  }
  return os.str();
}

std::string histogram_svg(const HistogramData& h) {
  long long max_count = 1;
  for (size_t b = 0; b < h.id_counts.size(); ++b) {
    max_count = std::max({max_count, h.id_counts[b], h.ood_counts[b]});
  }
  const size_t bins = h.id_counts.size();
  std::ostringstream os;
  os << svg_header("ID vs OOD scores");
  os << svg_axes();
  for (size_t b = 0; b < bins; ++b) {
    const double x0 = sx(static_cast<double>(b) / bins);
    const double x1 = sx(static_cast<double>(b + 1) / bins);
    const double wid = (x1 - x0) / 2.0;
    const double id_h = static_cast<double>(h.id_counts[b]) / max_count;
    const double ood_h = static_cast<double>(h.ood_counts[b]) / max_count;
    os << "<rect x=\"" << fmt12(x0) << "\" y=\"" << fmt12(sy(id_h)) << "\" width=\""
       << fmt12(wid) << "\" height=\"" << fmt12(sy(0) - sy(id_h))
       << "\" fill=\"#1f77b4\" fill-opacity=\"0.7\"/>\n";
    os << "<rect x=\"" << fmt12(x0 + wid) << "\" y=\"" << fmt12(sy(ood_h)) << "\" width=\""
       << fmt12(wid) << "\" height=\"" << fmt12(sy(0) - sy(ood_h))
       << "\" fill=\"#d62728\" fill-opacity=\"0.7\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string bars_csv(const std::vector<std::string>& labels, const std::vector<double>& values) {
  if (labels.size() != values.size()) throw std::invalid_argument("bars_csv: length mismatch");
  std::ostringstream os;
  os << "# ricasso-figure: bars\n";
  os << "label,value\n";
  for (size_t i = 0; i < labels.size(); ++i) os << labels[i] << ',' << fmt(values[i]) << '\n';
  return os.str();
}

std::string bars_svg(const std::vector<std::string>& labels, const std::vector<double>& values) {
  double max_v = 1.0;
  for (double v : values) max_v = std::max(max_v, v);
  const size_t n = values.size();
  std::ostringstream os;
  os << svg_header("per-class accuracy");
  os << svg_axes();
  for (size_t i = 0; i < n; ++i) {
    const double x0 = sx(static_cast<double>(i) / n) + 2.0;
    const double x1 = sx(static_cast<double>(i + 1) / n) - 2.0;
    const double hgt = values[i] / max_v;
    os << "<rect x=\"" << fmt12(x0) << "\" y=\"" << fmt12(sy(hgt)) << "\" width=\""
       << fmt12(x1 - x0) << "\" height=\"" << fmt12(sy(0) - sy(hgt))
       << "\" fill=\"#2ca02c\"/>\n";
    os << "<text x=\"" << fmt12((x0 + x1) / 2) << "\" y=\"" << kH - kMargin + 14
       << "\" text-anchor=\"middle\" font-size=\"9\">" << labels[i] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string regenerate_svg(const std::string& csv_text) {
  const std::vector<std::string> lines = split_lines(csv_text);
  if (lines.empty()) throw std::invalid_argument("regenerate_svg: empty csv");
  const std::string& tag = lines[0];
  if (tag == "# ricasso-figure: roc") {
    std::vector<std::pair<double, double>> pts;
    for (size_t i = 2; i < lines.size(); ++i) {
      const auto cells = split_csv_row(lines[i]);
      pts.emplace_back(std::stod(cells.at(0)), std::stod(cells.at(1)));
    }
    return roc_svg(pts);
  }
  if (tag == "# ricasso-figure: histogram") {
    HistogramData h;
    for (size_t i = 2; i < lines.size(); ++i) {
      const auto cells = split_csv_row(lines[i]);
      if (h.edges.empty()) h.edges.push_back(std::stod(cells.at(0)));
      h.edges.push_back(std::stod(cells.at(1)));
      h.id_counts.push_back(std::stoll(cells.at(2)));
      h.ood_counts.push_back(std::stoll(cells.at(3)));
    }
    return histogram_svg(h);
  }
  if (tag == "# ricasso-figure: bars") {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (size_t i = 2; i < lines.size(); ++i) {
      const auto cells = split_csv_row(lines[i]);
      labels.push_back(cells.at(0));
      values.push_back(std::stod(cells.at(1)));
    }
    return bars_svg(labels, values);
  }
  throw std::invalid_argument("regenerate_svg: unknown figure tag '" + tag + "'");
}

std::string ood_report_table(const std::vector<OODReport>& rows, const OODReport& mean_row) {
  std::ostringstream os;
  os << "dataset            detector  AUROC(%)  FPR95(%)  ACC(%)   head    med    tail\n";
  os << "-----------------------------------------------------------------------------\n";
  auto emit = [&os](const OODReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-18s %-8s  %8.2f  %8.2f  %6.2f  %6.2f %6.2f %6.2f\n",
                  r.dataset.c_str(), to_string(r.kind).c_str(), 100.0 * r.auroc,
                  100.0 * r.fpr95, 100.0 * r.acc, 100.0 * r.group_acc.head,
                  100.0 * r.group_acc.medium, 100.0 * r.group_acc.tail);
    os << buf;
  };
  for (const auto& r : rows) emit(r);
  os << "-----------------------------------------------------------------------------\n";
  emit(mean_row);
  return os.str();
}

std::string ood_report_csv(const std::vector<OODReport>& rows, const OODReport& mean_row) {
  std::ostringstream os;
  os << "dataset,detector,auroc,fpr95,acc,head_acc,medium_acc,tail_acc,id_count,ood_count,"
        "config_hash\n";
  auto emit = [&os](const OODReport& r) {
    os << r.dataset << ',' << to_string(r.kind) << ',' << fmt(r.auroc) << ',' << fmt(r.fpr95)
       << ',' << fmt(r.acc) << ',' << fmt(r.group_acc.head) << ',' << fmt(r.group_acc.medium)
       << ',' << fmt(r.group_acc.tail) << ',' << r.id_count << ',' << r.ood_count << ','
       << r.config_hash << '\n';
  };
  for (const auto& r : rows) emit(r);
  emit(mean_row);
  return os.str();
}

std::vector<OODReport> parse_ood_report_csv(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  std::vector<OODReport> rows;
  for (size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split_csv_row(lines[i]);
    if (cells.size() < 11) throw std::invalid_argument("parse_ood_report_csv: short row");
    OODReport r;
    r.dataset = cells[0];
    r.kind = score_kind_from_string(cells[1]);
    r.auroc = std::stod(cells[2]);
    r.fpr95 = std::stod(cells[3]);
    r.acc = std::stod(cells[4]);
    r.group_acc.head = std::stod(cells[5]);
    r.group_acc.medium = std::stod(cells[6]);
    r.group_acc.tail = std::stod(cells[7]);
    r.id_count = std::stoll(cells[8]);
    r.ood_count = std::stoll(cells[9]);
    r.config_hash = cells[10];
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {
std::string onoff(bool b) { return b ? "on " : "off"; }
}  // namespace

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "NOD  RCL  AALA CBCL   ACC(%)  AUROC(%)  FPR95(%)\n";
  os << "--------------------------------------------------\n";
  for (const auto& r : rows) {
    char buf[120];
    std::snprintf(buf, sizeof(buf), "%s  %s  %s  %s   %6.2f  %8.2f  %8.2f\n",
                  onoff(r.toggles.nod).c_str(), onoff(r.toggles.rcl).c_str(),
                  onoff(r.toggles.aala).c_str(), onoff(r.toggles.cbcl).c_str(), 100.0 * r.acc,
                  100.0 * r.auroc, 100.0 * r.fpr95);
    os << buf;
  }
  return os.str();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "nod,rcl,aala,cbcl,acc,auroc,fpr95,run_dir\n";
  for (const auto& r : rows) {
    os << (r.toggles.nod ? 1 : 0) << ',' << (r.toggles.rcl ? 1 : 0) << ','
       << (r.toggles.aala ? 1 : 0) << ',' << (r.toggles.cbcl ? 1 : 0) << ',' << fmt(r.acc)
       << ',' << fmt(r.auroc) << ',' << fmt(r.fpr95) << ',' << r.run_dir << '\n';
  }
  return os.str();
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

}  // namespace

void write_eval_bundle(const std::string& dir, const EvalResult& result, bool with_figures) {
  fs::create_directories(dir);
  const fs::path base(dir);
  write_file(base / "report.txt", ood_report_table(result.per_source, result.mean_row));
  write_file(base / "report.csv", ood_report_csv(result.per_source, result.mean_row));

  // Raw scores, so every figure can be rebuilt from disk.
  if (!result.all_scores.empty()) {
    write_score_file((base / "scores_id.txt").string(), result.all_scores[0].id_scores);
  }
  for (size_t i = 0; i < result.all_scores.size(); ++i) {
    const std::string name = result.per_source[i].dataset;
    write_score_file((base / ("scores_" + name + ".txt")).string(),
                     result.all_scores[i].ood_scores);
    if (with_figures) {
      const auto pts = roc_points(result.all_scores[i]);
      write_file(base / ("roc_" + name + ".csv"), roc_csv(pts));
      write_file(base / ("roc_" + name + ".svg"), roc_svg(pts));
      const auto hist = score_histogram(result.all_scores[i]);
      write_file(base / ("hist_" + name + ".csv"), histogram_csv(hist));
      write_file(base / ("hist_" + name + ".svg"), histogram_svg(hist));
    }
  }

  if (with_figures && !result.labels.empty()) {
    // Per-class accuracy bars.
    int num_classes = 0;
    for (int y : result.labels) num_classes = std::max(num_classes, y + 1);
    std::vector<double> correct(num_classes, 0.0), total(num_classes, 0.0);
    for (size_t i = 0; i < result.labels.size(); ++i) {
      total[result.labels[i]] += 1.0;
      if (result.labels[i] == result.predictions[i]) correct[result.labels[i]] += 1.0;
    }
    std::vector<std::string> labels;
    std::vector<double> values;
    for (int c = 0; c < num_classes; ++c) {
      labels.push_back(std::to_string(c));
      values.push_back(total[c] > 0 ? correct[c] / total[c] : 0.0);
    }
    write_file(base / "class_acc.csv", bars_csv(labels, values));
    write_file(base / "class_acc.svg", bars_svg(labels, values));
  }
}

std::vector<std::string> regenerate_bundle_figures(const std::string& dir) {
  std::vector<std::string> written;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".csv") continue;
    std::ifstream in(entry.path());
    std::string first_line;
    std::getline(in, first_line);
    if (first_line.rfind("# ricasso-figure:", 0) != 0) continue;
    in.seekg(0);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string svg = regenerate_svg(text);
    fs::path out = entry.path();
    out.replace_extension(".svg");
    write_file(out, svg);
    written.push_back(out.filename().string());
  }
  std::sort(written.begin(), written.end());
  return written;
}

}  // namespace ricasso
