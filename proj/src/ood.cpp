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

#include "ricasso/ood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "ricasso/losses.hpp"

namespace ricasso {

ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "msp") return ScoreKind::kMsp;
  if (s == "energy") return ScoreKind::kEnergy;
  if (s == "odin") return ScoreKind::kOdin;
  throw std::invalid_argument("unknown detector '" + s + "' (want msp|energy|odin)");
}

std::string to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::kMsp: return "msp";
    case ScoreKind::kEnergy: return "energy";
    case ScoreKind::kOdin: return "odin";
  }
  return "?";
}

void ScoreSet::check_nonempty() const {
  if (id_scores.size() == 0 || ood_scores.size() == 0) {
    throw std::invalid_argument("ScoreSet: both sides must be nonempty");
  }
  if (!id_scores.allFinite() || !ood_scores.allFinite()) {
    throw std::invalid_argument("ScoreSet: scores must be finite");
  }
}

double msp_score(const Eigen::VectorXd& logits) {
  if (!logits.allFinite()) throw std::invalid_argument("msp_score: non-finite logits");
  const double m = logits.maxCoeff();
  const double s = (logits.array() - m).exp().sum();
  return 1.0 / s;  // exp(0) / sum == max softmax
}

Eigen::VectorXd msp_scores(const Eigen::MatrixXd& logits) {
  Eigen::VectorXd out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out(i) = msp_score(logits.row(i));
  return out;
}

Eigen::VectorXd energy_scores(const Eigen::MatrixXd& logits, double tau) {
  Eigen::VectorXd out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out(i) = -energy_score(Eigen::VectorXd(logits.row(i).transpose()), tau);
  }
  return out;
}

Eigen::VectorXd odin_scores(const MoeModel& model, const Eigen::MatrixXd& inputs,
                            const OdinConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw std::invalid_argument("odin: temperature must be > 0");
  if (cfg.epsilon < 0.0) throw std::invalid_argument("odin: epsilon must be >= 0");

  BatchLayout layout;
  layout.n_id = static_cast<int>(inputs.rows());

  // Pass 1: input gradient of the temperature-scaled log max-softmax.
  ad::Var x = ad::Var::leaf(inputs);
  ExpertEnsembleOutput out = model.forward(x, layout);
  ad::Var scaled = ad::mul_scalar(out.ensemble_logits, 1.0 / cfg.temperature);
  ad::Var logp = ad::log_softmax_rows(scaled);
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(inputs.rows(), logp.cols());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    Eigen::Index best;
    logp.value().row(i).maxCoeff(&best);
    mask(i, best) = 1.0;
  }
  ad::Var objective = ad::sum(ad::mul(logp, ad::Var::constant(mask)));
  ad::backward(objective);
  if (x.grad().size() == 0) throw std::runtime_error("odin: input gradient unavailable");

  Eigen::MatrixXd perturbed = inputs + cfg.epsilon * x.grad().array().sign().matrix();

  // Pass 2: rescore at the perturbed input.
  Eigen::MatrixXd logits2 = model.ensemble_logits(perturbed);
  Eigen::VectorXd scores(inputs.rows());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    scores(i) = msp_score(Eigen::VectorXd(logits2.row(i).transpose() / cfg.temperature));
  }
  return scores;
}

double odin_score(const MoeModel& model, const Eigen::VectorXd& input, const OdinConfig& cfg) {
  Eigen::MatrixXd one(1, input.size());
  one.row(0) = input.transpose();
  return odin_scores(model, one, cfg)(0);
}

double auroc(const ScoreSet& scores) {
  scores.check_nonempty();
  const Eigen::Index n = scores.id_scores.size();
  const Eigen::Index m = scores.ood_scores.size();

  // Midrank Mann-Whitney: rank the pooled scores, average ranks over ties,
  // then U = R_id - n(n+1)/2.
  struct Entry { double score; bool is_id; };
  std::vector<Entry> pool;
  pool.reserve(static_cast<size_t>(n + m));
  for (Eigen::Index i = 0; i < n; ++i) pool.push_back({scores.id_scores(i), true});
  for (Eigen::Index i = 0; i < m; ++i) pool.push_back({scores.ood_scores(i), false});
  std::sort(pool.begin(), pool.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });

  double rank_sum_id = 0.0;
  size_t i = 0;
  while (i < pool.size()) {
    size_t j = i;
    while (j < pool.size() && pool[j].score == pool[i].score) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t k = i; k < j; ++k) {
      if (pool[k].is_id) rank_sum_id += midrank;
    }
    i = j;
  }
  const double u = rank_sum_id - 0.5 * static_cast<double>(n) * static_cast<double>(n + 1);
  return u / (static_cast<double>(n) * static_cast<double>(m));
}

double fpr_at_tpr(const ScoreSet& scores, double tpr_target) {
  scores.check_nonempty();
  if (!(tpr_target > 0.0) || tpr_target > 1.0) {
    throw std::invalid_argument("fpr_at_tpr: tpr_target must be in (0, 1]");
  }
  const Eigen::Index n = scores.id_scores.size();
  std::vector<double> id(scores.id_scores.data(), scores.id_scores.data() + n);
  std::sort(id.begin(), id.end(), std::greater<double>());
  // k-th largest ID score accepts at least k/n of the ID side.
  const auto k = static_cast<Eigen::Index>(
      std::ceil(tpr_target * static_cast<double>(n) - 1e-12));
  const double theta = id[static_cast<size_t>(std::max<Eigen::Index>(k, 1) - 1)];
  const auto above = static_cast<double>(
      (scores.ood_scores.array() >= theta).count());
  return above / static_cast<double>(scores.ood_scores.size());
}

std::vector<ClassGroup> class_groups(const ClassProfile& profile) {
  const int c = profile.num_classes;
  std::vector<int> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&profile](int a, int b) {
    return profile.counts[a] > profile.counts[b];
  });
  std::vector<ClassGroup> groups(c, ClassGroup::kTail);
  const int b1 = c / 3;
  const int b2 = 2 * c / 3;
  for (int r = 0; r < c; ++r) {
    groups[order[r]] =
        (r < b1) ? ClassGroup::kHead : (r < b2 ? ClassGroup::kMedium : ClassGroup::kTail);
  }
  return groups;
}

GroupAccuracy group_accuracy(const std::vector<int>& predictions,
                             const std::vector<int>& labels, const ClassProfile& profile) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("group_accuracy: length mismatch");
  }
  const std::vector<ClassGroup> groups = class_groups(profile);
  double correct[3] = {0, 0, 0};
  double total[3] = {0, 0, 0};
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= profile.num_classes) {
      throw std::invalid_argument("group_accuracy: label out of range");
    }
    const int g = static_cast<int>(groups[static_cast<size_t>(y)]);
    total[g] += 1.0;
    if (predictions[i] == y) correct[g] += 1.0;
  }
  GroupAccuracy acc;
  acc.head = total[0] > 0 ? correct[0] / total[0] : 0.0;
  acc.medium = total[1] > 0 ? correct[1] / total[1] : 0.0;
  acc.tail = total[2] > 0 ? correct[2] / total[2] : 0.0;
  return acc;
}

Eigen::VectorXd read_score_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open score file: " + path);
  std::vector<double> values;
  double v;
  while (in >> v) values.push_back(v);
  if (values.empty()) throw std::runtime_error("score file is empty: " + path);
  Eigen::VectorXd out(static_cast<Eigen::Index>(values.size()));
  for (size_t i = 0; i < values.size(); ++i) out(static_cast<Eigen::Index>(i)) = values[i];
  return out;
}

void write_score_file(const std::string& path, const Eigen::VectorXd& scores) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write score file: " + path);
  char buf[64];
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", scores(i));
    out << buf;
  }
}

}  // namespace ricasso
