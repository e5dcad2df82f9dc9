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

#ifndef RICASSO_OOD_HPP_
#define RICASSO_OOD_HPP_

#include <Eigen/Core>
#include <string>
#include <vector>

#include "ricasso/data.hpp"
#include "ricasso/model.hpp"

namespace ricasso {

enum class ScoreKind { kMsp, kEnergy, kOdin };

ScoreKind score_kind_from_string(const std::string& s);
std::string to_string(ScoreKind k);

// Score polarity is fixed library-wide: higher means more in-distribution.
struct ScoreSet {
  Eigen::VectorXd id_scores;
  Eigen::VectorXd ood_scores;
  ScoreKind kind = ScoreKind::kMsp;

  void check_nonempty() const;
};

struct GroupAccuracy {
  double head = 0.0;
  double medium = 0.0;
  double tail = 0.0;
};

struct OODReport {
  std::string dataset;
  ScoreKind kind = ScoreKind::kMsp;
  double auroc = 0.0;
  double fpr95 = 0.0;
  double acc = 0.0;
  GroupAccuracy group_acc;
  long long id_count = 0;
  long long ood_count = 0;
  std::string config_hash;
};

double msp_score(const Eigen::VectorXd& logits);
Eigen::VectorXd msp_scores(const Eigen::MatrixXd& logits);

// -E(z); energies are negated at ingestion so higher stays more ID.
Eigen::VectorXd energy_scores(const Eigen::MatrixXd& logits, double tau);

struct OdinConfig {
  double temperature = 1000.0;
  double epsilon = 0.0014;
};

// Two-pass detector: perturb the input along the sign of the input gradient
// of the temperature-scaled log max-softmax, then rescore.
double odin_score(const MoeModel& model, const Eigen::VectorXd& input, const OdinConfig& cfg);
Eigen::VectorXd odin_scores(const MoeModel& model, const Eigen::MatrixXd& inputs,
                            const OdinConfig& cfg);

// P(random ID score > random OOD score), ties counted 1/2 (rank-based).
double auroc(const ScoreSet& scores);

// Threshold = largest score accepting at least tpr_target of the ID side
// (">= theta" counts as ID); returns the OOD fraction >= threshold.
double fpr_at_tpr(const ScoreSet& scores, double tpr_target = 0.95);

// Head/medium/tail split: classes ranked by descending training count,
// boundaries at C/3 and 2C/3 (integer division); ties keep index order.
enum class ClassGroup { kHead, kMedium, kTail };
std::vector<ClassGroup> class_groups(const ClassProfile& profile);

GroupAccuracy group_accuracy(const std::vector<int>& predictions,
                             const std::vector<int>& labels, const ClassProfile& profile);

// Plain-text score files, one decimal score per line.
Eigen::VectorXd read_score_file(const std::string& path);
void write_score_file(const std::string& path, const Eigen::VectorXd& scores);

}  // namespace ricasso

#endif  // RICASSO_OOD_HPP_
