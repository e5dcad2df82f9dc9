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

#ifndef RICASSO_LOSSES_HPP_
#define RICASSO_LOSSES_HPP_

#include <Eigen/Core>
#include <string>
#include <vector>

#include "ricasso/autodiff.hpp"
#include "ricasso/data.hpp"
#include "ricasso/model.hpp"

namespace ricasso {

struct LossConfig {
  double tau_energy = 1.0;  // energy temperature; independent of the prior scale tau
  double gamma0 = 1.0;      // exponent on the pulling distance
  double gamma1 = 1.0;      // exponent on the pushing distance
  double eps0 = 0.0;
  double eps1 = 1e-6;
  double lambda0 = 0.5;  // boundary-center weight
  double lambda1 = 1.0;  // consistency weight
  bool nod_enabled = true;
  bool aala_enabled = true;
  bool cbcl_enabled = true;
  bool rcl_enabled = true;
  double prob_floor = 1e-8;  // clamp applied to probabilities before any log
  double w_out = 0.1;        // local-expert weight for out-of-group samples
  std::string energy_input = "logits";  // logits | feature
  bool dec_include_mixed = false;

  void validate() const;
};

// Per-step loss values plus the audit trail of the adjustment margins.
struct LossBreakdown {
  double nod = 0.0;       // classification loss over ID + anti + mixed
  double base_cls = 0.0;  // ID-only classification loss, used when NOD is off
  double cbcl = 0.0;
  double rcl = 0.0;
  double total = 0.0;
  bool nod_present = false;
  bool cbcl_present = false;
  bool rcl_present = false;

  double d_plus = 0.0;
  double d_minus = 0.0;
  double mean_factor = 1.0;  // global expert, over the classification rows
  double mean_energy = 0.0;
  Eigen::MatrixXd per_sample_margins;  // global expert margins (rows x classes)
  Eigen::VectorXd factors;             // global expert factors
  bool center_warning = false;  // a target class had an unseen (zero) center
  bool clamp_hit = false;       // the bounded-ratio exponent clamp engaged
};

// E(z) = -tau * log sum_c exp(z_c / tau), rowwise, max-subtracted.
ad::Var energy_score(const ad::Var& logits, double tau);
double energy_score(const Eigen::VectorXd& logits, double tau);

// factor_i = 1 + exp(E_i) / sum_n exp(E_n); in (1, 2], sums of (factor-1) = 1.
ad::Var aala_factor(const ad::Var& energies);
Eigen::VectorXd aala_factor(const Eigen::VectorXd& energies);

// T-hat_{i,j} = factor_i * log(prior_j) for one expert's prior row.
ad::Var recalibrated_margins(const Eigen::RowVectorXd& expert_prior_row,
                             const ad::Var& factors);

// softmax(v + margins) rowwise.
ad::Var adjusted_softmax(const ad::Var& logits, const ad::Var& margins);

// Logits-adjusted soft cross-entropy summed over experts, averaged over the
// batch. Each expert uses its own prior row; with AALA enabled the margins
// are rescaled per sample by factors computed from that expert's own
// energies. g_weights is (K, B).
ad::Var cls_loss(const std::vector<ad::Var>& expert_logits,
                 const std::vector<ad::Var>& expert_features,
                 const Eigen::MatrixXd& soft_targets, const Eigen::MatrixXd& expert_priors,
                 const Eigen::MatrixXd& g_weights, const LossConfig& config,
                 LossBreakdown* audit = nullptr);

// d_minus: mean over triples of |z_i - z_mix|^2 + |z_j - z_mix|^2.
ad::Var vbl_distance(const ad::Var& z_src_i, const ad::Var& z_src_j, const ad::Var& z_mix);

// omega = -sum_c (p_c + t_c) * log(max(p_c, floor)); (B,1).
ad::Var dual_entropy_weight(const ad::Var& probs, const Eigen::MatrixXd& targets,
                            double prob_floor);

// d_plus: 0.5 * mean_i omega_i * |z_i - c_{y_i}|^2. Centers are constants.
ad::Var dec_distance(const ad::Var& features, const ad::Var& probs,
                     const std::vector<int>& labels, const Eigen::MatrixXd& targets,
                     const ClassCenters& centers, const LossConfig& config,
                     LossBreakdown* audit = nullptr);

// Bounded push/pull ratio:
//   (e^{g0 d+} - e^{g1 d-} + eps0) / (e^{g0 d+} + e^{g1 d-} + eps1)
// evaluated shift-stably; exponents clamped at 80 (audit flag records it).
ad::Var cbcl_loss(const ad::Var& d_plus, const ad::Var& d_minus, const LossConfig& config,
                  LossBreakdown* audit = nullptr);
double cbcl_loss(double d_plus, double d_minus, const LossConfig& config);

// Negative cosine consistency with stop-gradient targets:
//   mean_i [ -cos(u_m, h_c) - cos(u_c, h_m) ]
// h_m and h_c are detached inside regardless of the caller's graph.
ad::Var rcl_loss(const ad::Var& h_m, const ad::Var& h_c, const ad::Var& u_m,
                 const ad::Var& u_c);

// Surrogate re-weighting: 1 for the global expert and in-group samples,
// w_out otherwise. Primary label of a mixed row is the heavier source.
Eigen::MatrixXd g_weights_for(const std::vector<int>& primary_labels,
                              const ExpertAssignment& assignment, double w_out);

// Targets and primary labels for the concatenated batch rows.
Eigen::MatrixXd batch_soft_targets(const TrainBatch& batch);
std::vector<int> batch_primary_labels(const TrainBatch& batch);

struct TotalLossInputs {
  const TrainBatch* batch = nullptr;
  const ExpertEnsembleOutput* outputs = nullptr;
  const ClassCenters* centers = nullptr;
  const Eigen::MatrixXd* expert_priors = nullptr;   // (K, C)
  const std::vector<double>* base_priors = nullptr;  // length C
  const ExpertAssignment* assignment = nullptr;
};

// total = cls(+NOD) + lambda0 * cbcl + lambda1 * rcl, with disabled
// components contributing exactly zero and flagged absent.
ad::Var total_loss(const TotalLossInputs& in, const LossConfig& config,
                   LossBreakdown* breakdown);

// Independent static logits-adjustment reference: per expert, cross-entropy
// of softmax(v + log prior) with the same g weighting, no per-sample
// recalibration. Kept separate from cls_loss as a comparison baseline.
ad::Var reference_static_la_loss(const std::vector<ad::Var>& expert_logits,
                                 const Eigen::MatrixXd& soft_targets,
                                 const Eigen::MatrixXd& expert_priors,
                                 const Eigen::MatrixXd& g_weights);

}  // namespace ricasso

#endif  // RICASSO_LOSSES_HPP_
