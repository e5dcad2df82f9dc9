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

#ifndef RICASSO_MODEL_HPP_
#define RICASSO_MODEL_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "ricasso/autodiff.hpp"
#include "ricasso/data.hpp"

namespace ricasso {

// Class groups per expert. Local experts specialize in contiguous ranges of
// classes ordered by descending training count; the last expert is global
// and covers every class with an e^tau scaled prior.
struct ExpertAssignment {
  int num_experts = 0;  // K = num_local + 1
  std::vector<std::vector<int>> groups;
  double tau = 1.0;

  int global_index() const { return num_experts - 1; }
};

ExpertAssignment assign_experts(const ClassProfile& profile, int num_local, double tau = 1.0);

// Per-expert priors:
//   local expert k:  n_{k,j} = n_j if j in C_k else max_j(n_j)
//   global expert:   n_{K,j} = e^tau * n_j
// Returns a (K, C) matrix.
Eigen::MatrixXd expert_prior(const std::vector<double>& priors,
                             const ExpertAssignment& assignment);

struct ModelSpec {
  int input_dim = 0;
  int num_classes = 0;
  std::vector<int> trunk_hidden = {64, 64};
  int feature_dim = 32;
  int num_local_experts = 2;
  double tau = 1.0;
  int proj_dim = 128;
  int pred_hidden = 64;
};

// Running class means of feature vectors, blended with momentum. Used as
// the pulling anchors of the center loss.
struct ClassCenters {
  Eigen::MatrixXd centers;  // (C, d), zero-initialized
  std::vector<long long> counts_seen;
  double momentum = 0.1;

  static ClassCenters zeros(int num_classes, int feature_dim, double momentum = 0.1);
};

// For each class present in the batch: c <- (1-m) c + m * batch_mean(class).
void update_centers(ClassCenters& centers, const Eigen::MatrixXd& features,
                    const std::vector<int>& labels);

// Row layout of the concatenated forward batch.
struct BatchLayout {
  int n_id = 0;
  int n_anti = 0;
  int n_mixup = 0;
  int n_cutmix = 0;
  int id_offset() const { return 0; }
  int anti_offset() const { return n_id; }
  int mixup_offset() const { return n_id + n_anti; }
  int cutmix_offset() const { return n_id + n_anti + n_mixup; }
  int total() const { return n_id + n_anti + n_mixup + n_cutmix; }
};

// Everything a forward pass produces. Vars keep the graph alive so losses
// can backpropagate into the parameters (and the input, for ODIN).
struct ExpertEnsembleOutput {
  std::vector<ad::Var> features;  // per expert, (B, d)
  std::vector<ad::Var> logits;    // per expert, (B, C)
  ad::Var ensemble_logits;        // (B, C), arithmetic mean over experts
  // Heads over the mixed rows (empty Vars when the batch has none). The
  // prediction input is the detached projection, so consistency learning
  // trains the prediction head only.
  ad::Var proj_mixup, proj_cutmix;  // h_m, h_c
  ad::Var pred_mixup, pred_cutmix;  // u_m, u_c
  BatchLayout layout;
};

// Mixture-of-experts classifier: a shared MLP trunk with per-expert
// feature/classifier heads plus projection and prediction heads.
class MoeModel {
 public:
  MoeModel(const ModelSpec& spec, const ExpertAssignment& assignment, std::uint64_t seed);

  // Forward over a prepared input Var (rows = samples). The layout tells
  // the model which rows are mixed views.
  ExpertEnsembleOutput forward(const ad::Var& inputs, const BatchLayout& layout) const;

  // Value-only convenience forward for evaluation (no mixed rows).
  Eigen::MatrixXd ensemble_logits(const Eigen::MatrixXd& inputs) const;

  std::vector<ad::Var>& parameters() { return params_; }
  const std::vector<ad::Var>& parameters() const { return params_; }
  const ModelSpec& spec() const { return spec_; }
  const ExpertAssignment& assignment() const { return assignment_; }

  // Serialization of all parameter matrices, in declaration order.
  std::vector<Eigen::MatrixXd> state() const;
  void load_state(const std::vector<Eigen::MatrixXd>& state);

 private:
  struct Linear {
    ad::Var w;  // (in, out)
    ad::Var b;  // (1, out)
  };
  Linear make_linear(int in, int out, Rng& rng);
  static ad::Var apply(const Linear& l, const ad::Var& x);

  ModelSpec spec_;
  ExpertAssignment assignment_;
  std::vector<Linear> trunk_;
  std::vector<Linear> expert_feature_;  // one per expert
  std::vector<Linear> expert_cls_;      // one per expert
  Linear proj1_, proj2_;                // projection head (2 layers)
  Linear pred1_, pred2_;                // prediction head (2 layers)
  std::vector<ad::Var> params_;
};

// --- checkpoint archive -----------------------------------------------------

struct Checkpoint {
  ModelSpec spec;
  ExpertAssignment assignment;
  ClassProfile profile;
  ImageShape shape;
  std::vector<Eigen::MatrixXd> model_state;
  Eigen::MatrixXd centers;
  std::string config_json;  // snapshot of the run configuration
  std::string config_hash;
};

std::string config_hash_hex(const std::string& config_json);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Verifies the stored config hash against the stored snapshot; throws on
// mismatch or malformed archives.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ricasso

#endif  // RICASSO_MODEL_HPP_
