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

#ifndef RICASSO_TRAIN_HPP_
#define RICASSO_TRAIN_HPP_

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ricasso/data.hpp"
#include "ricasso/losses.hpp"
#include "ricasso/model.hpp"
#include "ricasso/ood.hpp"

namespace ricasso {

// Configuration problems carry the offending field path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error("config field '" + field + "': " + message),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Training aborted on a non-finite loss.
class DivergenceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string type = "synthetic";  // synthetic | image-folder
  // synthetic
  int num_classes = 10;
  long long n_max = 500;
  double imbalance_ratio = 100.0;
  ImageShape shape{1, 4, 8};
  double mean_radius = 4.0;
  double noise_sigma = 1.0;
  int test_per_class = 100;
  // image-folder
  std::string root;
  std::string test_root;
};

struct OptimizerConfig {
  double momentum = 0.9;
  double base_lr = 0.1;
  int warmup_epochs = 5;
  double warmup_scale = 0.1;
  int epochs = 30;
  int batch_size = 64;
  std::string decay = "cosine";  // cosine | step | constant
};

struct MixingConfig {
  bool enabled = true;
  double alpha = 1.0;
};

struct EvalConfig {
  std::string val_ood = "midpoint";
  int val_ood_n = 500;
};

struct RunConfig {
  DatasetConfig dataset;
  ModelSpec model;  // input_dim/num_classes filled from the dataset
  double center_momentum = 0.1;
  LossConfig loss;
  MixingConfig mixing;
  OptimizerConfig optimizer;
  EvalConfig eval;
  std::uint64_t seed = 1;
  std::string out_dir = "runs";
  std::string run_name;

  void validate() const;
};

// Parses a JSON config; unknown fields are rejected, missing required
// fields raise ConfigError with the field path.
RunConfig parse_run_config_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
// Fully-resolved snapshot (defaults applied); hashing input.
std::string run_config_to_json(const RunConfig& config);

// Warmup then decay: base_lr * warmup_scale for the first warmup_epochs,
// afterwards cosine to zero (or step / constant per config).
double lr_at(int epoch, const OptimizerConfig& opt);

struct StepStats {
  int step = 0;
  int epoch = 0;
  double nod = 0.0;
  double base_cls = 0.0;
  double cbcl = 0.0;
  double rcl = 0.0;
  double total = 0.0;
  double mean_factor = 1.0;
  double mean_energy = 0.0;
  double lr = 0.0;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double mean_total = 0.0;
  double val_acc = 0.0;
  double val_auroc = 0.0;
};

struct RunRecord {
  std::vector<StepStats> steps;
  std::vector<EpochStats> epochs;
  std::vector<double> lr_trace;
  std::string run_dir;
  std::string checkpoint_path;
  std::string config_json;
  std::string config_hash;
};

// SGD with classical momentum over the model parameters.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<ad::Var>& params, double momentum);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<ad::Var>* params_;
  std::vector<Eigen::MatrixXd> velocity_;
  double momentum_;
};

// Runs the full training loop and writes the run directory (config
// snapshot, manifest, per-step log, per-epoch summary, checkpoint).
RunRecord train(const RunConfig& config);

// Same pipeline, same batches, but the loss is the independent static
// logits-adjusted cross-entropy over the ID rows. Comparison baseline for
// the reduction-equivalence check.
RunRecord train_reference_static_la(const RunConfig& config);

struct AblationToggles {
  bool nod = true;
  bool rcl = true;
  bool aala = true;
  bool cbcl = true;
};

// The standard 8-row toggle grid.
std::vector<AblationToggles> default_ablation_grid();

struct AblationRow {
  AblationToggles toggles;
  double acc = 0.0;
  double auroc = 0.0;
  double fpr95 = 0.0;
  std::string run_dir;
};

std::vector<AblationRow> run_ablation_grid(const RunConfig& base,
                                           const std::vector<AblationToggles>& grid);

// Where OOD samples come from at evaluation time.
struct OodSource {
  std::string name;
  std::string kind;  // file | synthetic | folder
  std::string arg;   // path or generator name
  int n = 1000;      // synthetic sample count
};

OodSource parse_ood_source(const std::string& spec);

struct EvalResult {
  std::vector<OODReport> per_source;
  OODReport mean_row;  // unweighted mean over sources
  ScoreSet last_scores;
  std::vector<ScoreSet> all_scores;
  std::vector<int> predictions;
  std::vector<int> labels;
};

// Loads the checkpoint's config snapshot, rebuilds the ID test set, scores
// everything with the chosen detector and aggregates reports.
EvalResult evaluate(const Checkpoint& ckpt, const std::vector<OodSource>& sources,
                    ScoreKind detector);

}  // namespace ricasso

#endif  // RICASSO_TRAIN_HPP_
