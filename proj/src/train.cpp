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

#include "ricasso/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace ricasso {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& scope,
                    std::initializer_list<const char*> known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool found = false;
    for (const char* k : known) {
      if (it.key() == k) { found = true; break; }
    }
    if (!found) throw ConfigError(scope + "." + it.key(), "unknown field");
  }
}

template <typename T>
T require(const json& j, const std::string& scope, const char* key) {
  if (!j.contains(key)) throw ConfigError(scope + "." + key, "missing required field");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(scope + "." + key, "wrong type");
  }
}

template <typename T>
T optional_field(const json& j, const std::string& scope, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(scope + "." + key, "wrong type");
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  if (optimizer.epochs < 1) throw ConfigError("optimizer.epochs", "must be >= 1");
  if (optimizer.batch_size < 2) throw ConfigError("optimizer.batch_size", "must be >= 2");
  if (optimizer.warmup_epochs < 0) throw ConfigError("optimizer.warmup_epochs", "must be >= 0");
  if (optimizer.decay != "cosine" && optimizer.decay != "step" &&
      optimizer.decay != "constant") {
    throw ConfigError("optimizer.decay", "must be cosine|step|constant");
  }
  if (dataset.type != "synthetic" && dataset.type != "image-folder") {
    throw ConfigError("dataset.type", "must be synthetic|image-folder");
  }
  if (dataset.type == "synthetic") {
    if (dataset.num_classes < 2) throw ConfigError("dataset.num_classes", "must be >= 2");
    if (dataset.n_max < 1) throw ConfigError("dataset.n_max", "must be >= 1");
    if (dataset.imbalance_ratio < 1.0) {
      throw ConfigError("dataset.imbalance_ratio", "must be >= 1");
    }
  } else if (dataset.root.empty()) {
    throw ConfigError("dataset.root", "missing required field");
  }
  if (!mixing.enabled && (loss.cbcl_enabled || loss.rcl_enabled)) {
    throw ConfigError("mixing.enabled", "CBCL and RCL need mixed samples; disable them too");
  }
  try {
    loss.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("loss", e.what());
  }
}

RunConfig parse_run_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  reject_unknown(j, "<root>",
                 {"dataset", "model", "loss", "mixing", "optimizer", "eval", "seed",
                  "out_dir", "run_name", "center_momentum"});
  RunConfig c;
  c.seed = require<std::uint64_t>(j, "<root>", "seed");
  c.out_dir = optional_field<std::string>(j, "<root>", "out_dir", c.out_dir);
  c.run_name = optional_field<std::string>(j, "<root>", "run_name", c.run_name);
  c.center_momentum = optional_field<double>(j, "<root>", "center_momentum", c.center_momentum);

  const json& d = j.contains("dataset") ? j.at("dataset") : json::object();
  if (!j.contains("dataset")) throw ConfigError("dataset", "missing required field");
  reject_unknown(d, "dataset",
                 {"type", "num_classes", "n_max", "imbalance_ratio", "channels", "height",
                  "width", "mean_radius", "noise_sigma", "test_per_class", "root",
                  "test_root"});
  c.dataset.type = require<std::string>(d, "dataset", "type");
  c.dataset.num_classes = optional_field<int>(d, "dataset", "num_classes", c.dataset.num_classes);
  c.dataset.n_max = optional_field<long long>(d, "dataset", "n_max", c.dataset.n_max);
  c.dataset.imbalance_ratio =
      optional_field<double>(d, "dataset", "imbalance_ratio", c.dataset.imbalance_ratio);
  c.dataset.shape.channels = optional_field<int>(d, "dataset", "channels", c.dataset.shape.channels);
  c.dataset.shape.height = optional_field<int>(d, "dataset", "height", c.dataset.shape.height);
  c.dataset.shape.width = optional_field<int>(d, "dataset", "width", c.dataset.shape.width);
  c.dataset.mean_radius = optional_field<double>(d, "dataset", "mean_radius", c.dataset.mean_radius);
  c.dataset.noise_sigma = optional_field<double>(d, "dataset", "noise_sigma", c.dataset.noise_sigma);
  c.dataset.test_per_class =
      optional_field<int>(d, "dataset", "test_per_class", c.dataset.test_per_class);
  c.dataset.root = optional_field<std::string>(d, "dataset", "root", c.dataset.root);
  c.dataset.test_root = optional_field<std::string>(d, "dataset", "test_root", c.dataset.test_root);

  const json& m = j.contains("model") ? j.at("model") : json::object();
  reject_unknown(m, "model",
                 {"trunk_hidden", "feature_dim", "num_local_experts", "tau", "proj_dim",
                  "pred_hidden"});
  c.model.trunk_hidden =
      optional_field<std::vector<int>>(m, "model", "trunk_hidden", c.model.trunk_hidden);
  c.model.feature_dim = optional_field<int>(m, "model", "feature_dim", c.model.feature_dim);
  c.model.num_local_experts =
      optional_field<int>(m, "model", "num_local_experts", c.model.num_local_experts);
  c.model.tau = optional_field<double>(m, "model", "tau", c.model.tau);
  c.model.proj_dim = optional_field<int>(m, "model", "proj_dim", c.model.proj_dim);
  c.model.pred_hidden = optional_field<int>(m, "model", "pred_hidden", c.model.pred_hidden);

  const json& l = j.contains("loss") ? j.at("loss") : json::object();
  reject_unknown(l, "loss",
                 {"tau_energy", "gamma0", "gamma1", "eps0", "eps1", "lambda0", "lambda1",
                  "nod", "aala", "cbcl", "rcl", "prob_floor", "w_out", "energy_input",
                  "dec_include_mixed"});
  c.loss.tau_energy = optional_field<double>(l, "loss", "tau_energy", c.loss.tau_energy);
  c.loss.gamma0 = optional_field<double>(l, "loss", "gamma0", c.loss.gamma0);
  c.loss.gamma1 = optional_field<double>(l, "loss", "gamma1", c.loss.gamma1);
  c.loss.eps0 = optional_field<double>(l, "loss", "eps0", c.loss.eps0);
  c.loss.eps1 = optional_field<double>(l, "loss", "eps1", c.loss.eps1);
  c.loss.lambda0 = optional_field<double>(l, "loss", "lambda0", c.loss.lambda0);
  c.loss.lambda1 = optional_field<double>(l, "loss", "lambda1", c.loss.lambda1);
  c.loss.nod_enabled = optional_field<bool>(l, "loss", "nod", c.loss.nod_enabled);
  c.loss.aala_enabled = optional_field<bool>(l, "loss", "aala", c.loss.aala_enabled);
  c.loss.cbcl_enabled = optional_field<bool>(l, "loss", "cbcl", c.loss.cbcl_enabled);
  c.loss.rcl_enabled = optional_field<bool>(l, "loss", "rcl", c.loss.rcl_enabled);
  c.loss.prob_floor = optional_field<double>(l, "loss", "prob_floor", c.loss.prob_floor);
  c.loss.w_out = optional_field<double>(l, "loss", "w_out", c.loss.w_out);
  c.loss.energy_input =
      optional_field<std::string>(l, "loss", "energy_input", c.loss.energy_input);
  c.loss.dec_include_mixed =
      optional_field<bool>(l, "loss", "dec_include_mixed", c.loss.dec_include_mixed);

  const json& x = j.contains("mixing") ? j.at("mixing") : json::object();
  reject_unknown(x, "mixing", {"enabled", "alpha"});
  c.mixing.enabled = optional_field<bool>(x, "mixing", "enabled", c.mixing.enabled);
  c.mixing.alpha = optional_field<double>(x, "mixing", "alpha", c.mixing.alpha);

  const json& o = j.contains("optimizer") ? j.at("optimizer") : json::object();
  if (!j.contains("optimizer")) throw ConfigError("optimizer", "missing required field");
  reject_unknown(o, "optimizer",
                 {"momentum", "base_lr", "warmup_epochs", "warmup_scale", "epochs",
                  "batch_size", "decay"});
  c.optimizer.epochs = require<int>(o, "optimizer", "epochs");
  c.optimizer.batch_size = require<int>(o, "optimizer", "batch_size");
  c.optimizer.momentum = optional_field<double>(o, "optimizer", "momentum", c.optimizer.momentum);
  c.optimizer.base_lr = optional_field<double>(o, "optimizer", "base_lr", c.optimizer.base_lr);
  c.optimizer.warmup_epochs =
      optional_field<int>(o, "optimizer", "warmup_epochs", c.optimizer.warmup_epochs);
  c.optimizer.warmup_scale =
      optional_field<double>(o, "optimizer", "warmup_scale", c.optimizer.warmup_scale);
  c.optimizer.decay = optional_field<std::string>(o, "optimizer", "decay", c.optimizer.decay);

  const json& e = j.contains("eval") ? j.at("eval") : json::object();
  reject_unknown(e, "eval", {"val_ood", "val_ood_n"});
  c.eval.val_ood = optional_field<std::string>(e, "eval", "val_ood", c.eval.val_ood);
  c.eval.val_ood_n = optional_field<int>(e, "eval", "val_ood_n", c.eval.val_ood_n);

  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config_json(text);
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["run_name"] = c.run_name;
  j["center_momentum"] = c.center_momentum;
  j["dataset"] = {{"type", c.dataset.type},
                  {"num_classes", c.dataset.num_classes},
                  {"n_max", c.dataset.n_max},
                  {"imbalance_ratio", c.dataset.imbalance_ratio},
                  {"channels", c.dataset.shape.channels},
                  {"height", c.dataset.shape.height},
                  {"width", c.dataset.shape.width},
                  {"mean_radius", c.dataset.mean_radius},
                  {"noise_sigma", c.dataset.noise_sigma},
                  {"test_per_class", c.dataset.test_per_class},
                  {"root", c.dataset.root},
                  {"test_root", c.dataset.test_root}};
  j["model"] = {{"trunk_hidden", c.model.trunk_hidden},
                {"feature_dim", c.model.feature_dim},
                {"num_local_experts", c.model.num_local_experts},
                {"tau", c.model.tau},
                {"proj_dim", c.model.proj_dim},
                {"pred_hidden", c.model.pred_hidden}};
  j["loss"] = {{"tau_energy", c.loss.tau_energy},
               {"gamma0", c.loss.gamma0},
               {"gamma1", c.loss.gamma1},
               {"eps0", c.loss.eps0},
               {"eps1", c.loss.eps1},
               {"lambda0", c.loss.lambda0},
               {"lambda1", c.loss.lambda1},
               {"nod", c.loss.nod_enabled},
               {"aala", c.loss.aala_enabled},
               {"cbcl", c.loss.cbcl_enabled},
               {"rcl", c.loss.rcl_enabled},
               {"prob_floor", c.loss.prob_floor},
               {"w_out", c.loss.w_out},
               {"energy_input", c.loss.energy_input},
               {"dec_include_mixed", c.loss.dec_include_mixed}};
  j["mixing"] = {{"enabled", c.mixing.enabled}, {"alpha", c.mixing.alpha}};
  j["optimizer"] = {{"momentum", c.optimizer.momentum},
                    {"base_lr", c.optimizer.base_lr},
                    {"warmup_epochs", c.optimizer.warmup_epochs},
                    {"warmup_scale", c.optimizer.warmup_scale},
                    {"epochs", c.optimizer.epochs},
                    {"batch_size", c.optimizer.batch_size},
                    {"decay", c.optimizer.decay}};
  j["eval"] = {{"val_ood", c.eval.val_ood}, {"val_ood_n", c.eval.val_ood_n}};
  return j.dump(2);
}

double lr_at(int epoch, const OptimizerConfig& opt) {
  if (epoch < 0 || epoch >= opt.epochs) throw std::invalid_argument("lr_at: epoch out of range");
  if (epoch < opt.warmup_epochs) return opt.base_lr * opt.warmup_scale;
  if (opt.decay == "constant") return opt.base_lr;
  const int post = opt.epochs - opt.warmup_epochs;
  if (post <= 1) return opt.base_lr;
  const double progress =
      static_cast<double>(epoch - opt.warmup_epochs) / static_cast<double>(post);
  if (opt.decay == "step") {
    if (progress >= 0.75) return opt.base_lr * 0.01;
    if (progress >= 0.5) return opt.base_lr * 0.1;
    return opt.base_lr;
  }
  return opt.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

SgdMomentum::SgdMomentum(std::vector<ad::Var>& params, double momentum)
    : params_(&params), momentum_(momentum) {
  for (const auto& p : params) {
    velocity_.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
  }
}

void SgdMomentum::step(double lr) {
  for (size_t i = 0; i < params_->size(); ++i) {
    ad::Var& p = (*params_)[i];
    if (p.grad().size() == 0) continue;
    velocity_[i] = momentum_ * velocity_[i] + p.grad();
    p.mutable_value() -= lr * velocity_[i];
  }
}

void SgdMomentum::zero_grad() {
  for (auto& p : *params_) p.zero_grad();
}

namespace {

struct LoadedData {
  Dataset train;
  Dataset test;
  SyntheticSpec synth;  // valid when type == synthetic
  bool synthetic = false;
};

LoadedData load_data(const RunConfig& config) {
  LoadedData d;
  if (config.dataset.type == "synthetic") {
    d.synthetic = true;
    d.synth.num_classes = config.dataset.num_classes;
    d.synth.shape = config.dataset.shape;
    d.synth.mean_radius = config.dataset.mean_radius;
    d.synth.noise_sigma = config.dataset.noise_sigma;
    d.synth.seed = config.seed;
    ClassProfile profile = make_longtail_profile(
        config.dataset.num_classes, config.dataset.n_max, config.dataset.imbalance_ratio);
    d.train = make_synthetic_dataset(d.synth, profile, config.seed);
    d.test = make_synthetic_testset(d.synth, config.dataset.test_per_class, config.seed);
  } else {
    d.train = load_image_folder(config.dataset.root);
    d.test = config.dataset.test_root.empty() ? d.train
                                              : load_image_folder(config.dataset.test_root);
  }
  return d;
}

Eigen::MatrixXd mixed_inputs_matrix(const std::vector<MixedSample>& mixed, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(mixed.size()), cols);
  for (size_t i = 0; i < mixed.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = mixed[i].input.transpose();
  }
  return m;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& logits) {
  std::vector<int> out(static_cast<size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best;
    logits.row(i).maxCoeff(&best);
    out[static_cast<size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

namespace {
RunRecord run_training_loop(const RunConfig& config, bool reference_loss);
}  // namespace

RunRecord train(const RunConfig& config) { return run_training_loop(config, false); }

RunRecord train_reference_static_la(const RunConfig& config) {
  return run_training_loop(config, true);
}

namespace {

RunRecord run_training_loop(const RunConfig& config, bool reference_loss) {
  config.validate();
  const std::string config_json = run_config_to_json(config);
  const std::string hash = config_hash_hex(config_json);

  LoadedData data = load_data(config);
  const ClassProfile& profile = data.train.profile;
  const int num_classes = profile.num_classes;
  const int input_dim = static_cast<int>(data.train.inputs.cols());

  ModelSpec spec = config.model;
  spec.input_dim = input_dim;
  spec.num_classes = num_classes;
  ExpertAssignment assignment =
      assign_experts(profile, spec.num_local_experts, spec.tau);
  Eigen::MatrixXd priors_k = expert_prior(profile.priors, assignment);

  MoeModel model(spec, assignment, config.seed);
  ClassCenters centers =
      ClassCenters::zeros(num_classes, spec.feature_dim, config.center_momentum);
  SgdMomentum opt(model.parameters(), config.optimizer.momentum);

  const int n_train = static_cast<int>(data.train.size());
  const int batch = std::min(config.optimizer.batch_size, n_train);
  const int steps_per_epoch = std::max(1, n_train / batch);

  ShuffledStream id_stream(n_train, mix_seed(config.seed, 0x696473));
  AntiLongtailSampler anti_sampler(data.train.labels, profile, mix_seed(config.seed, 0x616e7469));

  // Run directory layout.
  const std::string run_name =
      config.run_name.empty() ? ("run-" + std::to_string(config.seed) + "-" + hash.substr(0, 8))
                              : config.run_name;
  fs::path run_dir = fs::path(config.out_dir) / run_name;
  fs::create_directories(run_dir);
  {
    std::ofstream cfg(run_dir / "config.json");
    cfg << config_json;
    std::ofstream man(run_dir / "manifest.json");
    man << profile_manifest_json(profile, config.seed);
  }
  std::ofstream step_log(run_dir / "train_log.csv");
  step_log << "step,epoch,nod,base_cls,cbcl,rcl,total,mean_factor,mean_energy,lr\n";
  std::ofstream epoch_log(run_dir / "epochs.csv");
  epoch_log << "epoch,lr,mean_total,val_acc,val_auroc\n";

  // Validation OOD pool for the per-epoch AUROC trace.
  Eigen::MatrixXd val_ood;
  if (data.synthetic) {
    val_ood = make_synthetic_ood(data.synth, config.eval.val_ood, config.eval.val_ood_n,
                                 mix_seed(config.seed, 0x76616c));
  }

  RunRecord record;
  record.run_dir = run_dir.string();
  record.config_json = config_json;
  record.config_hash = hash;

  int global_step = 0;
  for (int epoch = 0; epoch < config.optimizer.epochs; ++epoch) {
    const double lr = lr_at(epoch, config.optimizer);
    record.lr_trace.push_back(lr);
    double total_accum = 0.0;

    for (int s = 0; s < steps_per_epoch; ++s) {
      // Assemble the paired batches.
      Eigen::MatrixXd id_inputs(batch, input_dim);
      std::vector<int> id_labels(batch);
      for (int i = 0; i < batch; ++i) {
        const int idx = id_stream.next();
        id_inputs.row(i) = data.train.inputs.row(idx);
        id_labels[static_cast<size_t>(i)] = data.train.labels[static_cast<size_t>(idx)];
      }

      TrainBatch tb;
      BatchLayout layout;
      layout.n_id = batch;
      if (config.mixing.enabled) {
        Eigen::MatrixXd anti_inputs(batch, input_dim);
        std::vector<int> anti_labels(batch);
        for (int i = 0; i < batch; ++i) {
          const int idx = anti_sampler.next();
          anti_inputs.row(i) = data.train.inputs.row(idx);
          anti_labels[static_cast<size_t>(i)] = data.train.labels[static_cast<size_t>(idx)];
        }
        tb = build_training_batch(id_inputs, id_labels, anti_inputs, anti_labels,
                                  data.train.shape, num_classes, config.mixing.alpha,
                                  mix_seed(config.seed, 0x10000 + global_step));
        layout.n_anti = batch;
        layout.n_mixup = static_cast<int>(tb.mixed_mixup.size());
        layout.n_cutmix = static_cast<int>(tb.mixed_cutmix.size());
      } else {
        tb.id_inputs = id_inputs;
        tb.id_labels = id_labels;
        tb.anti_inputs.resize(0, input_dim);
        tb.num_classes = num_classes;
        tb.shape = data.train.shape;
      }

      std::vector<Eigen::MatrixXd> blocks = {tb.id_inputs};
      if (layout.n_anti > 0) blocks.push_back(tb.anti_inputs);
      if (layout.n_mixup > 0) blocks.push_back(mixed_inputs_matrix(tb.mixed_mixup, input_dim));
      if (layout.n_cutmix > 0) blocks.push_back(mixed_inputs_matrix(tb.mixed_cutmix, input_dim));
      Eigen::MatrixXd all_inputs(layout.total(), input_dim);
      Eigen::Index r = 0;
      for (const auto& b : blocks) {
        all_inputs.middleRows(r, b.rows()) = b;
        r += b.rows();
      }

      ExpertEnsembleOutput out = model.forward(ad::Var::constant(all_inputs), layout);
      if (!out.ensemble_logits.value().allFinite() ||
          (out.proj_mixup.valid() && !out.proj_mixup.value().allFinite())) {
        throw DivergenceError("training diverged at step " + std::to_string(global_step) +
                              " (non-finite activations)");
      }

      LossBreakdown bd;
      ad::Var loss;
      if (reference_loss) {
        // Independent static logits-adjustment baseline over the ID rows.
        std::vector<ad::Var> id_logits;
        for (const auto& v : out.logits) {
          id_logits.push_back(ad::slice_rows(v, layout.id_offset(), layout.n_id));
        }
        Eigen::MatrixXd id_targets = Eigen::MatrixXd::Zero(layout.n_id, num_classes);
        for (int i = 0; i < layout.n_id; ++i) {
          id_targets(i, tb.id_labels[static_cast<size_t>(i)]) = 1.0;
        }
        const Eigen::MatrixXd g =
            g_weights_for(tb.id_labels, assignment, config.loss.w_out);
        loss = reference_static_la_loss(id_logits, id_targets, priors_k, g);
        bd.base_cls = loss.scalar();
        bd.total = bd.base_cls;
      } else {
        TotalLossInputs in;
        in.batch = &tb;
        in.outputs = &out;
        in.centers = &centers;
        in.expert_priors = &priors_k;
        in.base_priors = &profile.priors;
        in.assignment = &assignment;
        loss = total_loss(in, config.loss, &bd);
      }
      if (!std::isfinite(bd.total)) {
        throw DivergenceError("training diverged at step " + std::to_string(global_step) +
                              " (non-finite loss)");
      }

      opt.zero_grad();
      ad::backward(loss);
      opt.step(lr);

      // Centers follow the one-hot rows of the global expert's features.
      const int gk = assignment.global_index();
      const Eigen::MatrixXd& feat = out.features[static_cast<size_t>(gk)].value();
      std::vector<int> center_labels = tb.id_labels;
      center_labels.insert(center_labels.end(), tb.anti_labels.begin(), tb.anti_labels.end());
      update_centers(centers, feat.topRows(layout.n_id + layout.n_anti), center_labels);

      StepStats st;
      st.step = global_step;
      st.epoch = epoch;
      st.nod = bd.nod;
      st.base_cls = bd.base_cls;
      st.cbcl = bd.cbcl;
      st.rcl = bd.rcl;
      st.total = bd.total;
      st.mean_factor = bd.mean_factor;
      st.mean_energy = bd.mean_energy;
      st.lr = lr;
      record.steps.push_back(st);
      step_log << st.step << ',' << st.epoch << ',' << format_double(st.nod) << ','
               << format_double(st.base_cls) << ',' << format_double(st.cbcl) << ','
               << format_double(st.rcl) << ',' << format_double(st.total) << ','
               << format_double(st.mean_factor) << ',' << format_double(st.mean_energy) << ','
               << format_double(lr) << '\n';

      total_accum += bd.total;
      ++global_step;
    }

    EpochStats es;
    es.epoch = epoch;
    es.lr = lr;
    es.mean_total = total_accum / steps_per_epoch;
    {
      const Eigen::MatrixXd test_logits = model.ensemble_logits(data.test.inputs);
      const std::vector<int> preds = argmax_rows(test_logits);
      int correct = 0;
      for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == data.test.labels[i]) ++correct;
      }
      es.val_acc = static_cast<double>(correct) / static_cast<double>(preds.size());
      if (val_ood.rows() > 0) {
        ScoreSet ss;
        ss.kind = ScoreKind::kEnergy;
        ss.id_scores = energy_scores(test_logits, config.loss.tau_energy);
        ss.ood_scores =
            energy_scores(model.ensemble_logits(val_ood), config.loss.tau_energy);
        es.val_auroc = auroc(ss);
      }
    }
    record.epochs.push_back(es);
    epoch_log << es.epoch << ',' << format_double(es.lr) << ','
              << format_double(es.mean_total) << ',' << format_double(es.val_acc) << ','
              << format_double(es.val_auroc) << '\n';
  }

  // Final checkpoint.
  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.assignment = assignment;
  ckpt.profile = profile;
  ckpt.shape = data.train.shape;
  ckpt.model_state = model.state();
  ckpt.centers = centers.centers;
  ckpt.config_json = config_json;
  ckpt.config_hash = hash;
  const fs::path ckpt_path = run_dir / "checkpoint.json";
  save_checkpoint(ckpt, ckpt_path.string());
  record.checkpoint_path = ckpt_path.string();
  return record;
}

}  // namespace

std::vector<AblationToggles> default_ablation_grid() {
  // NOD, RCL, AALA, CBCL
  return {
      {false, false, false, false},
      {false, false, true, false},
      {false, false, false, true},
      {false, false, true, true},
      {true, true, false, false},
      {true, true, false, true},
      {true, true, true, false},
      {true, true, true, true},
  };
}

std::vector<AblationRow> run_ablation_grid(const RunConfig& base,
                                           const std::vector<AblationToggles>& grid) {
  std::vector<AblationRow> rows;
  int i = 0;
  for (const AblationToggles& t : grid) {
    RunConfig c = base;
    c.loss.nod_enabled = t.nod;
    c.loss.rcl_enabled = t.rcl;
    c.loss.aala_enabled = t.aala;
    c.loss.cbcl_enabled = t.cbcl;
    c.run_name = (base.run_name.empty() ? "ablation" : base.run_name) + "-row" +
                 std::to_string(i);
    RunRecord rec = train(c);

    Checkpoint ckpt = load_checkpoint(rec.checkpoint_path);
    OodSource source;
    source.name = c.eval.val_ood;
    source.kind = "synthetic";
    source.arg = c.eval.val_ood;
    source.n = c.eval.val_ood_n;
    EvalResult ev = evaluate(ckpt, {source}, ScoreKind::kEnergy);

    AblationRow row;
    row.toggles = t;
    row.acc = ev.mean_row.acc;
    row.auroc = ev.mean_row.auroc;
    row.fpr95 = ev.mean_row.fpr95;
    row.run_dir = rec.run_dir;
    rows.push_back(row);
    ++i;
  }
  return rows;
}

OodSource parse_ood_source(const std::string& spec) {
  OodSource s;
  std::string rest = spec;
  const auto eq = rest.find('=');
  if (eq != std::string::npos) {
    s.name = rest.substr(0, eq);
    rest = rest.substr(eq + 1);
  }
  const auto colon = rest.find(':');
  if (colon == std::string::npos) {
    // Bare path: treat as a score file.
    s.kind = "file";
    s.arg = rest;
  } else {
    s.kind = rest.substr(0, colon);
    s.arg = rest.substr(colon + 1);
  }
  if (s.kind != "file" && s.kind != "synthetic" && s.kind != "folder") {
    throw std::invalid_argument("ood source '" + spec + "': kind must be file|synthetic|folder");
  }
  if (s.name.empty()) s.name = s.kind == "synthetic" ? s.arg : fs::path(s.arg).stem().string();
  return s;
}

EvalResult evaluate(const Checkpoint& ckpt, const std::vector<OodSource>& sources,
                    ScoreKind detector) {
  if (sources.empty()) throw std::invalid_argument("evaluate: need at least one OOD source");
  RunConfig config = parse_run_config_json(ckpt.config_json);
  LoadedData data = load_data(config);

  MoeModel model(ckpt.spec, ckpt.assignment, config.seed);
  model.load_state(ckpt.model_state);

  const Eigen::MatrixXd test_logits = model.ensemble_logits(data.test.inputs);

  auto score_inputs = [&](const Eigen::MatrixXd& inputs) -> Eigen::VectorXd {
    switch (detector) {
      case ScoreKind::kMsp:
        return msp_scores(model.ensemble_logits(inputs));
      case ScoreKind::kEnergy:
        return energy_scores(model.ensemble_logits(inputs), config.loss.tau_energy);
      case ScoreKind::kOdin:
        return odin_scores(model, inputs, OdinConfig{});
    }
    throw std::logic_error("unreachable");
  };

  EvalResult result;
  result.predictions = argmax_rows(test_logits);
  result.labels = data.test.labels;
  int correct = 0;
  for (size_t i = 0; i < result.predictions.size(); ++i) {
    if (result.predictions[i] == result.labels[i]) ++correct;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(result.labels.size());
  const GroupAccuracy gacc = group_accuracy(result.predictions, result.labels, ckpt.profile);

  const Eigen::VectorXd id_scores = score_inputs(data.test.inputs);

  for (const OodSource& src : sources) {
    ScoreSet ss;
    ss.kind = detector;
    ss.id_scores = id_scores;
    if (src.kind == "file") {
      ss.ood_scores = read_score_file(src.arg);
    } else if (src.kind == "synthetic") {
      if (!data.synthetic) {
        throw std::invalid_argument("synthetic OOD source requires a synthetic ID dataset");
      }
      ss.ood_scores = score_inputs(
          make_synthetic_ood(data.synth, src.arg, src.n, mix_seed(config.seed, 0x65766f)));
    } else {  // folder
      Dataset ood = load_image_folder(src.arg);
      ss.ood_scores = score_inputs(ood.inputs);
    }

    OODReport rep;
    rep.dataset = src.name;
    rep.kind = detector;
    rep.auroc = auroc(ss);
    rep.fpr95 = fpr_at_tpr(ss);
    rep.acc = acc;
    rep.group_acc = gacc;
    rep.id_count = ss.id_scores.size();
    rep.ood_count = ss.ood_scores.size();
    rep.config_hash = ckpt.config_hash;
    result.per_source.push_back(rep);
    result.all_scores.push_back(ss);
    result.last_scores = std::move(ss);
  }

  OODReport mean;
  mean.dataset = "mean";
  mean.kind = detector;
  mean.acc = acc;
  mean.group_acc = gacc;
  mean.config_hash = ckpt.config_hash;
  for (const auto& r : result.per_source) {
    mean.auroc += r.auroc;
    mean.fpr95 += r.fpr95;
    mean.id_count = r.id_count;
    mean.ood_count += r.ood_count;
  }
  mean.auroc /= static_cast<double>(result.per_source.size());
  mean.fpr95 /= static_cast<double>(result.per_source.size());
  result.mean_row = mean;
  return result;
}

}  // namespace ricasso
