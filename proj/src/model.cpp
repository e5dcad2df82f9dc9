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

#include "ricasso/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace ricasso {

using nlohmann::json;

ExpertAssignment assign_experts(const ClassProfile& profile, int num_local, double tau) {
  const int c = profile.num_classes;
  if (num_local < 1) throw std::invalid_argument("assign_experts: num_local >= 1");
  if (num_local > c) throw std::invalid_argument("assign_experts: num_local > num_classes");

  // Classes ordered by descending count; stable so equal counts keep index order.
  std::vector<int> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&profile](int a, int b) {
    return profile.counts[a] > profile.counts[b];
  });

  ExpertAssignment a;
  a.num_experts = num_local + 1;
  a.tau = tau;
  const int base = c / num_local;
  const int rem = c % num_local;
  int pos = 0;
  for (int k = 0; k < num_local; ++k) {
    const int len = base + (k < rem ? 1 : 0);
    std::vector<int> group(order.begin() + pos, order.begin() + pos + len);
    std::sort(group.begin(), group.end());
    a.groups.push_back(std::move(group));
    pos += len;
  }
  std::vector<int> all(c);
  std::iota(all.begin(), all.end(), 0);
  a.groups.push_back(std::move(all));
  return a;
}

Eigen::MatrixXd expert_prior(const std::vector<double>& priors,
                             const ExpertAssignment& assignment) {
  const int c = static_cast<int>(priors.size());
  const int k_total = assignment.num_experts;
  const double max_prior = *std::max_element(priors.begin(), priors.end());
  Eigen::MatrixXd out(k_total, c);
  for (int k = 0; k < k_total; ++k) {
    if (k == assignment.global_index()) {
      for (int j = 0; j < c; ++j) out(k, j) = std::exp(assignment.tau) * priors[j];
      continue;
    }
    std::vector<char> in_group(c, 0);
    for (int j : assignment.groups[k]) in_group[j] = 1;
    for (int j = 0; j < c; ++j) out(k, j) = in_group[j] ? priors[j] : max_prior;
  }
  return out;
}

ClassCenters ClassCenters::zeros(int num_classes, int feature_dim, double momentum) {
  ClassCenters c;
  c.centers = Eigen::MatrixXd::Zero(num_classes, feature_dim);
  c.counts_seen.assign(num_classes, 0);
  c.momentum = momentum;
  return c;
}

void update_centers(ClassCenters& centers, const Eigen::MatrixXd& features,
                    const std::vector<int>& labels) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("update_centers: feature/label length mismatch");
  }
  if (!features.allFinite()) {
    throw std::invalid_argument("update_centers: non-finite features");
  }
  const int c = static_cast<int>(centers.centers.rows());
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(c, features.cols());
  std::vector<int> n(c, 0);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= c) throw std::invalid_argument("update_centers: label out of range");
    sums.row(y) += features.row(i);
    ++n[y];
  }
  const double m = centers.momentum;
  for (int y = 0; y < c; ++y) {
    if (n[y] == 0) continue;
    const Eigen::RowVectorXd mean = sums.row(y) / n[y];
    centers.centers.row(y) = (1.0 - m) * centers.centers.row(y) + m * mean;
    centers.counts_seen[y] += n[y];
  }
}

MoeModel::Linear MoeModel::make_linear(int in, int out, Rng& rng) {
  // Kaiming-style scaling keeps activations in range for ReLU stacks.
  const double scale = std::sqrt(2.0 / static_cast<double>(in));
  Eigen::MatrixXd w(in, out);
  for (int i = 0; i < in; ++i) {
    for (int j = 0; j < out; ++j) w(i, j) = scale * rng.normal();
  }
  Linear l;
  l.w = ad::Var::leaf(std::move(w));
  // Small positive bias keeps ReLU rows away from exact zero, which the
  // cosine heads reject.
  l.b = ad::Var::leaf(Eigen::MatrixXd::Constant(1, out, 0.01));
  params_.push_back(l.w);
  params_.push_back(l.b);
  return l;
}

ad::Var MoeModel::apply(const Linear& l, const ad::Var& x) {
  return ad::add_rowvec(ad::matmul(x, l.w), l.b);
}

MoeModel::MoeModel(const ModelSpec& spec, const ExpertAssignment& assignment, std::uint64_t seed)
    : spec_(spec), assignment_(assignment) {
  if (spec.input_dim < 1 || spec.num_classes < 2) {
    throw std::invalid_argument("MoeModel: bad spec dimensions");
  }
  Rng rng = Rng(seed).fork(0x6d6f64656c);
  int width = spec.input_dim;
  for (int h : spec.trunk_hidden) {
    trunk_.push_back(make_linear(width, h, rng));
    width = h;
  }
  const int k_total = assignment.num_experts;
  for (int k = 0; k < k_total; ++k) {
    expert_feature_.push_back(make_linear(width, spec.feature_dim, rng));
    expert_cls_.push_back(make_linear(spec.feature_dim, spec.num_classes, rng));
  }
  proj1_ = make_linear(spec.feature_dim, spec.proj_dim, rng);
  proj2_ = make_linear(spec.proj_dim, spec.proj_dim, rng);
  pred1_ = make_linear(spec.proj_dim, spec.pred_hidden, rng);
  pred2_ = make_linear(spec.pred_hidden, spec.proj_dim, rng);
}

ExpertEnsembleOutput MoeModel::forward(const ad::Var& inputs, const BatchLayout& layout) const {
  if (inputs.rows() != layout.total()) {
    throw std::invalid_argument("forward: layout does not match input rows");
  }
  ExpertEnsembleOutput out;
  out.layout = layout;

  ad::Var h = inputs;
  for (const auto& l : trunk_) h = ad::relu(apply(l, h));

  const int k_total = assignment_.num_experts;
  ad::Var logit_sum;
  for (int k = 0; k < k_total; ++k) {
    ad::Var z = ad::relu(apply(expert_feature_[k], h));
    ad::Var v = apply(expert_cls_[k], z);
    out.features.push_back(z);
    out.logits.push_back(v);
    logit_sum = (k == 0) ? v : ad::add(logit_sum, v);
  }
  out.ensemble_logits = ad::mul_scalar(logit_sum, 1.0 / static_cast<double>(k_total));

  if (layout.n_mixup > 0 || layout.n_cutmix > 0) {
    // Consistency heads read the global expert's features.
    const ad::Var& z_global = out.features[static_cast<size_t>(assignment_.global_index())];
    auto project = [this](const ad::Var& z) {
      return apply(proj2_, ad::relu(apply(proj1_, z)));
    };
    auto predict = [this](const ad::Var& p) {
      return apply(pred2_, ad::relu(apply(pred1_, p)));
    };
    if (layout.n_mixup > 0) {
      ad::Var z_m = ad::slice_rows(z_global, layout.mixup_offset(), layout.n_mixup);
      out.proj_mixup = project(z_m);
      out.pred_mixup = predict(ad::detach(out.proj_mixup));
    }
    if (layout.n_cutmix > 0) {
      ad::Var z_c = ad::slice_rows(z_global, layout.cutmix_offset(), layout.n_cutmix);
      out.proj_cutmix = project(z_c);
      out.pred_cutmix = predict(ad::detach(out.proj_cutmix));
    }
  }
  return out;
}

Eigen::MatrixXd MoeModel::ensemble_logits(const Eigen::MatrixXd& inputs) const {
  BatchLayout layout;
  layout.n_id = static_cast<int>(inputs.rows());
  ExpertEnsembleOutput out = forward(ad::Var::constant(inputs), layout);
  return out.ensemble_logits.value();
}

std::vector<Eigen::MatrixXd> MoeModel::state() const {
  std::vector<Eigen::MatrixXd> s;
  s.reserve(params_.size());
  for (const auto& p : params_) s.push_back(p.value());
  return s;
}

void MoeModel::load_state(const std::vector<Eigen::MatrixXd>& state) {
  if (state.size() != params_.size()) {
    throw std::invalid_argument("load_state: parameter count mismatch");
  }
  for (size_t i = 0; i < state.size(); ++i) {
    if (state[i].rows() != params_[i].rows() || state[i].cols() != params_[i].cols()) {
      throw std::invalid_argument("load_state: parameter shape mismatch");
    }
    params_[i].mutable_value() = state[i];
  }
}

// --- checkpoint -------------------------------------------------------------

std::string config_hash_hex(const std::string& config_json) {
  // FNV-1a 64-bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_json) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json j;
  j["format"] = "ricasso-checkpoint-v1";
  j["config"] = ckpt.config_json;
  j["config_hash"] = ckpt.config_hash;
  j["spec"] = {{"input_dim", ckpt.spec.input_dim},
               {"num_classes", ckpt.spec.num_classes},
               {"trunk_hidden", ckpt.spec.trunk_hidden},
               {"feature_dim", ckpt.spec.feature_dim},
               {"num_local_experts", ckpt.spec.num_local_experts},
               {"tau", ckpt.spec.tau},
               {"proj_dim", ckpt.spec.proj_dim},
               {"pred_hidden", ckpt.spec.pred_hidden}};
  j["assignment"] = {{"num_experts", ckpt.assignment.num_experts},
                     {"groups", ckpt.assignment.groups},
                     {"tau", ckpt.assignment.tau}};
  j["profile"] = {{"counts", ckpt.profile.counts}};
  j["shape"] = {{"channels", ckpt.shape.channels},
                {"height", ckpt.shape.height},
                {"width", ckpt.shape.width}};
  json state = json::array();
  for (const auto& m : ckpt.model_state) state.push_back(matrix_to_json(m));
  j["model_state"] = std::move(state);
  j["centers"] = matrix_to_json(ckpt.centers);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump();
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  json j = json::parse(in);
  if (j.value("format", "") != "ricasso-checkpoint-v1") {
    throw std::runtime_error("not a ricasso checkpoint: " + path);
  }
  Checkpoint c;
  c.config_json = j.at("config").get<std::string>();
  c.config_hash = j.at("config_hash").get<std::string>();
  if (config_hash_hex(c.config_json) != c.config_hash) {
    throw std::runtime_error("checkpoint config hash mismatch: " + path);
  }
  const json& s = j.at("spec");
  c.spec.input_dim = s.at("input_dim").get<int>();
  c.spec.num_classes = s.at("num_classes").get<int>();
  c.spec.trunk_hidden = s.at("trunk_hidden").get<std::vector<int>>();
  c.spec.feature_dim = s.at("feature_dim").get<int>();
  c.spec.num_local_experts = s.at("num_local_experts").get<int>();
  c.spec.tau = s.at("tau").get<double>();
  c.spec.proj_dim = s.at("proj_dim").get<int>();
  c.spec.pred_hidden = s.at("pred_hidden").get<int>();
  const json& a = j.at("assignment");
  c.assignment.num_experts = a.at("num_experts").get<int>();
  c.assignment.groups = a.at("groups").get<std::vector<std::vector<int>>>();
  c.assignment.tau = a.at("tau").get<double>();
  c.profile = ClassProfile::from_counts(j.at("profile").at("counts").get<std::vector<long long>>());
  const json& sh = j.at("shape");
  c.shape.channels = sh.at("channels").get<int>();
  c.shape.height = sh.at("height").get<int>();
  c.shape.width = sh.at("width").get<int>();
  for (const auto& m : j.at("model_state")) c.model_state.push_back(matrix_from_json(m));
  c.centers = matrix_from_json(j.at("centers"));
  return c;
}

}  // namespace ricasso
