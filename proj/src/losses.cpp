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

#include "ricasso/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ricasso {

namespace {

constexpr double kExpClamp = 80.0;

void check_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

void check_targets(const Eigen::MatrixXd& t) {
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    if (std::abs(t.row(i).sum() - 1.0) > 1e-6) {
      throw std::invalid_argument("cls_loss: target row does not sum to 1");
    }
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(tau_energy > 0.0)) throw std::invalid_argument("LossConfig: tau_energy must be > 0");
  if (!(eps1 > 0.0)) throw std::invalid_argument("LossConfig: eps1 must be > 0");
  if (lambda0 < 0.0 || lambda1 < 0.0) {
    throw std::invalid_argument("LossConfig: lambda weights must be >= 0");
  }
  if (!(prob_floor > 0.0) || prob_floor > 1e-3) {
    throw std::invalid_argument("LossConfig: prob_floor must be in (0, 1e-3]");
  }
  if (!(gamma0 > 0.0) || !(gamma1 > 0.0)) {
    throw std::invalid_argument("LossConfig: gamma exponents must be > 0");
  }
  if (energy_input != "logits" && energy_input != "feature") {
    throw std::invalid_argument("LossConfig: energy_input must be 'logits' or 'feature'");
  }
}

ad::Var energy_score(const ad::Var& logits, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("energy_score: tau must be > 0");
  check_finite(logits.value(), "energy_score");
  ad::Var scaled = ad::mul_scalar(logits, 1.0 / tau);
  return ad::mul_scalar(ad::logsumexp_rows(scaled), -tau);
}

double energy_score(const Eigen::VectorXd& logits, double tau) {
  return energy_score(ad::Var::constant(Eigen::MatrixXd(logits.transpose())), tau)
      .value()(0, 0);
}

ad::Var aala_factor(const ad::Var& energies) {
  if (energies.rows() < 1 || energies.cols() != 1) {
    throw std::invalid_argument("aala_factor: energies must be a nonempty column");
  }
  check_finite(energies.value(), "aala_factor");
  // softmax over the batch dimension, shift-stable; the shift constant is
  // value-only so no gradient flows through it.
  const double m = energies.value().maxCoeff();
  ad::Var e = ad::exp(ad::add_scalar(energies, -m));
  ad::Var total = ad::sum(e);
  ad::Var inv = ad::div(ad::Var::constant(1.0), total);
  return ad::add_scalar(ad::scale(e, inv), 1.0);
}

Eigen::VectorXd aala_factor(const Eigen::VectorXd& energies) {
  Eigen::MatrixXd col = energies;
  return aala_factor(ad::Var::constant(col)).value().col(0);
}

ad::Var recalibrated_margins(const Eigen::RowVectorXd& expert_prior_row,
                             const ad::Var& factors) {
  for (Eigen::Index j = 0; j < expert_prior_row.size(); ++j) {
    if (!(expert_prior_row(j) > 0.0)) {
      throw std::invalid_argument("recalibrated_margins: prior must be positive");
    }
  }
  Eigen::MatrixXd log_prior = expert_prior_row.array().log().matrix();
  return ad::matmul(factors, ad::Var::constant(log_prior));
}

ad::Var adjusted_softmax(const ad::Var& logits, const ad::Var& margins) {
  return ad::softmax_rows(ad::add(logits, margins));
}

ad::Var cls_loss(const std::vector<ad::Var>& expert_logits,
                 const std::vector<ad::Var>& expert_features,
                 const Eigen::MatrixXd& soft_targets, const Eigen::MatrixXd& expert_priors,
                 const Eigen::MatrixXd& g_weights, const LossConfig& config,
                 LossBreakdown* audit) {
  const int k_total = static_cast<int>(expert_logits.size());
  if (k_total == 0) throw std::invalid_argument("cls_loss: no experts");
  const Eigen::Index b = expert_logits[0].rows();
  if (soft_targets.rows() != b) throw std::invalid_argument("cls_loss: target rows mismatch");
  if (expert_priors.rows() != k_total) {
    throw std::invalid_argument("cls_loss: priors/expert count mismatch");
  }
  if (g_weights.rows() != k_total || g_weights.cols() != b) {
    throw std::invalid_argument("cls_loss: g_weights shape mismatch");
  }
  check_targets(soft_targets);
  const bool use_features = config.energy_input == "feature";
  if (use_features && expert_features.size() != expert_logits.size()) {
    throw std::invalid_argument("cls_loss: features required for energy_input=feature");
  }

  ad::Var targets = ad::Var::constant(soft_targets);
  ad::Var total;
  for (int k = 0; k < k_total; ++k) {
    ad::Var factors;
    if (config.aala_enabled) {
      const ad::Var& energy_src = use_features ? expert_features[k] : expert_logits[k];
      factors = aala_factor(energy_score(energy_src, config.tau_energy));
    } else {
      factors = ad::Var::constant(Eigen::MatrixXd::Ones(b, 1));
    }
    ad::Var margins = recalibrated_margins(expert_priors.row(k), factors);
    ad::Var logp = ad::log_softmax_rows(ad::add(expert_logits[k], margins));
    ad::Var ce = ad::neg(ad::row_sum(ad::mul(targets, logp)));  // (B,1)
    Eigen::MatrixXd g_col = g_weights.row(k).transpose();
    ad::Var weighted = ad::mul(ce, ad::Var::constant(g_col));
    ad::Var expert_loss = ad::mean_all(weighted);
    total = (k == 0) ? expert_loss : ad::add(total, expert_loss);

    if (audit && k == k_total - 1) {
      audit->per_sample_margins = margins.value();
      audit->factors = factors.value().col(0);
      audit->mean_factor = factors.value().mean();
      audit->mean_energy =
          energy_score(use_features ? expert_features[k] : expert_logits[k],
                       config.tau_energy)
              .value()
              .mean();
    }
  }
  return total;
}

ad::Var vbl_distance(const ad::Var& z_src_i, const ad::Var& z_src_j, const ad::Var& z_mix) {
  if (z_src_i.rows() != z_mix.rows() || z_src_j.rows() != z_mix.rows()) {
    throw std::invalid_argument("vbl_distance: triple count mismatch");
  }
  if (z_src_i.cols() != z_mix.cols() || z_src_j.cols() != z_mix.cols()) {
    throw std::invalid_argument("vbl_distance: feature width mismatch");
  }
  if (z_mix.rows() == 0) throw std::invalid_argument("vbl_distance: empty");
  ad::Var di = ad::row_squared_norm(ad::sub(z_src_i, z_mix));
  ad::Var dj = ad::row_squared_norm(ad::sub(z_src_j, z_mix));
  return ad::mean_all(ad::add(di, dj));
}

ad::Var dual_entropy_weight(const ad::Var& probs, const Eigen::MatrixXd& targets,
                            double prob_floor) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw std::invalid_argument("dual_entropy_weight: shape mismatch");
  }
  ad::Var logp = ad::log(ad::clamp_min(probs, prob_floor));
  ad::Var coeff = ad::add(probs, ad::Var::constant(targets));
  return ad::neg(ad::row_sum(ad::mul(coeff, logp)));
}

ad::Var dec_distance(const ad::Var& features, const ad::Var& probs,
                     const std::vector<int>& labels, const Eigen::MatrixXd& targets,
                     const ClassCenters& centers, const LossConfig& config,
                     LossBreakdown* audit) {
  const Eigen::Index b = features.rows();
  if (b == 0) throw std::invalid_argument("dec_distance: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != b) {
    throw std::invalid_argument("dec_distance: label count mismatch");
  }
  Eigen::MatrixXd center_rows(b, centers.centers.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= centers.centers.rows()) {
      throw std::invalid_argument("dec_distance: label out of range");
    }
    if (centers.counts_seen[static_cast<size_t>(y)] == 0 && audit) {
      audit->center_warning = true;
    }
    center_rows.row(i) = centers.centers.row(y);
  }
  ad::Var omega = dual_entropy_weight(probs, targets, config.prob_floor);
  ad::Var sq = ad::row_squared_norm(ad::sub(features, ad::Var::constant(center_rows)));
  return ad::mul_scalar(ad::mean_all(ad::mul(omega, sq)), 0.5);
}

ad::Var cbcl_loss(const ad::Var& d_plus, const ad::Var& d_minus, const LossConfig& config,
                  LossBreakdown* audit) {
  if (d_plus.value()(0, 0) < 0.0 || d_minus.value()(0, 0) < 0.0) {
    throw std::invalid_argument("cbcl_loss: distances must be nonnegative");
  }
  ad::Var a = ad::mul_scalar(d_plus, config.gamma0);
  ad::Var bb = ad::mul_scalar(d_minus, config.gamma1);
  if (a.value()(0, 0) > kExpClamp || bb.value()(0, 0) > kExpClamp) {
    if (audit) audit->clamp_hit = true;
    a = ad::clamp_max(a, kExpClamp);
    bb = ad::clamp_max(bb, kExpClamp);
  }
  // Shift by max(a, b); the ratio is invariant so the shift needs no grad.
  const double m = std::max(a.value()(0, 0), bb.value()(0, 0));
  ad::Var ea = ad::exp(ad::add_scalar(a, -m));
  ad::Var eb = ad::exp(ad::add_scalar(bb, -m));
  const double shrink = std::exp(-m);
  ad::Var num = ad::add_scalar(ad::sub(ea, eb), config.eps0 * shrink);
  ad::Var den = ad::add_scalar(ad::add(ea, eb), config.eps1 * shrink);
  return ad::div(num, den);
}

double cbcl_loss(double d_plus, double d_minus, const LossConfig& config) {
  return cbcl_loss(ad::Var::constant(d_plus), ad::Var::constant(d_minus), config, nullptr)
      .value()(0, 0);
}

ad::Var rcl_loss(const ad::Var& h_m, const ad::Var& h_c, const ad::Var& u_m,
                 const ad::Var& u_c) {
  if (h_m.rows() != h_c.rows() || h_m.rows() != u_m.rows() || h_m.rows() != u_c.rows()) {
    throw std::invalid_argument("rcl_loss: pair count mismatch");
  }
  if (h_m.rows() == 0) throw std::invalid_argument("rcl_loss: empty");
  ad::Var hm = ad::detach(h_m);
  ad::Var hc = ad::detach(h_c);
  ad::Var c1 = ad::cosine_rows(u_m, hc);
  ad::Var c2 = ad::cosine_rows(u_c, hm);
  return ad::neg(ad::mean_all(ad::add(c1, c2)));
}

Eigen::MatrixXd g_weights_for(const std::vector<int>& primary_labels,
                              const ExpertAssignment& assignment, double w_out) {
  const int k_total = assignment.num_experts;
  const int b = static_cast<int>(primary_labels.size());
  Eigen::MatrixXd g = Eigen::MatrixXd::Ones(k_total, b);
  for (int k = 0; k < k_total - 1; ++k) {
    std::vector<char> in_group;
    int max_class = 0;
    for (int j : assignment.groups[k]) max_class = std::max(max_class, j);
    for (int i = 0; i < b; ++i) max_class = std::max(max_class, primary_labels[i]);
    in_group.assign(max_class + 1, 0);
    for (int j : assignment.groups[k]) in_group[j] = 1;
    for (int i = 0; i < b; ++i) {
      if (!in_group[primary_labels[i]]) g(k, i) = w_out;
    }
  }
  return g;
}

Eigen::MatrixXd batch_soft_targets(const TrainBatch& batch) {
  const int c = batch.num_classes;
  const Eigen::Index n_id = batch.id_inputs.rows();
  const Eigen::Index n_anti = batch.anti_inputs.rows();
  const Eigen::Index n_mu = static_cast<Eigen::Index>(batch.mixed_mixup.size());
  const Eigen::Index n_cm = static_cast<Eigen::Index>(batch.mixed_cutmix.size());
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n_id + n_anti + n_mu + n_cm, c);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < n_id; ++i) t(r++, batch.id_labels[i]) = 1.0;
  for (Eigen::Index i = 0; i < n_anti; ++i) t(r++, batch.anti_labels[i]) = 1.0;
  for (const auto& m : batch.mixed_mixup) t.row(r++) = m.soft_label.transpose();
  for (const auto& m : batch.mixed_cutmix) t.row(r++) = m.soft_label.transpose();
  return t;
}

std::vector<int> batch_primary_labels(const TrainBatch& batch) {
  std::vector<int> labels;
  for (int y : batch.id_labels) labels.push_back(y);
  for (int y : batch.anti_labels) labels.push_back(y);
  auto primary = [&batch](const MixedSample& m) {
    const int y_i = batch.id_labels[m.src_i];
    const int y_j = batch.anti_labels[m.src_j];
    return m.lam >= 0.5 ? y_i : y_j;
  };
  for (const auto& m : batch.mixed_mixup) labels.push_back(primary(m));
  for (const auto& m : batch.mixed_cutmix) labels.push_back(primary(m));
  return labels;
}

ad::Var total_loss(const TotalLossInputs& in, const LossConfig& config,
                   LossBreakdown* breakdown) {
  config.validate();
  if (!in.batch || !in.outputs || !in.centers || !in.expert_priors || !in.base_priors ||
      !in.assignment) {
    throw std::invalid_argument("total_loss: missing inputs");
  }
  const TrainBatch& batch = *in.batch;
  const ExpertEnsembleOutput& out = *in.outputs;
  const BatchLayout& layout = out.layout;
  const int k_total = static_cast<int>(out.logits.size());
  if (k_total != in.expert_priors->rows()) {
    throw std::invalid_argument("total_loss: priors/expert mismatch");
  }

  LossBreakdown bd;
  const Eigen::MatrixXd targets_all = batch_soft_targets(batch);
  const std::vector<int> primary_all = batch_primary_labels(batch);

  // --- classification term (NOD over D_train, or the ID-only base loss)
  ad::Var cls_term;
  if (config.nod_enabled) {
    const Eigen::MatrixXd g = g_weights_for(primary_all, *in.assignment, config.w_out);
    cls_term = cls_loss(out.logits, out.features, targets_all, *in.expert_priors, g, config,
                        &bd);
    bd.nod = cls_term.scalar();
    bd.nod_present = true;
  } else {
    std::vector<ad::Var> id_logits, id_features;
    for (int k = 0; k < k_total; ++k) {
      id_logits.push_back(ad::slice_rows(out.logits[k], layout.id_offset(), layout.n_id));
      id_features.push_back(ad::slice_rows(out.features[k], layout.id_offset(), layout.n_id));
    }
    const Eigen::MatrixXd id_targets = targets_all.topRows(layout.n_id);
    std::vector<int> id_primary(primary_all.begin(), primary_all.begin() + layout.n_id);
    const Eigen::MatrixXd g = g_weights_for(id_primary, *in.assignment, config.w_out);
    cls_term = cls_loss(id_logits, id_features, id_targets, *in.expert_priors, g, config, &bd);
    bd.base_cls = cls_term.scalar();
  }

  ad::Var total = cls_term;

  // --- contrastive boundary-center term
  if (config.cbcl_enabled) {
    const int gk = in.assignment->global_index();
    const ad::Var& feat = out.features[static_cast<size_t>(gk)];

    std::vector<int> src_i_rows, src_j_rows, mix_rows;
    for (size_t p = 0; p < batch.mixed_mixup.size(); ++p) {
      src_i_rows.push_back(layout.id_offset() + batch.mixed_mixup[p].src_i);
      src_j_rows.push_back(layout.anti_offset() + batch.mixed_mixup[p].src_j);
      mix_rows.push_back(layout.mixup_offset() + static_cast<int>(p));
    }
    for (size_t p = 0; p < batch.mixed_cutmix.size(); ++p) {
      src_i_rows.push_back(layout.id_offset() + batch.mixed_cutmix[p].src_i);
      src_j_rows.push_back(layout.anti_offset() + batch.mixed_cutmix[p].src_j);
      mix_rows.push_back(layout.cutmix_offset() + static_cast<int>(p));
    }
    if (mix_rows.empty()) {
      throw std::invalid_argument("total_loss: CBCL enabled but batch has no mixed samples");
    }
    ad::Var d_minus = vbl_distance(ad::gather_rows(feat, src_i_rows),
                                   ad::gather_rows(feat, src_j_rows),
                                   ad::gather_rows(feat, mix_rows));

    // DEC runs on the one-hot rows (ID + anti); probabilities come from the
    // adjusted ensemble output.
    const int n_dec = layout.n_id + layout.n_anti;
    ad::Var ens = ad::slice_rows(out.ensemble_logits, 0, n_dec);
    ad::Var ens_factors;
    if (config.aala_enabled) {
      ens_factors = aala_factor(energy_score(ens, config.tau_energy));
    } else {
      ens_factors = ad::Var::constant(Eigen::MatrixXd::Ones(n_dec, 1));
    }
    Eigen::RowVectorXd base(in.base_priors->size());
    for (int j = 0; j < base.size(); ++j) base(j) = (*in.base_priors)[static_cast<size_t>(j)];
    ad::Var probs = adjusted_softmax(ens, recalibrated_margins(base, ens_factors));

    std::vector<int> dec_labels(primary_all.begin(), primary_all.begin() + n_dec);
    ad::Var feat_dec = ad::slice_rows(feat, 0, n_dec);
    ad::Var d_plus = dec_distance(feat_dec, probs, dec_labels, targets_all.topRows(n_dec),
                                  *in.centers, config, &bd);

    ad::Var cbcl = cbcl_loss(d_plus, d_minus, config, &bd);
    bd.d_plus = d_plus.scalar();
    bd.d_minus = d_minus.scalar();
    bd.cbcl = cbcl.scalar();
    bd.cbcl_present = true;
    total = ad::add(total, ad::mul_scalar(cbcl, config.lambda0));
  }

  // --- consistency term
  if (config.rcl_enabled) {
    if (!out.proj_mixup.valid() || !out.proj_cutmix.valid()) {
      throw std::invalid_argument("total_loss: RCL enabled but no mixed projections");
    }
    ad::Var rcl = rcl_loss(out.proj_mixup, out.proj_cutmix, out.pred_mixup, out.pred_cutmix);
    bd.rcl = rcl.scalar();
    bd.rcl_present = true;
    total = ad::add(total, ad::mul_scalar(rcl, config.lambda1));
  }

  bd.total = total.scalar();
  if (breakdown) *breakdown = std::move(bd);
  return total;
}

ad::Var reference_static_la_loss(const std::vector<ad::Var>& expert_logits,
                                 const Eigen::MatrixXd& soft_targets,
                                 const Eigen::MatrixXd& expert_priors,
                                 const Eigen::MatrixXd& g_weights) {
  const int k_total = static_cast<int>(expert_logits.size());
  if (k_total == 0) throw std::invalid_argument("reference_static_la_loss: no experts");
  const Eigen::Index b = expert_logits[0].rows();
  const Eigen::Index c = expert_logits[0].cols();
  check_targets(soft_targets);

  ad::Var total;
  const Eigen::MatrixXd ones_row = Eigen::MatrixXd::Ones(1, c);
  for (int k = 0; k < k_total; ++k) {
    Eigen::MatrixXd log_prior = expert_priors.row(k).array().log().matrix();
    ad::Var adjusted = ad::add_rowvec(expert_logits[k], ad::Var::constant(log_prior));
    // log-softmax spelled out: a - logsumexp(a) broadcast over columns.
    ad::Var lse = ad::logsumexp_rows(adjusted);
    ad::Var logp = ad::sub(adjusted, ad::matmul(lse, ad::Var::constant(ones_row)));
    ad::Var ce = ad::neg(ad::row_sum(ad::mul(ad::Var::constant(soft_targets), logp)));
    ad::Var weighted = ad::mul(ce, ad::Var::constant(Eigen::MatrixXd(
                                       g_weights.row(k).transpose())));
    ad::Var expert_loss = ad::mul_scalar(ad::sum(weighted), 1.0 / static_cast<double>(b));
    total = (k == 0) ? expert_loss : ad::add(total, expert_loss);
  }
  return total;
}

}  // namespace ricasso
