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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ricasso/model.hpp"
#include "ricasso/rng.hpp"

using namespace ricasso;
namespace fs = std::filesystem;

TEST_CASE("expert assignment splits classes by frequency rank") {
  SUBCASE("ten classes, two local experts, one global") {
    ClassProfile p = make_longtail_profile(10, 1000, 50.0);
    ExpertAssignment a = assign_experts(p, 2);
    CHECK(a.num_experts == 3);
    CHECK(a.groups[0] == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(a.groups[1] == std::vector<int>{5, 6, 7, 8, 9});
    CHECK(a.groups[2].size() == 10);
    CHECK(a.global_index() == 2);
  }
  SUBCASE("two classes, one local expert") {
    ClassProfile p = ClassProfile::from_counts({10, 5});
    ExpertAssignment a = assign_experts(p, 1);
    CHECK(a.num_experts == 2);
    CHECK(a.groups[0] == std::vector<int>{0, 1});
  }
  SUBCASE("singleton groups at the boundary") {
    ClassProfile p = make_longtail_profile(10, 100, 10.0);
    ExpertAssignment a = assign_experts(p, 10);
    CHECK(a.num_experts == 11);
    for (int k = 0; k < 10; ++k) CHECK(a.groups[k].size() == 1);
  }
  SUBCASE("more local experts than classes rejected") {
    ClassProfile p = ClassProfile::from_counts({5, 5});
    CHECK_THROWS_AS(assign_experts(p, 3), std::invalid_argument);
  }
}

TEST_CASE("per-expert priors follow the group structure") {
  const std::vector<double> priors = {0.4, 0.3, 0.2, 0.1};
  ExpertAssignment a;
  a.num_experts = 2;
  a.groups = {{2, 3}, {0, 1, 2, 3}};
  a.tau = 0.0;

  SUBCASE("out-of-group classes take the max prior") {
    Eigen::MatrixXd k = expert_prior(priors, a);
    CHECK(k(0, 0) == doctest::Approx(0.4));
    CHECK(k(0, 1) == doctest::Approx(0.4));
    CHECK(k(0, 2) == doctest::Approx(0.2));
    CHECK(k(0, 3) == doctest::Approx(0.1));
  }
  SUBCASE("tau zero leaves the global prior unchanged") {
    Eigen::MatrixXd k = expert_prior(priors, a);
    for (int j = 0; j < 4; ++j) CHECK(k(1, j) == doctest::Approx(priors[j]));
  }
  SUBCASE("tau one scales the global prior by e") {
    a.tau = 1.0;
    Eigen::MatrixXd k = expert_prior({0.5, 0.5}, {2, {{0, 1}, {0, 1}}, 1.0});
    CHECK(k(1, 0) == doctest::Approx(0.5 * std::exp(1.0)).epsilon(1e-12));
    CHECK(k(1, 1) == doctest::Approx(0.5 * std::exp(1.0)).epsilon(1e-12));
  }
  SUBCASE("out-of-group margins all equal the largest margin") {
    Eigen::MatrixXd k = expert_prior(priors, a);
    const double max_margin = std::log(0.4);
    CHECK(std::log(k(0, 0)) == doctest::Approx(max_margin).epsilon(1e-12));
    CHECK(std::log(k(0, 1)) == doctest::Approx(max_margin).epsilon(1e-12));
  }
}

namespace {

ModelSpec tiny_spec(int input_dim = 8, int classes = 4) {
  ModelSpec s;
  s.input_dim = input_dim;
  s.num_classes = classes;
  s.trunk_hidden = {8};
  s.feature_dim = 6;
  s.num_local_experts = 2;
  s.proj_dim = 5;
  s.pred_hidden = 4;
  return s;
}

Eigen::MatrixXd random_inputs(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

}  // namespace

TEST_CASE("forward produces the contracted shapes") {
  ClassProfile p = make_longtail_profile(4, 40, 4.0);
  ModelSpec spec = tiny_spec();
  ExpertAssignment a = assign_experts(p, spec.num_local_experts);
  MoeModel model(spec, a, 7);

  BatchLayout layout;
  layout.n_id = 3;
  layout.n_anti = 3;
  layout.n_mixup = 3;
  layout.n_cutmix = 3;
  Eigen::MatrixXd inputs = random_inputs(layout.total(), spec.input_dim, 5);
  ExpertEnsembleOutput out = model.forward(ad::Var::constant(inputs), layout);

  CHECK(out.logits.size() == 3);
  CHECK(out.features.size() == 3);
  for (const auto& v : out.logits) {
    CHECK(v.rows() == layout.total());
    CHECK(v.cols() == spec.num_classes);
  }
  for (const auto& z : out.features) {
    CHECK(z.rows() == layout.total());
    CHECK(z.cols() == spec.feature_dim);
  }
  CHECK(out.proj_mixup.rows() == 3);
  CHECK(out.proj_mixup.cols() == spec.proj_dim);
  CHECK(out.pred_cutmix.cols() == spec.proj_dim);

  SUBCASE("ensemble is exactly the mean of the expert logits") {
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(layout.total(), spec.num_classes);
    for (const auto& v : out.logits) mean += v.value();
    mean /= 3.0;
    CHECK((out.ensemble_logits.value() - mean).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("evaluation forward is deterministic") {
    ExpertEnsembleOutput again = model.forward(ad::Var::constant(inputs), layout);
    CHECK(again.ensemble_logits.value() == out.ensemble_logits.value());
  }
  SUBCASE("zeroed parameters produce zero logits") {
    std::vector<Eigen::MatrixXd> zeros;
    for (const auto& m : model.state()) zeros.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
    MoeModel z(spec, a, 7);
    z.load_state(zeros);
    CHECK(z.ensemble_logits(inputs.topRows(2)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("layout mismatch rejected") {
    BatchLayout bad = layout;
    bad.n_id = 1;
    CHECK_THROWS_AS(model.forward(ad::Var::constant(inputs), bad), std::invalid_argument);
  }
}

TEST_CASE("class centers blend batch means with momentum") {
  SUBCASE("momentum one jumps straight to the batch mean") {
    ClassCenters c = ClassCenters::zeros(2, 2, 1.0);
    Eigen::MatrixXd f(1, 2);
    f << 3.0, -1.0;
    update_centers(c, f, {0});
    CHECK(c.centers(0, 0) == 3.0);
    CHECK(c.centers(0, 1) == -1.0);
    CHECK(c.counts_seen[0] == 1);
  }
  SUBCASE("classes absent from the batch stay put") {
    ClassCenters c = ClassCenters::zeros(4, 2, 0.5);
    c.centers.row(3) << 7.0, 7.0;
    Eigen::MatrixXd f(2, 2);
    f << 1, 1, 2, 2;
    update_centers(c, f, {0, 1});
    CHECK(c.centers(3, 0) == 7.0);
    CHECK(c.counts_seen[3] == 0);
  }
  SUBCASE("halfway blend") {
    ClassCenters c = ClassCenters::zeros(1, 2, 0.5);
    Eigen::MatrixXd f(1, 2);
    f << 2, 2;
    update_centers(c, f, {0});
    CHECK(c.centers(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("non-finite features rejected") {
    ClassCenters c = ClassCenters::zeros(1, 2, 0.5);
    Eigen::MatrixXd f(1, 2);
    f << std::nan(""), 0.0;
    CHECK_THROWS_AS(update_centers(c, f, {0}), std::invalid_argument);
  }
  SUBCASE("update contracts toward the batch mean") {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
      const double m = 0.05 + 0.9 * rng.uniform();
      ClassCenters c = ClassCenters::zeros(1, 3, m);
      Eigen::MatrixXd old = random_inputs(1, 3, 100 + t);
      c.centers = old;
      Eigen::MatrixXd f = random_inputs(4, 3, 200 + t);
      update_centers(c, f, {0, 0, 0, 0});
      Eigen::RowVectorXd mean = f.colwise().mean();
      const double before = (old.row(0) - mean).norm();
      const double after = (c.centers.row(0) - mean).norm();
      CHECK(after == doctest::Approx((1.0 - m) * before).epsilon(1e-9));
    }
  }
}

TEST_CASE("checkpoints round-trip and detect tampering") {
  ClassProfile p = make_longtail_profile(4, 40, 4.0);
  ModelSpec spec = tiny_spec();
  ExpertAssignment a = assign_experts(p, spec.num_local_experts);
  MoeModel model(spec, a, 11);

  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.assignment = a;
  ckpt.profile = p;
  ckpt.shape = {1, 2, 4};
  ckpt.model_state = model.state();
  ckpt.centers = Eigen::MatrixXd::Zero(4, spec.feature_dim);
  ckpt.config_json = "{\"seed\":11}";
  ckpt.config_hash = config_hash_hex(ckpt.config_json);

  const fs::path path = fs::temp_directory_path() / "ricasso_ckpt_test.json";
  save_checkpoint(ckpt, path.string());
  Checkpoint loaded = load_checkpoint(path.string());
  CHECK(loaded.spec.feature_dim == spec.feature_dim);
  CHECK(loaded.assignment.groups == a.groups);
  CHECK(loaded.profile.counts == p.counts);
  REQUIRE(loaded.model_state.size() == ckpt.model_state.size());
  for (size_t i = 0; i < ckpt.model_state.size(); ++i) {
    CHECK(loaded.model_state[i] == ckpt.model_state[i]);
  }

  MoeModel reloaded(loaded.spec, loaded.assignment, 999);
  reloaded.load_state(loaded.model_state);
  Eigen::MatrixXd inputs = random_inputs(3, spec.input_dim, 6);
  CHECK(reloaded.ensemble_logits(inputs) == model.ensemble_logits(inputs));

  SUBCASE("hash mismatch is rejected") {
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto at = text.find("\"seed\\\":11");
    REQUIRE(at != std::string::npos);
    text.replace(at + 8, 2, "12");
    const fs::path bad = fs::temp_directory_path() / "ricasso_ckpt_bad.json";
    std::ofstream out(bad);
    out << text;
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(bad.string()),
                         doctest::Contains("hash mismatch"), std::runtime_error);
    fs::remove(bad);
  }
  fs::remove(path);
}
