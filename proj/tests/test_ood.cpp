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

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ricasso/ood.hpp"
#include "ricasso/rng.hpp"

using namespace ricasso;
namespace fs = std::filesystem;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// O(n*m) pairwise oracle with the tie-half convention.
double brute_auroc(const Eigen::VectorXd& id, const Eigen::VectorXd& ood) {
  double wins = 0.0;
  for (Eigen::Index i = 0; i < id.size(); ++i) {
    for (Eigen::Index j = 0; j < ood.size(); ++j) {
      if (id(i) > ood(j)) wins += 1.0;
      else if (id(i) == ood(j)) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

// Exhaustive threshold scan following the ">= theta counts as ID" rule.
double scan_fpr(const Eigen::VectorXd& id, const Eigen::VectorXd& ood, double tpr_target) {
  double best_theta = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (Eigen::Index i = 0; i < id.size(); ++i) {
    const double theta = id(i);
    const double tpr =
        static_cast<double>((id.array() >= theta).count()) / static_cast<double>(id.size());
    if (tpr >= tpr_target && (!found || theta > best_theta)) {
      best_theta = theta;
      found = true;
    }
  }
  return static_cast<double>((ood.array() >= best_theta).count()) /
         static_cast<double>(ood.size());
}

}  // namespace

TEST_CASE("maximum softmax probability") {
  CHECK(msp_score(vec({0, 0})) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(msp_score(vec({0, 0, 0, 0})) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(msp_score(vec({10, 0})) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-12));
  CHECK_THROWS_AS(msp_score(vec({std::nan(""), 0})), std::invalid_argument);
}

TEST_CASE("energy ingestion flips the sign so higher stays more ID") {
  Eigen::MatrixXd logits(2, 3);
  logits << 5, 0, 0, 0, 0, 0;  // row 0 is confidently classified
  Eigen::VectorXd s = energy_scores(logits, 1.0);
  CHECK(s(0) > s(1));
}

TEST_CASE("rank-based AUROC") {
  SUBCASE("worked example scores 0.75 exactly") {
    ScoreSet s;
    s.id_scores = vec({3, 1, 2});
    s.ood_scores = vec({2, 0});
    CHECK(auroc(s) == 0.75);
  }
  SUBCASE("perfect separation and pure ties") {
    ScoreSet s;
    s.id_scores = vec({2, 3});
    s.ood_scores = vec({0, 1});
    CHECK(auroc(s) == 1.0);
    ScoreSet t;
    t.id_scores = vec({1});
    t.ood_scores = vec({1});
    CHECK(auroc(t) == 0.5);
  }
  SUBCASE("empty sides rejected") {
    ScoreSet s;
    s.id_scores = vec({1});
    s.ood_scores = Eigen::VectorXd(0);
    CHECK_THROWS_AS(auroc(s), std::invalid_argument);
  }
  SUBCASE("equals the pairwise brute force within 1e-12") {
    Rng rng(23);
    for (int t = 0; t < 50; ++t) {
      const int n = 1 + rng.uniform_int(200);
      const int m = 1 + rng.uniform_int(200);
      ScoreSet s;
      s.id_scores.resize(n);
      s.ood_scores.resize(m);
      // A coarse integer grid forces plenty of ties.
      for (int i = 0; i < n; ++i) s.id_scores(i) = rng.uniform_int(20);
      for (int i = 0; i < m; ++i) s.ood_scores(i) = rng.uniform_int(20);
      CHECK(std::abs(auroc(s) - brute_auroc(s.id_scores, s.ood_scores)) < 1e-12);
    }
  }
  SUBCASE("invariant under strictly increasing transforms") {
    Rng rng(29);
    ScoreSet s;
    s.id_scores.resize(40);
    s.ood_scores.resize(30);
    for (int i = 0; i < 40; ++i) s.id_scores(i) = rng.normal();
    for (int i = 0; i < 30; ++i) s.ood_scores(i) = rng.normal();
    const double base = auroc(s);
    ScoreSet t;
    t.id_scores = (s.id_scores.array() * 3.0).exp();
    t.ood_scores = (s.ood_scores.array() * 3.0).exp();
    CHECK(auroc(t) == doctest::Approx(base).epsilon(1e-12));
  }
  SUBCASE("swapping sides complements the score") {
    Rng rng(31);
    ScoreSet s;
    s.id_scores.resize(25);
    s.ood_scores.resize(35);
    for (int i = 0; i < 25; ++i) s.id_scores(i) = rng.uniform_int(10);
    for (int i = 0; i < 35; ++i) s.ood_scores(i) = rng.uniform_int(10);
    ScoreSet r;
    r.id_scores = s.ood_scores;
    r.ood_scores = s.id_scores;
    CHECK(auroc(s) == doctest::Approx(1.0 - auroc(r)).epsilon(1e-12));
  }
  SUBCASE("raising an ID score never lowers the area") {
    Rng rng(37);
    for (int t = 0; t < 20; ++t) {
      ScoreSet s;
      s.id_scores.resize(15);
      s.ood_scores.resize(15);
      for (int i = 0; i < 15; ++i) {
        s.id_scores(i) = rng.normal();
        s.ood_scores(i) = rng.normal();
      }
      const double before = auroc(s);
      ScoreSet up = s;
      up.id_scores(rng.uniform_int(15)) += rng.uniform();
      CHECK(auroc(up) >= before - 1e-12);
      ScoreSet down = s;
      down.ood_scores(rng.uniform_int(15)) += rng.uniform();
      CHECK(auroc(down) <= before + 1e-12);
    }
  }
}

TEST_CASE("false positive rate at fixed true positive rate") {
  SUBCASE("perfect separation scores zero") {
    ScoreSet s;
    s.id_scores = vec({5, 6, 7, 8});
    s.ood_scores = vec({1, 2});
    CHECK(fpr_at_tpr(s) == 0.0);
  }
  SUBCASE("1..100 threshold lands on 6") {
    ScoreSet s;
    s.id_scores.resize(100);
    for (int i = 0; i < 100; ++i) s.id_scores(i) = i + 1;
    s.ood_scores = Eigen::VectorXd::Zero(10);
    CHECK(fpr_at_tpr(s, 0.95) == 0.0);
    // Push one OOD score to the threshold boundary to expose theta = 6.
    s.ood_scores(0) = 6.0;
    CHECK(fpr_at_tpr(s, 0.95) == doctest::Approx(0.1).epsilon(1e-12));
    s.ood_scores(0) = 5.9;
    CHECK(fpr_at_tpr(s, 0.95) == 0.0);
  }
  SUBCASE("identical multisets follow the scan oracle") {
    Rng rng(41);
    for (int t = 0; t < 20; ++t) {
      const int n = 5 + rng.uniform_int(100);
      Eigen::VectorXd both(n);
      for (int i = 0; i < n; ++i) both(i) = rng.uniform_int(12);
      ScoreSet s;
      s.id_scores = both;
      s.ood_scores = both;
      CHECK(fpr_at_tpr(s, 0.95) ==
            doctest::Approx(scan_fpr(both, both, 0.95)).epsilon(1e-12));
    }
  }
  SUBCASE("random sets equal the exhaustive scan") {
    Rng rng(43);
    for (int t = 0; t < 100; ++t) {
      const int n = 1 + rng.uniform_int(200);
      const int m = 1 + rng.uniform_int(200);
      ScoreSet s;
      s.id_scores.resize(n);
      s.ood_scores.resize(m);
      for (int i = 0; i < n; ++i) s.id_scores(i) = rng.uniform_int(25);
      for (int i = 0; i < m; ++i) s.ood_scores(i) = rng.uniform_int(25);
      const double tpr = 0.5 + 0.5 * rng.uniform();
      CHECK(fpr_at_tpr(s, tpr) ==
            doctest::Approx(scan_fpr(s.id_scores, s.ood_scores, tpr)).epsilon(1e-12));
    }
  }
}

TEST_CASE("group accuracy over count terciles") {
  ClassProfile p = make_longtail_profile(9, 900, 9.0);
  const std::vector<ClassGroup> groups = class_groups(p);
  CHECK(groups[0] == ClassGroup::kHead);
  CHECK(groups[8] == ClassGroup::kTail);

  SUBCASE("all correct gives ones") {
    std::vector<int> labels, preds;
    for (int c = 0; c < 9; ++c) {
      labels.push_back(c);
      preds.push_back(c);
    }
    GroupAccuracy acc = group_accuracy(preds, labels, p);
    CHECK(acc.head == 1.0);
    CHECK(acc.medium == 1.0);
    CHECK(acc.tail == 1.0);
  }
  SUBCASE("constant head predictions zero the tail") {
    std::vector<int> labels, preds;
    for (int c = 0; c < 9; ++c) {
      labels.push_back(c);
      preds.push_back(0);
    }
    GroupAccuracy acc = group_accuracy(preds, labels, p);
    CHECK(acc.head > 0.0);
    CHECK(acc.tail == 0.0);
  }
  SUBCASE("matches a scalar loop on random predictions") {
    Rng rng(47);
    std::vector<int> labels, preds;
    for (int t = 0; t < 500; ++t) {
      labels.push_back(rng.uniform_int(9));
      preds.push_back(rng.uniform_int(9));
    }
    GroupAccuracy acc = group_accuracy(preds, labels, p);
    double c[3] = {0, 0, 0}, n[3] = {0, 0, 0};
    for (size_t i = 0; i < labels.size(); ++i) {
      const int g = static_cast<int>(groups[static_cast<size_t>(labels[i])]);
      n[g] += 1;
      if (labels[i] == preds[i]) c[g] += 1;
    }
    CHECK(acc.head == doctest::Approx(c[0] / n[0]).epsilon(1e-12));
    CHECK(acc.medium == doctest::Approx(c[1] / n[1]).epsilon(1e-12));
    CHECK(acc.tail == doctest::Approx(c[2] / n[2]).epsilon(1e-12));
  }
}

TEST_CASE("ODIN reduces to MSP when degenerate and matches a scalar oracle") {
  // Tiny model: 2 inputs, no trunk, 2 classes.
  ClassProfile p = ClassProfile::from_counts({8, 4});
  ModelSpec spec;
  spec.input_dim = 2;
  spec.num_classes = 2;
  spec.trunk_hidden = {};
  spec.feature_dim = 3;
  spec.num_local_experts = 1;
  spec.proj_dim = 4;
  spec.pred_hidden = 3;
  ExpertAssignment a = assign_experts(p, 1);
  MoeModel model(spec, a, 13);

  Eigen::VectorXd x(2);
  x << 0.4, -0.2;

  SUBCASE("epsilon zero, temperature one equals MSP") {
    OdinConfig cfg;
    cfg.temperature = 1.0;
    cfg.epsilon = 0.0;
    Eigen::MatrixXd one(1, 2);
    one.row(0) = x;
    const double odin = odin_score(model, x, cfg);
    const double msp = msp_score(Eigen::VectorXd(model.ensemble_logits(one).row(0)));
    CHECK(odin == doctest::Approx(msp).epsilon(1e-12));
  }
  SUBCASE("huge temperature drives the score toward 1/C") {
    OdinConfig cfg;
    cfg.temperature = 1e9;
    cfg.epsilon = 0.0;
    CHECK(odin_score(model, x, cfg) == doctest::Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("two-pass procedure matches a finite-difference oracle") {
    OdinConfig cfg;  // T = 1000, eps = 0.0014
    // Pass 1 oracle: input gradient of log max softmax(v/T) by central FD.
    auto objective = [&](const Eigen::VectorXd& q) {
      Eigen::MatrixXd one(1, 2);
      one.row(0) = q;
      Eigen::VectorXd v = model.ensemble_logits(one).row(0) / cfg.temperature;
      const double m = v.maxCoeff();
      // log max softmax = max - logsumexp
      return -std::log((v.array() - m).exp().sum());
    };
    Eigen::VectorXd grad(2);
    const double h = 1e-6;
    for (int i = 0; i < 2; ++i) {
      Eigen::VectorXd up = x, dn = x;
      up(i) += h;
      dn(i) -= h;
      grad(i) = (objective(up) - objective(dn)) / (2 * h);
    }
    Eigen::VectorXd perturbed = x + cfg.epsilon * grad.array().sign().matrix();
    Eigen::MatrixXd one(1, 2);
    one.row(0) = perturbed;
    const double expected =
        msp_score(Eigen::VectorXd(model.ensemble_logits(one).row(0) / cfg.temperature));
    CHECK(odin_score(model, x, cfg) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("score files round-trip exactly") {
  const fs::path path = fs::temp_directory_path() / "ricasso_scores_test.txt";
  Eigen::VectorXd s(4);
  s << 0.12345678901234567, -3.5, 1e-12, 42.0;
  write_score_file(path.string(), s);
  Eigen::VectorXd r = read_score_file(path.string());
  REQUIRE(r.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(r(i) == s(i));
  fs::remove(path);
  CHECK_THROWS(read_score_file(path.string()));
}
