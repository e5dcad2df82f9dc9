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

#ifndef RICASSO_DATA_HPP_
#define RICASSO_DATA_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ricasso/rng.hpp"

namespace ricasso {

// Per-class sample counts with their normalized priors.
struct ClassProfile {
  std::vector<long long> counts;
  std::vector<double> priors;  // counts[c] / sum(counts)
  int num_classes = 0;
  double imbalance_ratio = 1.0;  // max count / min count

  static ClassProfile from_counts(std::vector<long long> counts);
};

// counts[j] = round(n_max * ir^(-j / (C-1))), the exponential decay profile.
ClassProfile make_longtail_profile(int num_classes, long long n_max, double imbalance_ratio);

std::vector<double> compute_prior(const std::vector<long long>& counts);

struct ImageShape {
  int channels = 1;
  int height = 1;
  int width = 1;
  int size() const { return channels * height * width; }
  bool spatial() const { return height > 1 || width > 1; }
  bool operator==(const ImageShape&) const = default;
};

enum class MixMethod { kMixup, kCutmix };

// A convex mixture of two source samples with a two-hot soft label.
// lam is the label mass on the first source class; for cutmix it is
// recomputed from the actual (clipped) patch area.
struct MixedSample {
  Eigen::VectorXd input;
  Eigen::VectorXd soft_label;
  double lam = 1.0;
  int src_i = -1;  // position in the ID-side batch
  int src_j = -1;  // position in the anti-side batch
  MixMethod method = MixMethod::kMixup;
};

Eigen::VectorXd two_hot_label(int num_classes, int y_i, int y_j, double lam);

MixedSample mixup(const Eigen::VectorXd& x_i, int y_i, const Eigen::VectorXd& x_j, int y_j,
                  double lam, int num_classes);

// Replaces a random rectangle of x_i (area fraction ~ 1-lam_target, clipped
// to the image bounds) with the matching region of x_j. The stored lam is
// recomputed from the replaced pixel count so the label stays honest.
MixedSample cutmix(const Eigen::VectorXd& x_i, int y_i, const Eigen::VectorXd& x_j, int y_j,
                   double lam_target, const ImageShape& shape, int num_classes, Rng& rng);

// One training step's worth of data: the ID batch, its anti-long-tailed
// partner batch, and the mixed views of each positional pair.
struct TrainBatch {
  Eigen::MatrixXd id_inputs;  // rows are flattened samples
  std::vector<int> id_labels;
  Eigen::MatrixXd anti_inputs;
  std::vector<int> anti_labels;
  std::vector<MixedSample> mixed_mixup;
  std::vector<MixedSample> mixed_cutmix;
  std::vector<std::pair<int, int>> pairing;
  int num_classes = 0;
  ImageShape shape;

  Eigen::Index pair_count() const { return static_cast<Eigen::Index>(pairing.size()); }
};

// Pairs position p of the ID batch with position p of the anti batch and
// draws one Beta(alpha, alpha) coefficient per pair, shared by the mixup
// sample and the cutmix target.
TrainBatch build_training_batch(const Eigen::MatrixXd& id_inputs,
                                const std::vector<int>& id_labels,
                                const Eigen::MatrixXd& anti_inputs,
                                const std::vector<int>& anti_labels,
                                const ImageShape& shape, int num_classes, double alpha,
                                std::uint64_t seed);

// In-memory dataset of flattened samples.
struct Dataset {
  Eigen::MatrixXd inputs;  // N x shape.size()
  std::vector<int> labels;
  ImageShape shape;
  ClassProfile profile;

  Eigen::Index size() const { return inputs.rows(); }
};

// Draws dataset indices with class probability proportional to 1/count,
// uniform within the class.
class AntiLongtailSampler {
 public:
  AntiLongtailSampler(const std::vector<int>& labels, const ClassProfile& profile,
                      std::uint64_t seed);
  int next();
  const std::vector<double>& class_probs() const { return class_probs_; }

 private:
  std::vector<std::vector<int>> by_class_;
  std::vector<double> class_probs_;  // normalized 1/count
  std::vector<double> cdf_;
  Rng rng_;
};

// Shuffled passes over 0..n-1; reshuffles at each epoch boundary.
class ShuffledStream {
 public:
  ShuffledStream(int n, std::uint64_t seed);
  int next();

 private:
  void reshuffle();
  std::vector<int> order_;
  size_t pos_ = 0;
  Rng rng_;
};

// --- synthetic task -------------------------------------------------------

// C-class Gaussian mixture with class means on a sphere. The flattened
// dimension is shape.size(); a (1, h, w) shape keeps cutmix meaningful.
struct SyntheticSpec {
  int num_classes = 10;
  ImageShape shape{1, 4, 8};
  double mean_radius = 4.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 1;
};

Eigen::MatrixXd synthetic_class_means(const SyntheticSpec& spec);

// Per-class sample counts are taken from the profile.
Dataset make_synthetic_dataset(const SyntheticSpec& spec, const ClassProfile& profile,
                               std::uint64_t seed);

// Balanced test split, n_per_class samples each.
Dataset make_synthetic_testset(const SyntheticSpec& spec, int n_per_class, std::uint64_t seed);

// Synthetic OOD generators:
//   midpoint - noise around midpoints of random class-mean pairs
//   shell    - Gaussian blobs at radius_factor * mean_radius in random directions
//   uniform  - uniform cube [-mean_radius, mean_radius]^d
Eigen::MatrixXd make_synthetic_ood(const SyntheticSpec& spec, const std::string& kind, int n,
                                   std::uint64_t seed);

// --- image-folder adapter -------------------------------------------------

// Loads <root>/<class_dir>/*.pgm|*.ppm (binary P5/P6), classes ordered by
// directory name; pixels scaled to [0, 1]. All images must share one shape.
Dataset load_image_folder(const std::string& root);

// Profile manifest (class -> count, seed, imbalance ratio) as JSON text.
std::string profile_manifest_json(const ClassProfile& profile, std::uint64_t seed);
ClassProfile profile_from_manifest_json(const std::string& text, std::uint64_t* seed_out);

}  // namespace ricasso

#endif  // RICASSO_DATA_HPP_
