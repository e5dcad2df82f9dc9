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

#include "ricasso/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace ricasso {

namespace fs = std::filesystem;
using nlohmann::json;

ClassProfile ClassProfile::from_counts(std::vector<long long> counts) {
  if (counts.empty()) throw std::invalid_argument("ClassProfile: empty counts");
  for (long long c : counts) {
    if (c < 1) throw std::invalid_argument("ClassProfile: all counts must be >= 1");
  }
  ClassProfile p;
  p.num_classes = static_cast<int>(counts.size());
  p.priors = compute_prior(counts);
  const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
  p.imbalance_ratio = static_cast<double>(*mx) / static_cast<double>(*mn);
  p.counts = std::move(counts);
  return p;
}

ClassProfile make_longtail_profile(int num_classes, long long n_max, double imbalance_ratio) {
  if (num_classes < 2) throw std::invalid_argument("make_longtail_profile: num_classes >= 2");
  if (n_max < 1) throw std::invalid_argument("make_longtail_profile: n_max >= 1");
  if (imbalance_ratio < 1.0) {
    throw std::invalid_argument("make_longtail_profile: imbalance_ratio >= 1");
  }
  std::vector<long long> counts(num_classes);
  for (int j = 0; j < num_classes; ++j) {
    const double frac = static_cast<double>(j) / static_cast<double>(num_classes - 1);
    const double c = static_cast<double>(n_max) * std::pow(imbalance_ratio, -frac);
    counts[j] = static_cast<long long>(std::llround(c));
    if (counts[j] < 1) {
      throw std::invalid_argument("make_longtail_profile: rounded count below 1");
    }
  }
  return ClassProfile::from_counts(std::move(counts));
}

std::vector<double> compute_prior(const std::vector<long long>& counts) {
  if (counts.empty()) throw std::invalid_argument("compute_prior: empty counts");
  long long total = 0;
  for (long long c : counts) {
    if (c <= 0) throw std::invalid_argument("compute_prior: counts must be positive");
    total += c;
  }
  std::vector<double> priors(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    priors[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return priors;
}

Eigen::VectorXd two_hot_label(int num_classes, int y_i, int y_j, double lam) {
  if (y_i < 0 || y_i >= num_classes || y_j < 0 || y_j >= num_classes) {
    throw std::invalid_argument("two_hot_label: label out of range");
  }
  Eigen::VectorXd label = Eigen::VectorXd::Zero(num_classes);
  label(y_i) += lam;
  label(y_j) += 1.0 - lam;
  return label;
}

MixedSample mixup(const Eigen::VectorXd& x_i, int y_i, const Eigen::VectorXd& x_j, int y_j,
                  double lam, int num_classes) {
  if (lam < 0.0 || lam > 1.0) throw std::invalid_argument("mixup: lam must be in [0,1]");
  if (x_i.size() != x_j.size()) throw std::invalid_argument("mixup: input shape mismatch");
  MixedSample s;
  s.input = lam * x_i + (1.0 - lam) * x_j;
  s.soft_label = two_hot_label(num_classes, y_i, y_j, lam);
  s.lam = lam;
  s.method = MixMethod::kMixup;
  return s;
}

MixedSample cutmix(const Eigen::VectorXd& x_i, int y_i, const Eigen::VectorXd& x_j, int y_j,
                   double lam_target, const ImageShape& shape, int num_classes, Rng& rng) {
  if (lam_target < 0.0 || lam_target > 1.0) {
    throw std::invalid_argument("cutmix: lam_target must be in [0,1]");
  }
  if (x_i.size() != x_j.size()) throw std::invalid_argument("cutmix: input shape mismatch");
  if (x_i.size() != shape.size()) throw std::invalid_argument("cutmix: shape/input mismatch");
  if (!shape.spatial()) throw std::invalid_argument("cutmix: input is not spatial");

  const int h = shape.height;
  const int w = shape.width;
  // Aspect-preserving square-root rule for the patch size.
  const double cut = std::sqrt(1.0 - lam_target);
  const int ph = static_cast<int>(std::lround(h * cut));
  const int pw = static_cast<int>(std::lround(w * cut));
  const int cy = rng.uniform_int(h);
  const int cx = rng.uniform_int(w);
  const int y0 = std::max(0, cy - ph / 2);
  const int y1 = std::min(h, cy - ph / 2 + ph);
  const int x0 = std::max(0, cx - pw / 2);
  const int x1 = std::min(w, cx - pw / 2 + pw);

  MixedSample s;
  s.input = x_i;
  long long replaced = 0;
  for (int c = 0; c < shape.channels; ++c) {
    for (int yy = y0; yy < y1; ++yy) {
      for (int xx = x0; xx < x1; ++xx) {
        const int idx = (c * h + yy) * w + xx;
        s.input(idx) = x_j(idx);
      }
    }
  }
  replaced = static_cast<long long>(std::max(0, y1 - y0)) * std::max(0, x1 - x0);
  const double area_fraction = static_cast<double>(replaced) / static_cast<double>(h * w);
  s.lam = 1.0 - area_fraction;
  s.soft_label = two_hot_label(num_classes, y_i, y_j, s.lam);
  s.method = MixMethod::kCutmix;
  return s;
}

TrainBatch build_training_batch(const Eigen::MatrixXd& id_inputs,
                                const std::vector<int>& id_labels,
                                const Eigen::MatrixXd& anti_inputs,
                                const std::vector<int>& anti_labels,
                                const ImageShape& shape, int num_classes, double alpha,
                                std::uint64_t seed) {
  if (id_inputs.rows() != anti_inputs.rows() ||
      id_inputs.rows() != static_cast<Eigen::Index>(id_labels.size()) ||
      anti_inputs.rows() != static_cast<Eigen::Index>(anti_labels.size())) {
    throw std::invalid_argument("build_training_batch: batch length mismatch");
  }
  if (id_inputs.cols() != anti_inputs.cols()) {
    throw std::invalid_argument("build_training_batch: input width mismatch");
  }
  if (alpha <= 0.0) throw std::invalid_argument("build_training_batch: alpha must be > 0");

  TrainBatch batch;
  batch.id_inputs = id_inputs;
  batch.id_labels = id_labels;
  batch.anti_inputs = anti_inputs;
  batch.anti_labels = anti_labels;
  batch.num_classes = num_classes;
  batch.shape = shape;

  Rng lam_rng = Rng(seed).fork(0x6d6978);   // mixing coefficients
  Rng geom_rng = Rng(seed).fork(0x637574);  // cutmix geometry

  const Eigen::Index n = id_inputs.rows();
  for (Eigen::Index p = 0; p < n; ++p) {
    const double lam = lam_rng.beta(alpha, alpha);
    const int pi = static_cast<int>(p);
    MixedSample mu = mixup(id_inputs.row(p).transpose(), id_labels[p],
                           anti_inputs.row(p).transpose(), anti_labels[p], lam, num_classes);
    mu.src_i = pi;
    mu.src_j = pi;
    MixedSample cm = cutmix(id_inputs.row(p).transpose(), id_labels[p],
                            anti_inputs.row(p).transpose(), anti_labels[p], lam, shape,
                            num_classes, geom_rng);
    cm.src_i = pi;
    cm.src_j = pi;
    batch.mixed_mixup.push_back(std::move(mu));
    batch.mixed_cutmix.push_back(std::move(cm));
    batch.pairing.emplace_back(pi, pi);
  }
  return batch;
}

AntiLongtailSampler::AntiLongtailSampler(const std::vector<int>& labels,
                                         const ClassProfile& profile, std::uint64_t seed)
    : rng_(seed) {
  const int c = profile.num_classes;
  by_class_.resize(c);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= c) {
      throw std::invalid_argument("AntiLongtailSampler: label out of range");
    }
    by_class_[labels[i]].push_back(static_cast<int>(i));
  }
  double total = 0.0;
  class_probs_.resize(c);
  for (int k = 0; k < c; ++k) {
    if (by_class_[k].empty()) {
      throw std::invalid_argument("AntiLongtailSampler: class with no samples");
    }
    class_probs_[k] = 1.0 / static_cast<double>(profile.counts[k]);
    total += class_probs_[k];
  }
  cdf_.resize(c);
  double acc = 0.0;
  for (int k = 0; k < c; ++k) {
    class_probs_[k] /= total;
    acc += class_probs_[k];
    cdf_[k] = acc;
  }
  cdf_.back() = 1.0;
}

int AntiLongtailSampler::next() {
  const double u = rng_.uniform();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  const int k = static_cast<int>(std::distance(cdf_.begin(), it));
  const auto& bucket = by_class_[std::min(k, static_cast<int>(cdf_.size()) - 1)];
  return bucket[rng_.uniform_int(static_cast<int>(bucket.size()))];
}

ShuffledStream::ShuffledStream(int n, std::uint64_t seed) : rng_(seed) {
  if (n < 1) throw std::invalid_argument("ShuffledStream: n must be >= 1");
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0);
  reshuffle();
}

void ShuffledStream::reshuffle() {
  // Fisher-Yates with our own rng so the stream is seed-stable.
  for (int i = static_cast<int>(order_.size()) - 1; i > 0; --i) {
    const int j = rng_.uniform_int(i + 1);
    std::swap(order_[i], order_[j]);
  }
  pos_ = 0;
}

int ShuffledStream::next() {
  if (pos_ >= order_.size()) reshuffle();
  return order_[pos_++];
}

Eigen::MatrixXd synthetic_class_means(const SyntheticSpec& spec) {
  Rng rng = Rng(spec.seed).fork(0x6d65616e);
  const int d = spec.shape.size();
  Eigen::MatrixXd means(spec.num_classes, d);
  for (int c = 0; c < spec.num_classes; ++c) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = rng.normal();
    means.row(c) = spec.mean_radius * v.normalized();
  }
  return means;
}

namespace {

Dataset sample_gaussians(const SyntheticSpec& spec, const std::vector<long long>& counts,
                         std::uint64_t seed) {
  const Eigen::MatrixXd means = synthetic_class_means(spec);
  const int d = spec.shape.size();
  long long total = std::accumulate(counts.begin(), counts.end(), 0LL);
  Dataset ds;
  ds.inputs.resize(total, d);
  ds.labels.reserve(total);
  ds.shape = spec.shape;
  Rng rng = Rng(seed).fork(0x64617461);
  Eigen::Index row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (long long s = 0; s < counts[c]; ++s) {
      for (int i = 0; i < d; ++i) {
        ds.inputs(row, i) = means(c, i) + spec.noise_sigma * rng.normal();
      }
      ds.labels.push_back(c);
      ++row;
    }
  }
  ds.profile = ClassProfile::from_counts(counts);
  return ds;
}

}  // namespace

Dataset make_synthetic_dataset(const SyntheticSpec& spec, const ClassProfile& profile,
                               std::uint64_t seed) {
  if (profile.num_classes != spec.num_classes) {
    throw std::invalid_argument("make_synthetic_dataset: profile/spec class mismatch");
  }
  return sample_gaussians(spec, profile.counts, seed);
}

Dataset make_synthetic_testset(const SyntheticSpec& spec, int n_per_class, std::uint64_t seed) {
  std::vector<long long> counts(spec.num_classes, n_per_class);
  return sample_gaussians(spec, counts, mix_seed(seed, 0x74657374));
}

Eigen::MatrixXd make_synthetic_ood(const SyntheticSpec& spec, const std::string& kind, int n,
                                   std::uint64_t seed) {
  const int d = spec.shape.size();
  Eigen::MatrixXd out(n, d);
  Rng rng = Rng(seed).fork(0x6f6f64);
  if (kind == "midpoint") {
    // Distribution of an even two-class mixture: midpoint of the two class
    // means with noise sigma/sqrt(2).
    const Eigen::MatrixXd means = synthetic_class_means(spec);
    const double sigma = spec.noise_sigma / std::sqrt(2.0);
    for (int i = 0; i < n; ++i) {
      const int a = rng.uniform_int(spec.num_classes);
      int b = rng.uniform_int(spec.num_classes - 1);
      if (b >= a) ++b;
      for (int k = 0; k < d; ++k) {
        out(i, k) = 0.5 * (means(a, k) + means(b, k)) + sigma * rng.normal();
      }
    }
  } else if (kind == "shell") {
    const double radius = 1.5 * spec.mean_radius;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd v(d);
      for (int k = 0; k < d; ++k) v(k) = rng.normal();
      v = radius * v.normalized();
      for (int k = 0; k < d; ++k) out(i, k) = v(k) + spec.noise_sigma * rng.normal();
    }
  } else if (kind == "uniform") {
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < d; ++k) {
        out(i, k) = rng.uniform(-spec.mean_radius, spec.mean_radius);
      }
    }
  } else {
    throw std::invalid_argument("make_synthetic_ood: unknown kind '" + kind + "'");
  }
  return out;
}

// --- image folder -----------------------------------------------------------

namespace {

// Minimal binary PGM (P5) / PPM (P6) reader, maxval <= 255.
Eigen::VectorXd read_pnm(const std::string& path, ImageShape* shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") {
    throw std::runtime_error("unsupported image format (want P5/P6): " + path);
  }
  auto next_int = [&in, &path]() {
    // Skips whitespace and '#' comment lines.
    for (;;) {
      int ch = in.peek();
      if (ch == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        break;
      }
    }
    int v;
    if (!(in >> v)) throw std::runtime_error("truncated image header: " + path);
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (maxval <= 0 || maxval > 255) throw std::runtime_error("unsupported maxval: " + path);
  in.get();  // single whitespace before raster
  const int channels = (magic == "P6") ? 3 : 1;
  shape->channels = channels;
  shape->height = h;
  shape->width = w;
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw std::runtime_error("truncated image raster: " + path);
  }
  // Interleaved raster -> channel-major planes.
  Eigen::VectorXd v(static_cast<Eigen::Index>(raw.size()));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        v((c * h + y) * w + x) =
            static_cast<double>(raw[(static_cast<size_t>(y) * w + x) * channels + c]) / maxval;
      }
    }
  }
  return v;
}

}  // namespace

Dataset load_image_folder(const std::string& root) {
  if (!fs::is_directory(root)) {
    throw std::runtime_error("image folder does not exist: " + root);
  }
  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw std::runtime_error("image folder has no class directories");

  std::vector<Eigen::VectorXd> rows;
  std::vector<int> labels;
  std::vector<long long> counts(class_dirs.size(), 0);
  ImageShape shape;
  bool have_shape = false;
  for (size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / class_dirs[c])) {
      const auto ext = entry.path().extension().string();
      if (ext == ".pgm" || ext == ".ppm") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ImageShape s;
      rows.push_back(read_pnm(f, &s));
      if (!have_shape) {
        shape = s;
        have_shape = true;
      } else if (!(s == shape)) {
        throw std::runtime_error("inconsistent image shapes under " + root);
      }
      labels.push_back(static_cast<int>(c));
      ++counts[c];
    }
  }
  if (rows.empty()) throw std::runtime_error("image folder has no readable images");
  Dataset ds;
  ds.inputs.resize(static_cast<Eigen::Index>(rows.size()), rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i) ds.inputs.row(static_cast<Eigen::Index>(i)) = rows[i];
  ds.labels = std::move(labels);
  ds.shape = shape;
  ds.profile = ClassProfile::from_counts(std::move(counts));
  return ds;
}

std::string profile_manifest_json(const ClassProfile& profile, std::uint64_t seed) {
  json j;
  j["counts"] = profile.counts;
  j["imbalance_ratio"] = profile.imbalance_ratio;
  j["seed"] = seed;
  return j.dump(2);
}

ClassProfile profile_from_manifest_json(const std::string& text, std::uint64_t* seed_out) {
  json j = json::parse(text);
  std::vector<long long> counts = j.at("counts").get<std::vector<long long>>();
  if (seed_out) *seed_out = j.at("seed").get<std::uint64_t>();
  return ClassProfile::from_counts(std::move(counts));
}

}  // namespace ricasso
