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

#ifndef RICASSO_RNG_HPP_
#define RICASSO_RNG_HPP_

#include <cstdint>
#include <random>

namespace ricasso {

// Hashes (seed, tag) into a fresh seed for an independent substream.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

// Deterministic random source. The transforms (uniform, normal, gamma,
// beta) are implemented here rather than taken from <random> so that a
// seed produces the same stream on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  int uniform_int(int n);                // {0, ..., n-1}, n >= 1
  double normal();                       // standard normal, Box-Muller
  double gamma(double alpha);            // shape alpha > 0, unit scale
  double beta(double a, double b);

  // Substream derived from the construction seed only; independent of how
  // much this stream has been consumed.
  Rng fork(std::uint64_t tag) const { return Rng(mix_seed(seed_, tag)); }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace ricasso

#endif  // RICASSO_RNG_HPP_
