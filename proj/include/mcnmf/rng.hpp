// include/mcnmf/rng.hpp

// Copyright 2026  mcnmf contributors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MCNMF_RNG_HPP_
#define MCNMF_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "mcnmf/common.hpp"

namespace mcnmf {

/// Derives a child seed from a parent seed and a role tag.  Every consumer
/// of randomness (scene synthesis, factorization init, ...) draws its seed
/// through this function so a single top-level seed reproduces the whole
/// pipeline while keeping the streams of different components independent.
///
/// Implementation: FNV-1a over the tag, then one splitmix64 finalization of
/// seed XOR hash.  All arithmetic is on fixed-width integers, so the mapping
/// is identical across platforms.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string &tag) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 1099511628211ull;  // FNV-1a prime
  }
  std::uint64_t x = seed ^ h;
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Deterministic random generator.  Wraps std::mt19937_64 but converts raw
/// 64-bit draws to doubles explicitly, because the std:: distribution
/// classes are implementation-defined and would break cross-platform
/// reproducibility of seeded results.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng(std::uint64_t seed, const std::string &tag)
      : engine_(derive_seed(seed, tag)) {}

  /// Uniform double in [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).  n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    std::uint64_t threshold = (~n + 1) % n;  // = 2^64 mod n
    for (;;) {
      std::uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller (portable, unlike std::normal_distribution).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // Guard against log(0).
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Complex value with independent standard-normal real/imag parts.
  cplx complex_gaussian() {
    double re = gaussian();
    double im = gaussian();
    return cplx(re, im);
  }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mcnmf

#endif  // MCNMF_RNG_HPP_
