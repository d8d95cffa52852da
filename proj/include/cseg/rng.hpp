/* Copyright 2026 The cascade-seg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Deterministic random utilities. std::mt19937_64 is specified exactly by the
// standard, but the std distributions are not, so every draw that must be
// reproducible across platforms goes through the helpers here instead of
// <random> distribution objects.

#ifndef CSEG_RNG_HPP_
#define CSEG_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace cseg {

// splitmix64 mixing step (Steele, Lea, Flood 2014). Used to derive
// well-separated child seeds from (root seed, index, tag).
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Child seed for stream `index` of purpose `tag` under a root seed.
// Distinct (index, tag) pairs give statistically independent streams.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index,
                                 std::uint64_t tag) {
  std::uint64_t s = root;
  std::uint64_t a = splitmix64(s);
  s ^= index * 0x9e3779b97f4a7c15ULL;
  std::uint64_t b = splitmix64(s);
  s ^= tag * 0xd1342543de82ef95ULL;
  std::uint64_t c = splitmix64(s);
  return a ^ (b << 1) ^ c;
}

// Uniform double in [0, 1) using the top 53 bits of one 64-bit draw.
inline double uniform_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection; unbiased and portable.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t threshold = (0ULL - n) % n;  // 2^64 mod n
  for (;;) {
    std::uint64_t x = rng();
    if (x >= threshold) return x % n;
  }
}

// Uniform double in [lo, hi).
inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_double(rng);
}

// Standard normal via Box-Muller. One value per call; the sine twin is
// discarded to keep the draw count predictable.
inline double gaussian(std::mt19937_64& rng) {
  double u1 = uniform_double(rng);
  double u2 = uniform_double(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

// In-place Fisher-Yates shuffle.
template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

// k distinct indices drawn uniformly from [0, n), in selection order.
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k,
                                               std::mt19937_64& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  if (k > n) k = n;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace cseg

#endif  // CSEG_RNG_HPP_
