// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include "ahnqs/core/linalg.hpp"

namespace ahnqs {

/// The single random engine type used throughout. All randomness is derived
/// from a user-supplied seed.
using Rng = std::mt19937_64;

/// Derives an independent stream from a base seed and a purpose tag, so that
/// e.g. the schedule shuffle and dropout masks do not share a sequence.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

/// Uniform in [0, 1) built from the raw 53 high bits, so results do not
/// depend on the standard library's distribution implementation.
inline double uniform01(Rng &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n), n > 0, by rejection sampling on 64 bits.
inline std::uint64_t uniform_index(Rng &rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Fisher-Yates with uniform_index, for a platform-stable permutation.
template <class It> void shuffle(It first, It last, Rng &rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

/// Glorot-uniform fill: U[-a, a] with a = sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Matrix &m, Rng &rng, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double &x : m.values())
    x = (2.0 * uniform01(rng) - 1.0) * a;
}

inline void uniform_fill(std::span<double> xs, Rng &rng, double a) {
  for (double &x : xs)
    x = (2.0 * uniform01(rng) - 1.0) * a;
}

} // namespace ahnqs
