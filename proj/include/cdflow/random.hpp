#pragma once

// Seeded random streams. Every consumer derives its generator from the run
// seed plus a stream name and an index (step, sample, layer), so components
// can be reproduced in isolation and resumed mid-run.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace cdflow::rng {

using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline Engine stream(std::uint64_t seed, std::string_view name,
                     std::uint64_t index = 0) {
  const std::uint64_t s =
      splitmix64(splitmix64(seed ^ hash_name(name)) + index);
  std::seed_seq seq{static_cast<std::uint32_t>(s),
                    static_cast<std::uint32_t>(s >> 32)};
  return Engine(seq);
}

// Standard normal draw that does not depend on std::normal_distribution's
// cached second value, so a generator can be reconstructed mid-sequence.
inline double normal(Engine& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double u1 = u(g);
  while (u1 <= 0.0) u1 = u(g);
  const double u2 = u(g);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(6.283185307179586476925 * u2);
}

inline double uniform(Engine& g, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(g);
}

}  // namespace cdflow::rng
