#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace actrack {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for one tracking attempt: stream id = seed XOR attempt index.
inline Rng stream_rng(std::uint64_t seed, std::uint64_t attempt) { return Rng(splitmix64(seed ^ attempt)); }

// Uniform in [0, 1) with 53 random bits; identical across standard libraries.
template <typename G>
double uniform01(G& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller; avoids implementation-defined std::normal_distribution.
template <typename G>
double standard_normal(G& g) {
  double u1 = uniform01(g);
  while (u1 <= 0.0) u1 = uniform01(g);
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace actrack
