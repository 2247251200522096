#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

// Distribution helpers over std::mt19937_64. The engine output is fixed by the
// standard; the std:: distributions are not, so the few we need live here to
// keep generated files identical across standard libraries.
namespace claimcast {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based child seed: independent streams per (purpose, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ splitmix64(purpose)) + index);
}

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Uniform integer in [0, n).
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % (n ? n : 1);
}

inline double standard_normal(std::mt19937_64& rng) {
  // Box-Muller, one value per call.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline double lognormal(std::mt19937_64& rng, double mu, double sigma) {
  return std::exp(mu + sigma * standard_normal(rng));
}

inline int poisson(std::mt19937_64& rng, double mean) {
  if (mean <= 0.0) return 0;
  if (mean > 60.0) {
    return std::max(0, static_cast<int>(std::lround(mean + std::sqrt(mean) * standard_normal(rng))));
  }
  const double limit = std::exp(-mean);
  int k = 0;
  double p = uniform01(rng);
  while (p > limit) {
    ++k;
    p *= uniform01(rng);
  }
  return k;
}

inline bool bernoulli(std::mt19937_64& rng, double p) { return uniform01(rng) < p; }

template <typename T>
void shuffle_indices(std::span<T> values, std::mt19937_64& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::swap(values[i - 1], values[uniform_index(rng, i)]);
  }
}

template <typename T>
void shuffle_indices(std::vector<T>& values, std::mt19937_64& rng) {
  shuffle_indices(std::span<T>(values), rng);
}

}  // namespace claimcast
