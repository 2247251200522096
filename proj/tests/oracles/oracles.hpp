#pragma once

// Independent reference computations used by the unit and acceptance tests.
// They are written as plain loops so they share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace claimcast::oracle {

// Smoothed probabilities (count + 1) / (length + 3) with base-10 logs.
inline double event_entropy(int dx, int px, int rx) {
  const int len = dx + px + rx;
  double sum = 0.0;
  for (int e : {dx, px, rx}) {
    const double p = (e + 1.0) / (len + 3.0);
    sum += p * std::log10(p);
  }
  return len * std::abs(sum);
}

inline double mape(std::span<const double> actual, std::span<const double> predicted) {
  double total = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] == 0.0) continue;
    total += std::abs(actual[i] - predicted[i]) / actual[i];
    ++used;
  }
  return 100.0 * total / used;
}

// Two-sided exact Wilcoxon signed-rank p-value by visiting all 2^n sign
// patterns of the midranks of the nonzero differences.
inline double wilcoxon_enumerated(std::span<const double> differences) {
  std::vector<double> d;
  for (double x : differences) {
    if (x != 0.0) d.push_back(x);
  }
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    int less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) ++less;
      if (std::abs(d[j]) == std::abs(d[i])) ++equal;
    }
    rank[i] = less + (equal + 1) / 2.0;
  }
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) observed += rank[i];
  }
  std::uint64_t lower = 0, upper = 0;
  const std::uint64_t patterns = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < patterns; ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1) w += rank[i];
    }
    if (w <= observed + 1e-9) ++lower;
    if (w >= observed - 1e-9) ++upper;
  }
  return std::min(1.0, 2.0 * static_cast<double>(std::min(lower, upper)) / static_cast<double>(patterns));
}

}  // namespace claimcast::oracle
