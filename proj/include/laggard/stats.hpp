#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace laggard::stats {

// Quantile of already sorted data, linear interpolation between order
// statistics (the "type 7" rule). Used for every quantile in the project.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  if (sorted.size() == 1) return sorted[0];
  p = std::clamp(p, 0.0, 1.0);
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, p);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

inline double sd(std::span<const double> v) { return std::sqrt(variance(v)); }

// Monte Carlo standard error of the mean by non-overlapping batch means
// (floor(sqrt(n)) batches).
inline double batch_means_se(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n < 4) return sd(v) / std::sqrt(static_cast<double>(std::max<std::size_t>(n, 1)));
  const auto batches = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const std::size_t len = n / batches;
  std::vector<double> bm(batches);
  for (std::size_t b = 0; b < batches; ++b)
    bm[b] = mean(v.subspan(b * len, len));
  return sd(bm) / std::sqrt(static_cast<double>(batches));
}

struct Interval {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// Posterior mean with an equal-tailed interval at the given level; the
// interval always contains the mean.
inline Interval summarize_draws(std::span<const double> draws, double conf_level) {
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  Interval out;
  out.mean = mean(draws);
  out.lower = quantile_sorted(sorted, (1.0 - conf_level) / 2.0);
  out.upper = quantile_sorted(sorted, (1.0 + conf_level) / 2.0);
  // Summation rounding can put the mean of near-constant draws just outside
  // the quantiles.
  out.lower = std::min(out.lower, out.mean);
  out.upper = std::max(out.upper, out.mean);
  return out;
}

inline bool excludes_zero(double lower, double upper) { return lower > 0.0 || upper < 0.0; }

}  // namespace laggard::stats
