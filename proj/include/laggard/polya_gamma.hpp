#pragma once

#include <cmath>
#include <numbers>

#include "laggard/rng.hpp"

namespace laggard {

namespace pg_detail {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kPi2 = kPi * kPi;
inline constexpr double kTwoOverPi = 2.0 / kPi;
inline constexpr double kLogPi = 1.1447298858494002;
inline constexpr double kLog2OverPi = -0.45158270528945486;

inline double log_norm_cdf(double x) { return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2)); }

// Mixture weight of the truncated-exponential proposal piece.
inline double ratio(double z) {
  const double t = kTwoOverPi;
  const double K = z * z / 2.0 + kPi2 / 8.0;
  const double logA = std::log(4.0) - kLogPi - z;
  const double logK = std::log(K);
  const double w = std::sqrt(kPi / 2.0);
  const double logf1 = logA + log_norm_cdf(w * (t * z - 1.0)) + logK + K * t;
  const double logf2 = logA + 2.0 * z + log_norm_cdf(-w * (t * z + 1.0)) + logK + K * t;
  return 1.0 / (1.0 + std::exp(logf1) + std::exp(logf2));
}

inline double aterm(int n, double x, double t) {
  const double k = n + 0.5;
  double f = 0.0;
  if (x <= t)
    f = kLogPi + std::log(k) + 1.5 * (kLog2OverPi - std::log(x)) - 2.0 * k * k / x;
  else
    f = kLogPi + std::log(k) - x * kPi2 / 2.0 * k * k;
  return std::exp(f);
}

inline double randinvg(double mu, Rng& rng) {
  const double u = rng.normal();
  const double V = u * u;
  double out = mu + 0.5 * mu * (mu * V - std::sqrt(4.0 * mu * V + mu * mu * V * V));
  if (rng.uniform() > mu / (mu + out)) out = mu * mu / out;
  return out;
}

inline double truncgamma(Rng& rng) {
  const double c = kPi / 2.0;
  while (true) {
    const double X = rng.exponential() * 2.0 + c;
    if (rng.uniform() <= std::sqrt(kPi / 2.0) / std::sqrt(X)) return X;
  }
}

inline double tinvgauss(double z, double t, Rng& rng) {
  const double mu = 1.0 / z;
  double X = 0.0;
  if (mu > t) {
    while (true) {
      const double u = rng.uniform_pos();
      X = 1.0 / truncgamma(rng);
      if (std::log(u) < -z * z * 0.5 * X) break;
    }
  } else {
    X = t + 1.0;
    while (X >= t) X = randinvg(mu, rng);
  }
  return X;
}

// Exact PG(1, 2z) draw by the alternating-series sampler.
inline double sample_j1(double z, double r, double K, Rng& rng) {
  const double t = kTwoOverPi;
  while (true) {
    double X = 0.0;
    if (rng.uniform() < r)
      X = t + rng.exponential() / K;
    else
      X = tinvgauss(z, t, rng);
    double S = aterm(0, X, t);
    const double U = rng.uniform() * S;
    int sign = -1;
    bool even = false;
    for (int n = 1;; ++n) {
      S += sign * aterm(n, X, t);
      if (!even && U <= S) return X * 0.25;
      if (even && U > S) break;
      even = !even;
      sign = -sign;
    }
  }
}

// Moment-matched normal for very large b.
inline double sample_normal_approx(double b, double c, Rng& rng) {
  double m = 0.0, v = 0.0;
  if (c > 1e-6) {
    m = b / (2.0 * c) * std::tanh(c / 2.0);
    v = b / (4.0 * c * c * c) * (std::sinh(c) - c) / (std::cosh(c / 2.0) * std::cosh(c / 2.0));
  } else {
    m = b / 4.0;
    v = b / 24.0;
  }
  const double x = rng.normal(m, std::sqrt(v));
  return x > 0.0 ? x : m;
}

// Truncated sum-of-gammas representation for 0 < b < 1, with the mean of the
// dropped tail added back.
inline double sample_sum_of_gammas(double b, double c, Rng& rng, int terms = 200) {
  const double c2 = c * c / (4.0 * kPi2);
  double total = 0.0;
  for (int k = 1; k <= terms; ++k) {
    const double d = (k - 0.5) * (k - 0.5) + c2;
    total += rng.gamma(b) / d;
  }
  double tail = 0.0;
  for (int k = terms + 1; k <= terms + 2000; ++k) tail += 1.0 / ((k - 0.5) * (k - 0.5) + c2);
  total += b * tail;
  return total / (2.0 * kPi2);
}

}  // namespace pg_detail

inline double polya_gamma_mean(double b, double c) {
  const double a = std::fabs(c);
  if (a < 1e-8) return b / 4.0;
  return b / (2.0 * a) * std::tanh(a / 2.0);
}

// One draw from PG(b, c), b > 0.
inline double sample_polya_gamma(double b, double c, Rng& rng) {
  const double z = std::fabs(c) * 0.5;
  if (b > 170.0) return pg_detail::sample_normal_approx(b, std::fabs(c), rng);
  const auto whole = static_cast<int>(std::floor(b));
  const double frac = b - whole;
  double out = 0.0;
  if (whole > 0) {
    const double r = pg_detail::ratio(z);
    const double K = z * z / 2.0 + pg_detail::kPi2 / 8.0;
    for (int j = 0; j < whole; ++j) out += pg_detail::sample_j1(z, r, K, rng);
  }
  if (frac > 1e-12) out += pg_detail::sample_sum_of_gammas(frac, c, rng);
  return out;
}

}  // namespace laggard
