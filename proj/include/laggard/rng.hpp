#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace laggard {

// One random stream per chain. Wraps the standard engine so that every
// sampler draws through the same object in a fixed order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  // Open interval (0, 1); safe to take logs of.
  double uniform_pos() {
    double u = 0.0;
    while (u <= 0.0) u = uniform();
    return u;
  }

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }

  double exponential(double rate = 1.0) { return -std::log(uniform_pos()) / rate; }

  double gamma(double shape, double scale = 1.0) {
    return std::gamma_distribution<double>(shape, scale)(engine_);
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  std::vector<double> dirichlet(std::span<const double> alpha) {
    std::vector<double> out(alpha.size());
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      out[i] = gamma(alpha[i]);
      total += out[i];
    }
    if (!(total > 0.0)) {
      // All shapes tiny enough to underflow: fall back to a point mass.
      std::fill(out.begin(), out.end(), 0.0);
      out[uniform_index(out.size())] = 1.0;
      return out;
    }
    for (double& v : out) v /= total;
    return out;
  }

  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  // Draw an index with probability proportional to exp(log_weights).
  std::size_t categorical_log(std::span<const double> log_weights) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double w : log_weights) mx = std::max(mx, w);
    std::vector<double> p(log_weights.size());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::isfinite(log_weights[i]) ? std::exp(log_weights[i] - mx) : 0.0;
      total += p[i];
    }
    double u = uniform() * total;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (u < p[i]) return i;
      u -= p[i];
    }
    for (std::size_t i = p.size(); i-- > 0;)
      if (p[i] > 0.0) return i;
    return 0;
  }

  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (u < weights[i]) return i;
      u -= weights[i];
    }
    for (std::size_t i = weights.size(); i-- > 0;)
      if (weights[i] > 0.0) return i;
    return 0;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace laggard
