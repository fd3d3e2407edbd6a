#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "laggard/error.hpp"
#include "laggard/model.hpp"
#include "laggard/stats.hpp"

namespace laggard {

struct Series {
  std::string name;
  std::vector<double> values;
};

struct AcceptanceSummary {
  std::string kind;
  double overall = 0.0;
  std::array<double, 3> by_move{};  // grow, prune, change; NaN when never proposed
  std::vector<double> rolling;      // trailing-window rate per post-burn iteration
};

struct Density {
  std::string name;
  double lower = 0.0;
  double width = 1.0;
  std::vector<double> density;
};

struct DiagnosticsReport {
  std::vector<Series> traces;
  std::vector<AcceptanceSummary> acceptance;
  std::vector<Series> tree_sizes;
  std::vector<Density> densities;
  bool accounting_ok = true;
};

struct DiagnosticSelection {
  std::vector<int> lags;             // 1-based lags of `exposure`
  std::vector<std::string> params;   // sigma2, cumulative, tau, snr, gamma, gamma:<name>
  std::size_t exposure = 0;
  int rolling_window = 100;

  bool empty() const { return lags.empty() && params.empty(); }
};

inline std::vector<int> default_trace_lags(int T) {
  std::vector<int> out;
  for (double f : {0.25, 0.5, 0.75}) {
    const int lag = std::clamp(static_cast<int>(std::lround(f * T)), 1, T);
    if (std::find(out.begin(), out.end(), lag) == out.end()) out.push_back(lag);
  }
  return out;
}

// Histogram density with Freedman-Diaconis bin width and at least 20 bins.
inline Density density_of(const std::string& name, std::span<const double> x) {
  constexpr int kMinBins = 20;
  constexpr int kMaxBins = 1000;
  Density d;
  d.name = name;
  if (x.empty()) return d;
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  double lo = s.front();
  double hi = s.back();
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double iqr = stats::quantile_sorted(s, 0.75) - stats::quantile_sorted(s, 0.25);
  const double fd = 2.0 * iqr / std::cbrt(static_cast<double>(s.size()));
  int bins = kMinBins;
  if (fd > 0.0) bins = std::clamp(static_cast<int>(std::ceil((hi - lo) / fd)), kMinBins, kMaxBins);
  d.lower = lo;
  d.width = (hi - lo) / bins;
  d.density.assign(static_cast<std::size_t>(bins), 0.0);
  for (double v : s) {
    const int b = std::clamp(static_cast<int>((v - lo) / d.width), 0, bins - 1);
    d.density[static_cast<std::size_t>(b)] += 1.0;
  }
  for (auto& c : d.density) c /= static_cast<double>(s.size()) * d.width;
  return d;
}

struct RHat {
  double value = 1.0;
  bool degenerate = false;  // zero within-chain variance
};

// Split-chain potential scale reduction factor.
inline RHat gelman_split_rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.empty()) throw UsageError("split R-hat needs at least one series");
  std::size_t n = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() < 4) throw UsageError("split R-hat needs series of length at least 4");
    n = std::min(n, c.size());
  }
  const std::size_t half = n / 2;
  std::vector<std::vector<double>> parts;
  for (const auto& c : chains) {
    parts.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    parts.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(n - half), c.begin() + static_cast<std::ptrdiff_t>(n));
  }
  const double m = static_cast<double>(parts.size());
  const double len = static_cast<double>(half);
  std::vector<double> means;
  double W = 0.0;
  for (const auto& p : parts) {
    means.push_back(stats::mean(p));
    W += stats::variance(p);
  }
  W /= m;
  const double B = len * stats::variance(means);
  RHat r;
  if (!(W > 0.0)) {
    r.degenerate = true;
    return r;
  }
  const double var_plus = (len - 1.0) / len * W + B / len;
  r.value = std::sqrt(var_plus / W);
  return r;
}

namespace detail {

inline std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index j) {
  return {m.col(j).data(), m.col(j).data() + m.rows()};
}

inline std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

inline std::vector<Series> trace_series(const PosteriorFit& fit, const DiagnosticSelection& sel) {
  if (sel.exposure >= fit.num_exposures()) throw UsageError("exposure index out of range");
  DiagnosticSelection use = sel;
  if (use.empty()) {
    use.lags = default_trace_lags(fit.lags());
    if (fit.spec.family == Family::gaussian) use.params.push_back("sigma2");
    use.params.push_back("cumulative");
  }
  const std::string& ename = fit.data.exposure_names[use.exposure];
  const Eigen::MatrixXd& theta = fit.theta[use.exposure];
  std::vector<Series> out;
  for (int lag : use.lags) {
    if (lag < 1 || lag > fit.lags()) throw UsageError("trace lag " + std::to_string(lag) + " is out of range");
    out.push_back({"theta[" + ename + "][" + std::to_string(lag) + "]", detail::column(theta, lag - 1)});
  }
  for (const auto& p : use.params) {
    if (p == "sigma2") {
      out.push_back({"sigma2", detail::vec(fit.sigma2)});
    } else if (p == "tau") {
      out.push_back({"tau", detail::vec(fit.tau)});
    } else if (p == "snr") {
      out.push_back({"snr", detail::vec(fit.snr)});
    } else if (p == "cumulative") {
      out.push_back({"cumulative[" + ename + "]", detail::vec(theta.rowwise().sum())});
    } else if (p == "gamma") {
      for (Eigen::Index j = 0; j < fit.gamma.cols(); ++j)
        out.push_back({"gamma[" + fit.data.design_names[j] + "]", detail::column(fit.gamma, j)});
    } else if (p.rfind("gamma:", 0) == 0) {
      const std::string name = p.substr(6);
      const auto it = std::find(fit.data.design_names.begin(), fit.data.design_names.end(), name);
      if (it == fit.data.design_names.end()) throw UsageError("unknown fixed effect '" + name + "'");
      out.push_back({"gamma[" + name + "]", detail::column(fit.gamma, it - fit.data.design_names.begin())});
    } else {
      throw UsageError("unknown diagnostic parameter '" + p + "'");
    }
  }
  return out;
}

inline DiagnosticsReport diagnose(const PosteriorFit& fit, const DiagnosticSelection& sel = {}) {
  if (sel.rolling_window < 1) throw UsageError("rolling window must be positive");
  DiagnosticsReport rep;
  rep.traces = trace_series(fit, sel);
  for (const auto& s : rep.traces) rep.densities.push_back(density_of(s.name, s.values));

  const Eigen::MatrixXd& log = fit.tree_log;
  const Eigen::Index iters = log.rows();
  using L = TreeLogLayout;
  for (int k = 0; k < L::kinds; ++k) {
    double proposed_total = 0.0;
    for (int mv = 0; mv < L::moves; ++mv) proposed_total += log.col(L::proposed(k, mv)).sum();
    const bool present = proposed_total > 0.0 || log.col(L::mean_size(k)).sum() > 0.0;
    for (Eigen::Index i = 0; i < iters; ++i)
      for (int mv = 0; mv < L::moves; ++mv)
        if (log(i, L::accepted(k, mv)) + log(i, L::rejected(k, mv)) != log(i, L::proposed(k, mv)))
          rep.accounting_ok = false;
    if (!present) continue;
    AcceptanceSummary a;
    a.kind = kStructureNames[static_cast<std::size_t>(k)];
    double acc_total = 0.0;
    for (int mv = 0; mv < L::moves; ++mv) {
      const double p = log.col(L::proposed(k, mv)).sum();
      const double acc = log.col(L::accepted(k, mv)).sum();
      acc_total += acc;
      a.by_move[static_cast<std::size_t>(mv)] = p > 0.0 ? acc / p : std::nan("");
    }
    a.overall = proposed_total > 0.0 ? acc_total / proposed_total : 0.0;
    std::vector<double> prop(static_cast<std::size_t>(iters), 0.0);
    std::vector<double> acc(static_cast<std::size_t>(iters), 0.0);
    for (Eigen::Index i = 0; i < iters; ++i)
      for (int mv = 0; mv < L::moves; ++mv) {
        prop[static_cast<std::size_t>(i)] += log(i, L::proposed(k, mv));
        acc[static_cast<std::size_t>(i)] += log(i, L::accepted(k, mv));
      }
    double wp = 0.0;
    double wa = 0.0;
    const auto w = static_cast<std::size_t>(sel.rolling_window);
    for (std::size_t i = 0; i < prop.size(); ++i) {
      wp += prop[i];
      wa += acc[i];
      if (i >= w) {
        wp -= prop[i - w];
        wa -= acc[i - w];
      }
      a.rolling.push_back(wp > 0.0 ? wa / wp : 0.0);
    }
    rep.acceptance.push_back(std::move(a));
    rep.tree_sizes.push_back({kStructureNames[static_cast<std::size_t>(k)], detail::column(log, L::mean_size(k))});
  }
  return rep;
}

struct RHatRow {
  std::string name;
  RHat rhat;
};

// Split R-hat of every trace shared by all reports (matched by name).
inline std::vector<RHatRow> rhat_table(const std::vector<DiagnosticsReport>& reports) {
  std::vector<RHatRow> out;
  if (reports.empty()) return out;
  for (const auto& s : reports.front().traces) {
    std::vector<std::vector<double>> chains;
    for (const auto& r : reports) {
      const auto it = std::find_if(r.traces.begin(), r.traces.end(), [&](const Series& x) { return x.name == s.name; });
      if (it != r.traces.end()) chains.push_back(it->values);
    }
    if (chains.size() != reports.size()) continue;
    out.push_back({s.name, gelman_split_rhat(chains)});
  }
  return out;
}

}  // namespace laggard
