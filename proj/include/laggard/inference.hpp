#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "laggard/data_model.hpp"
#include "laggard/error.hpp"
#include "laggard/model.hpp"
#include "laggard/stats.hpp"
#include "laggard/table.hpp"

namespace laggard {

// --- lag tables and windows -------------------------------------------------

struct LagRun {
  int lo = 1;
  int hi = 1;
  bool operator==(const LagRun&) const = default;
};

// Maximal runs of consecutive lags (1-based) whose interval excludes zero.
inline std::vector<LagRun> critical_windows(std::span<const double> lower, std::span<const double> upper) {
  if (lower.size() != upper.size()) throw std::invalid_argument("interval bounds differ in length");
  std::vector<LagRun> out;
  for (std::size_t t = 0; t < lower.size(); ++t) {
    if (!stats::excludes_zero(lower[t], upper[t])) continue;
    const int lag = static_cast<int>(t) + 1;
    if (!out.empty() && out.back().hi == lag - 1)
      out.back().hi = lag;
    else
      out.push_back({lag, lag});
  }
  return out;
}

inline std::string render_windows(const std::vector<LagRun>& runs) {
  std::string s;
  for (const auto& r : runs) {
    if (!s.empty()) s += ",";
    s += std::to_string(r.lo);
    if (r.hi != r.lo) s += "-" + std::to_string(r.hi);
  }
  return s;
}

struct LagTable {
  std::vector<double> mean;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<bool> critical;

  std::size_t size() const { return mean.size(); }
};

// Column-wise summary of a draws x T matrix.
inline LagTable summarize_lags(const Eigen::MatrixXd& draws, double conf_level) {
  LagTable out;
  std::vector<double> col(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index t = 0; t < draws.cols(); ++t) {
    for (Eigen::Index r = 0; r < draws.rows(); ++r) col[static_cast<std::size_t>(r)] = draws(r, t);
    const auto iv = stats::summarize_draws(col, conf_level);
    out.mean.push_back(iv.mean);
    out.lower.push_back(iv.lower);
    out.upper.push_back(iv.upper);
    out.critical.push_back(stats::excludes_zero(iv.lower, iv.upper));
  }
  return out;
}

inline stats::Interval cumulative_effect(const Eigen::MatrixXd& draws, double conf_level = 0.95) {
  if (draws.rows() == 0) throw std::invalid_argument("cumulative effect of empty draws");
  std::vector<double> sums(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index r = 0; r < draws.rows(); ++r) sums[static_cast<std::size_t>(r)] = draws.row(r).sum();
  return stats::summarize_draws(sums, conf_level);
}

struct CurveSummary {
  LagTable table;
  stats::Interval cumulative;
  std::vector<LagRun> windows;
};

inline CurveSummary summarize_curve(const Eigen::MatrixXd& draws, double conf_level) {
  CurveSummary c;
  c.table = summarize_lags(draws, conf_level);
  c.cumulative = cumulative_effect(draws, conf_level);
  c.windows = critical_windows(c.table.lower, c.table.upper);
  return c;
}

inline void check_conf_level(double conf_level) {
  if (!(conf_level > 0.0 && conf_level < 1.0)) throw UsageError("confidence level must lie in (0, 1)");
}

// --- co-exposure marginalization -------------------------------------------

struct MarginalizePolicy {
  enum class Kind { mean, percentile, levels };
  Kind kind = Kind::mean;
  double q = 50.0;
  bool pooled = false;
  std::vector<double> levels;

  static MarginalizePolicy mean() { return {}; }
  static MarginalizePolicy percentile(double q, bool pooled = false) {
    if (!(q >= 0.0 && q <= 100.0)) throw UsageError("percentile must lie in [0, 100]");
    MarginalizePolicy p;
    p.kind = Kind::percentile;
    p.q = q;
    p.pooled = pooled;
    return p;
  }
  static MarginalizePolicy at_levels(std::vector<double> v) {
    MarginalizePolicy p;
    p.kind = Kind::levels;
    p.levels = std::move(v);
    return p;
  }

  std::string describe() const {
    switch (kind) {
      case Kind::mean: return "mean";
      case Kind::percentile: return "q" + format_number(q) + (pooled ? ":pooled" : "");
      case Kind::levels: {
        std::string s = "levels=";
        for (std::size_t i = 0; i < levels.size(); ++i) s += (i ? "," : "") + format_number(levels[i]);
        return s;
      }
    }
    return "mean";
  }
};

// Accepts "mean", "qNN", "qNN:pooled", a bare number NN, or "levels=v1,v2,...".
inline MarginalizePolicy parse_marginalize(const std::string& text) {
  if (text.empty() || text == "mean") return MarginalizePolicy::mean();
  if (text.rfind("levels=", 0) == 0) {
    std::vector<double> v;
    for (const auto& cell : detail::split_record(text.substr(7), ',')) {
      double x = 0.0;
      if (!parse_number(detail::trim(cell), x)) throw UsageError("bad level '" + cell + "' in --marginalize");
      v.push_back(x);
    }
    return MarginalizePolicy::at_levels(std::move(v));
  }
  std::string body = text;
  bool pooled = false;
  if (const auto colon = body.find(':'); colon != std::string::npos) {
    if (body.substr(colon + 1) != "pooled") throw UsageError("unknown marginalize option '" + text + "'");
    pooled = true;
    body = body.substr(0, colon);
  }
  if (!body.empty() && (body[0] == 'q' || body[0] == 'p')) body = body.substr(1);
  double q = 0.0;
  if (!parse_number(body, q)) throw UsageError("unknown marginalize option '" + text + "'");
  return MarginalizePolicy::percentile(q, pooled);
}

// Pooled empirical mean of every exposure in model units.
inline std::vector<double> empirical_means(const PosteriorFit& fit) {
  std::vector<double> out;
  for (const auto& x : fit.exposures) out.push_back(x.mean());
  return out;
}

// Co-exposure level of every exposure at every lag (M x T) under a policy.
inline Eigen::MatrixXd coexposure_levels(const PosteriorFit& fit, const MarginalizePolicy& policy) {
  const auto M = static_cast<Eigen::Index>(fit.num_exposures());
  const int T = fit.lags();
  Eigen::MatrixXd lev(M, T);
  switch (policy.kind) {
    case MarginalizePolicy::Kind::mean: {
      const auto means = empirical_means(fit);
      for (Eigen::Index m = 0; m < M; ++m) lev.row(m).setConstant(means[static_cast<std::size_t>(m)]);
      break;
    }
    case MarginalizePolicy::Kind::percentile: {
      for (Eigen::Index m = 0; m < M; ++m) {
        const auto& x = fit.exposures[static_cast<std::size_t>(m)];
        if (policy.pooled) {
          std::vector<double> all(x.data(), x.data() + x.size());
          lev.row(m).setConstant(stats::quantile(std::move(all), policy.q / 100.0));
        } else {
          for (int t = 0; t < T; ++t) {
            std::vector<double> col(static_cast<std::size_t>(x.rows()));
            for (Eigen::Index i = 0; i < x.rows(); ++i) col[static_cast<std::size_t>(i)] = x(i, t);
            lev(m, t) = stats::quantile(std::move(col), policy.q / 100.0);
          }
        }
      }
      break;
    }
    case MarginalizePolicy::Kind::levels: {
      if (policy.levels.size() != static_cast<std::size_t>(M)) {
        std::string order;
        for (const auto& n : fit.data.exposure_names) order += (order.empty() ? "" : ", ") + n;
        throw UsageError("marginalize levels need " + std::to_string(M) + " values in exposure order (" + order +
                         "), got " + std::to_string(policy.levels.size()));
      }
      for (Eigen::Index m = 0; m < M; ++m) lev.row(m).setConstant(policy.levels[static_cast<std::size_t>(m)]);
      break;
    }
  }
  return lev;
}

namespace detail {

inline Eigen::VectorXd interval_sums(const DlmTree& tree, const Eigen::VectorXd& prefix) {
  const auto term = tree.terminals();
  Eigen::VectorXd s(static_cast<Eigen::Index>(term.size()));
  for (std::size_t k = 0; k < term.size(); ++k) {
    const auto& nd = tree.node(term[k]);
    s[static_cast<Eigen::Index>(k)] = prefix[nd.hi] - prefix[nd.lo - 1];
  }
  return s;
}

inline void add_cells(Eigen::MatrixXd& m, Eigen::Index row, const DlmTree& tree, const Eigen::VectorXd& values) {
  const auto term = tree.terminals();
  for (std::size_t k = 0; k < term.size(); ++k) {
    const auto& nd = tree.node(term[k]);
    m.row(row).segment(nd.lo - 1, nd.length()).array() += values[static_cast<Eigen::Index>(k)];
  }
}

inline void require_plain_mixture(const PosteriorFit& fit) {
  if (!fit.spec.mixture) throw UsageError("marginalization requires a mixture fit");
  if (fit.spec.het) throw UsageError("marginalization is not defined for heterogeneous fits");
}

}  // namespace detail

// Marginal lag effects of every exposure: main effect plus the interaction
// gradient with co-exposures held at the policy levels.
inline std::vector<Eigen::MatrixXd> marginal_effects(const PosteriorFit& fit, const MarginalizePolicy& policy) {
  detail::require_plain_mixture(fit);
  const Eigen::MatrixXd lev = coexposure_levels(fit, policy);
  std::vector<Eigen::MatrixXd> out = fit.theta;
  if (!fit.spec.interactions()) return out;
  const int T = fit.lags();
  std::vector<Eigen::VectorXd> prefix(fit.num_exposures(), Eigen::VectorXd::Zero(T + 1));
  for (std::size_t m = 0; m < prefix.size(); ++m)
    for (int t = 1; t <= T; ++t) prefix[m][t] = prefix[m][t - 1] + lev(static_cast<Eigen::Index>(m), t - 1);
  for (std::size_t r = 0; r < fit.retained(); ++r) {
    const auto ens = fit.record(r);
    const auto row = static_cast<Eigen::Index>(r);
    for (const auto& u : ens) {
      if (!u.interactions || !u.paired()) continue;
      const auto& leaf = u.leaves.front();
      const Eigen::VectorXd s1 = detail::interval_sums(leaf.tree1, prefix[u.exposure1]);
      const Eigen::VectorXd s2 = detail::interval_sums(leaf.tree2, prefix[u.exposure2]);
      const Eigen::VectorXd g1 = leaf.omega * s2;
      const Eigen::VectorXd g2 = leaf.omega.transpose() * s1;
      detail::add_cells(out[u.exposure1], row, leaf.tree1, g1);
      detail::add_cells(out[u.exposure2], row, leaf.tree2, g2);
    }
  }
  return out;
}

inline Eigen::MatrixXd marginal_effect(const PosteriorFit& fit, std::size_t exposure, const MarginalizePolicy& policy) {
  if (exposure >= fit.num_exposures()) throw UsageError("exposure index out of range");
  return marginal_effects(fit, policy)[exposure];
}

// Per-exposure lag-effect draws used for summaries: marginal effects for
// plain mixtures, recorded main effects otherwise.
inline std::vector<Eigen::MatrixXd> effect_draws(const PosteriorFit& fit, const MarginalizePolicy& policy) {
  if (fit.spec.mixture && !fit.spec.het) return marginal_effects(fit, policy);
  return fit.theta;
}

// --- interaction surfaces ---------------------------------------------------

struct ExposurePair {
  int first = 0;
  int second = 0;
};

inline std::vector<ExposurePair> interaction_pairs(const PosteriorFit& fit) {
  std::vector<ExposurePair> out;
  if (!fit.spec.interactions()) return out;
  const int M = static_cast<int>(fit.num_exposures());
  for (int a = 0; a < M; ++a)
    for (int b = a; b < M; ++b)
      if (a != b || fit.spec.interaction == InteractionMode::all) out.push_back({a, b});
  return out;
}

// Interaction surface draws for one exposure pair: retained x (T * T), cell
// (t1, t2) stored at t1 * T + t2 with t1 a lag of `first`. Self surfaces are
// symmetrized.
inline Eigen::MatrixXd interaction_draws(const PosteriorFit& fit, ExposurePair pair) {
  const int T = fit.lags();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(fit.retained()), T * T);
  if (!fit.spec.interactions() || fit.spec.het) return out;
  Eigen::MatrixXd grid(T, T);
  for (std::size_t r = 0; r < fit.retained(); ++r) {
    grid.setZero();
    for (const auto& u : fit.record(r)) {
      if (!u.interactions || !u.paired()) continue;
      const bool forward = u.exposure1 == pair.first && u.exposure2 == pair.second;
      const bool backward = u.exposure1 == pair.second && u.exposure2 == pair.first;
      if (!forward && !backward) continue;
      const auto pe = pair_effects(u.leaves.front(), T);
      if (pair.first == pair.second)
        grid += 0.5 * (pe.interaction + pe.interaction.transpose());
      else if (forward)
        grid += pe.interaction;
      else
        grid += pe.interaction.transpose();
    }
    for (int a = 0; a < T; ++a)
      for (int b = 0; b < T; ++b) out(static_cast<Eigen::Index>(r), a * T + b) = grid(a, b);
  }
  return out;
}

struct InteractionRow {
  int lag1 = 1;
  std::vector<LagRun> runs;
};

struct InteractionSummary {
  std::string exposure1;
  std::string exposure2;
  double relative_size = 0.0;
  double mean_abs = 0.0;
  Eigen::MatrixXd mean;
  Eigen::MatrixXd lower;
  Eigen::MatrixXd upper;
  std::vector<InteractionRow> rows;
  std::size_t significant_cells = 0;
  std::size_t cells = 0;
};

inline std::vector<InteractionSummary> summarize_interactions(const PosteriorFit& fit, double conf_level) {
  std::vector<InteractionSummary> out;
  const int T = fit.lags();
  for (const auto& p : interaction_pairs(fit)) {
    const Eigen::MatrixXd d = interaction_draws(fit, p);
    InteractionSummary s;
    s.exposure1 = fit.data.exposure_names[p.first];
    s.exposure2 = fit.data.exposure_names[p.second];
    s.mean_abs = d.rows() ? d.cwiseAbs().rowwise().sum().mean() : 0.0;
    const LagTable cells = summarize_lags(d, conf_level);
    s.mean.resize(T, T);
    s.lower.resize(T, T);
    s.upper.resize(T, T);
    for (int a = 0; a < T; ++a)
      for (int b = 0; b < T; ++b) {
        const auto k = static_cast<std::size_t>(a * T + b);
        s.mean(a, b) = cells.mean[k];
        s.lower(a, b) = cells.lower[k];
        s.upper(a, b) = cells.upper[k];
        if (cells.critical[k]) ++s.significant_cells;
      }
    s.cells = static_cast<std::size_t>(T) * static_cast<std::size_t>(T);
    for (int a = 0; a < T; ++a) {
      std::vector<double> lw(static_cast<std::size_t>(T)), up(static_cast<std::size_t>(T));
      for (int b = 0; b < T; ++b) {
        lw[static_cast<std::size_t>(b)] = s.lower(a, b);
        up[static_cast<std::size_t>(b)] = s.upper(a, b);
      }
      auto runs = critical_windows(lw, up);
      if (!runs.empty()) s.rows.push_back({a + 1, std::move(runs)});
    }
    out.push_back(std::move(s));
  }
  double top = 0.0;
  for (const auto& s : out) top = std::max(top, s.mean_abs);
  for (auto& s : out) s.relative_size = top > 0.0 ? s.mean_abs / top : 0.0;
  return out;
}

// --- exposure selection -----------------------------------------------------

struct ExposureSelection {
  std::string name;
  double posterior_inclusion = 1.0;
  double prior_inclusion = 1.0;
  double bayes_factor = std::numeric_limits<double>::infinity();
  bool selected = true;
  double relative_size = 1.0;
};

// Prior probability that an exposure occupies none of `slots` assignment
// slots under a symmetric Dirichlet(kappa / M) selection prior.
inline double prior_exclusion(int M, double kappa, int slots) {
  const double a = kappa / M;
  const double n = slots;
  return std::exp(std::lgamma(M * a) + std::lgamma((M - 1) * a + n) - std::lgamma((M - 1) * a) -
                  std::lgamma(M * a + n));
}

inline std::vector<double> relative_sizes(const std::vector<Eigen::MatrixXd>& draws) {
  std::vector<double> size;
  for (const auto& d : draws) size.push_back(d.rows() ? d.cwiseAbs().rowwise().sum().mean() : 0.0);
  const double top = size.empty() ? 0.0 : *std::max_element(size.begin(), size.end());
  for (auto& s : size) s = top > 0.0 ? s / top : 0.0;
  return size;
}

inline std::vector<ExposureSelection> exposure_selection(const PosteriorFit& fit, double bf_threshold,
                                                         const std::vector<Eigen::MatrixXd>& effects) {
  const int M = static_cast<int>(fit.num_exposures());
  const auto rel = relative_sizes(effects);
  std::vector<ExposureSelection> out(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    out[m].name = fit.data.exposure_names[m];
    out[m].relative_size = rel[m];
  }
  if (M == 1 || !fit.spec.mixture) return out;
  const double R = static_cast<double>(fit.retained());
  const int slots = 2 * fit.spec.tree_prior.num_trees;
  const double prior_in = 1.0 - prior_exclusion(M, fit.spec.kappa, slots);
  for (int m = 0; m < M; ++m) {
    double hits = 0.0;
    for (Eigen::Index r = 0; r < fit.selection_counts.rows(); ++r) hits += fit.selection_counts(r, m) > 0.0 ? 1.0 : 0.0;
    const double raw = R > 0 ? hits / R : 0.0;
    const double pi = std::clamp(raw, 1.0 / (2.0 * R), 1.0 - 1.0 / (2.0 * R));
    auto& e = out[m];
    e.posterior_inclusion = raw;
    e.prior_inclusion = prior_in;
    e.bayes_factor = (pi / (1.0 - pi)) / (prior_in / (1.0 - prior_in));
    e.selected = raw > 0.0 && e.bayes_factor >= bf_threshold;
  }
  return out;
}

inline std::vector<ExposureSelection> exposure_selection(const PosteriorFit& fit, double bf_threshold = 0.5,
                                                         const MarginalizePolicy& policy = {}) {
  return exposure_selection(fit, bf_threshold, effect_draws(fit, policy));
}

// --- heterogeneity ----------------------------------------------------------

inline std::vector<std::pair<std::string, double>> modifier_pip(const PosteriorFit& fit) {
  if (!fit.spec.het) throw UsageError("inclusion probabilities need a heterogeneous fit");
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t j = 0; j < fit.spec.modifiers.size(); ++j) {
    const auto col = fit.modifier_usage.col(static_cast<Eigen::Index>(j));
    out.emplace_back(fit.spec.modifiers[j].name, col.size() ? col.mean() : 0.0);
  }
  return out;
}

struct SplitPoint {
  double threshold = 0.0;           // continuous
  std::vector<std::string> levels;  // categorical: levels sent left
  double count = 0.0;
  double proportion = 0.0;
};

// How often each candidate split of one modifier is used across all
// modifier trees of all retained draws.
inline std::vector<SplitPoint> split_proportions(const PosteriorFit& fit, const std::string& modifier) {
  if (!fit.spec.het) throw UsageError("split points need a heterogeneous fit");
  const auto& defs = fit.spec.modifiers;
  const auto it = std::find_if(defs.begin(), defs.end(), [&](const ModifierDef& d) { return d.name == modifier; });
  if (it == defs.end()) throw UsageError("unknown modifier '" + modifier + "'");
  const auto& def = *it;
  const int var = static_cast<int>(it - defs.begin());
  std::vector<SplitPoint> out(def.num_candidates());
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (def.kind == ModifierKind::continuous) {
      out[k].threshold = def.thresholds[k];
    } else {
      for (std::size_t l = 0; l < def.levels.size(); ++l)
        if ((def.subsets[k] >> l) & 1ULL) out[k].levels.push_back(def.levels[l]);
    }
  }
  double total = 0.0;
  for (std::size_t r = 0; r < fit.retained(); ++r)
    for (const auto& u : fit.record(r))
      for (const auto& nd : u.mod.nodes()) {
        if (nd.terminal() || nd.var != var) continue;
        for (std::size_t k = 0; k < out.size(); ++k) {
          const bool match = def.kind == ModifierKind::continuous ? def.thresholds[k] == nd.threshold
                                                                  : def.subsets[k] == nd.subset;
          if (match) {
            out[k].count += 1.0;
            total += 1.0;
            break;
          }
        }
      }
  for (auto& sp : out) sp.proportion = total > 0.0 ? sp.count / total : 0.0;
  return out;
}

using ModifierValue = std::variant<double, std::string>;

// One row of modifier values in model encoding (level index for categorical).
inline std::vector<double> modifier_row(const PosteriorFit& fit, const std::map<std::string, ModifierValue>& values) {
  std::vector<double> row;
  for (const auto& col : fit.modifier_columns) {
    const auto it = values.find(col.name);
    if (it == values.end()) throw DataError("missing modifier '" + col.name + "'");
    if (col.kind == ModifierKind::continuous) {
      double v = 0.0;
      if (const auto* d = std::get_if<double>(&it->second))
        v = *d;
      else if (!parse_number(std::get<std::string>(it->second), v))
        throw DataError("modifier '" + col.name + "' needs a number");
      if (!std::isfinite(v)) throw DataError("modifier '" + col.name + "' is not finite");
      row.push_back(v);
    } else {
      std::string level;
      if (const auto* s = std::get_if<std::string>(&it->second))
        level = *s;
      else
        level = format_number(std::get<double>(it->second));
      const int idx = col.level_index(level);
      if (idx < 0) throw DataError("unknown level '" + level + "' of modifier '" + col.name + "'");
      row.push_back(idx);
    }
  }
  return row;
}

namespace detail {

inline void require_het(const PosteriorFit& fit) {
  if (!fit.spec.het) throw UsageError("heterogeneous effects need a heterogeneous fit");
}

// Lag curve of one leaf payload added into per-exposure rows.
inline void add_leaf(const UnitRecord& u, std::size_t leaf, std::vector<Eigen::MatrixXd>& out, Eigen::Index r,
                     double w) {
  const auto& pl = u.leaves[leaf];
  for (int i : pl.tree1.terminals()) {
    const auto& nd = pl.tree1.node(i);
    out[u.exposure1].row(r).segment(nd.lo - 1, nd.length()).array() += w * nd.effect;
  }
  if (u.paired())
    for (int i : pl.tree2.terminals()) {
      const auto& nd = pl.tree2.node(i);
      out[u.exposure2].row(r).segment(nd.lo - 1, nd.length()).array() += w * nd.effect;
    }
}

}  // namespace detail

inline std::vector<Eigen::MatrixXd> individualized_draws(const PosteriorFit& fit, std::span<const double> row) {
  detail::require_het(fit);
  const auto R = static_cast<Eigen::Index>(fit.retained());
  std::vector<Eigen::MatrixXd> out(fit.num_exposures(), Eigen::MatrixXd::Zero(R, fit.lags()));
  for (Eigen::Index r = 0; r < R; ++r)
    for (const auto& u : fit.record(static_cast<std::size_t>(r)))
      detail::add_leaf(u, static_cast<std::size_t>(u.mod.assign(row, fit.spec.modifiers)), out, r, 1.0);
  return out;
}

inline std::vector<CurveSummary> individualized_effect(const PosteriorFit& fit, std::span<const double> row,
                                                       double conf_level = 0.95) {
  check_conf_level(conf_level);
  std::vector<CurveSummary> out;
  for (const auto& d : individualized_draws(fit, row)) out.push_back(summarize_curve(d, conf_level));
  return out;
}

// Draws of group-averaged individualized effects for a row-to-group map
// (group < 0 leaves the row out). Result: group -> exposure -> draws x T.
inline std::vector<std::vector<Eigen::MatrixXd>> group_average_draws(const PosteriorFit& fit,
                                                                     const std::vector<int>& group, int groups) {
  detail::require_het(fit);
  const auto R = static_cast<Eigen::Index>(fit.retained());
  std::vector<double> size(static_cast<std::size_t>(groups), 0.0);
  for (int g : group)
    if (g >= 0) size[static_cast<std::size_t>(g)] += 1.0;
  std::vector<std::vector<Eigen::MatrixXd>> out(
      static_cast<std::size_t>(groups),
      std::vector<Eigen::MatrixXd>(fit.num_exposures(), Eigen::MatrixXd::Zero(R, fit.lags())));
  for (Eigen::Index r = 0; r < R; ++r) {
    for (const auto& u : fit.record(static_cast<std::size_t>(r))) {
      const auto leaf = u.mod.assign_all(fit.modifier_columns, fit.spec.modifiers);
      const auto L = u.leaves.size();
      std::vector<double> count(static_cast<std::size_t>(groups) * L, 0.0);
      for (std::size_t i = 0; i < group.size(); ++i)
        if (group[i] >= 0) count[static_cast<std::size_t>(group[i]) * L + static_cast<std::size_t>(leaf[i])] += 1.0;
      for (int g = 0; g < groups; ++g) {
        if (size[g] == 0.0) continue;
        for (std::size_t l = 0; l < L; ++l) {
          const double c = count[static_cast<std::size_t>(g) * L + l];
          if (c > 0.0) detail::add_leaf(u, l, out[g], r, c / size[g]);
        }
      }
    }
  }
  return out;
}

// Average individualized effect over all rows.
inline std::vector<Eigen::MatrixXd> population_draws(const PosteriorFit& fit) {
  const std::size_t n = fit.modifier_columns.empty() ? 0 : fit.modifier_columns.front().values.size();
  return group_average_draws(fit, std::vector<int>(n, 0), 1).front();
}

struct GroupBy {
  std::string modifier;
  std::vector<double> cuts;         // continuous bins; empty means terciles
  std::vector<std::string> levels;  // categorical levels to keep; empty means all
};

struct Subgroup {
  std::string label;
  std::vector<std::string> parts;
  std::size_t size = 0;
  std::vector<CurveSummary> curves;  // per exposure, empty when the subgroup has no rows

  bool empty() const { return size == 0; }
};

namespace detail {

struct GroupAxis {
  std::vector<std::string> labels;
  std::vector<int> of_row;
};

inline GroupAxis group_axis(const PosteriorFit& fit, const GroupBy& g) {
  const auto it = std::find_if(fit.modifier_columns.begin(), fit.modifier_columns.end(),
                               [&](const ModifierColumn& c) { return c.name == g.modifier; });
  if (it == fit.modifier_columns.end()) throw UsageError("unknown modifier '" + g.modifier + "'");
  const auto& col = *it;
  GroupAxis ax;
  ax.of_row.assign(col.values.size(), -1);
  if (col.kind == ModifierKind::categorical) {
    std::vector<int> keep;
    if (g.levels.empty()) {
      for (std::size_t k = 0; k < col.levels.size(); ++k) keep.push_back(static_cast<int>(k));
    } else {
      for (const auto& lv : g.levels) {
        const int k = col.level_index(lv);
        if (k < 0) throw UsageError("unknown level '" + lv + "' of modifier '" + col.name + "'");
        keep.push_back(k);
      }
    }
    for (std::size_t a = 0; a < keep.size(); ++a) ax.labels.push_back(col.name + "=" + col.levels[keep[a]]);
    for (std::size_t i = 0; i < col.values.size(); ++i) {
      const auto pos = std::find(keep.begin(), keep.end(), static_cast<int>(col.values[i]));
      if (pos != keep.end()) ax.of_row[i] = static_cast<int>(pos - keep.begin());
    }
    return ax;
  }
  std::vector<double> cuts = g.cuts;
  if (cuts.empty()) cuts = {stats::quantile(col.values, 1.0 / 3.0), stats::quantile(col.values, 2.0 / 3.0)};
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  for (std::size_t k = 0; k <= cuts.size(); ++k) {
    if (k == 0)
      ax.labels.push_back(col.name + "<=" + format_number(cuts[0]));
    else if (k == cuts.size())
      ax.labels.push_back(col.name + ">" + format_number(cuts.back()));
    else
      ax.labels.push_back(format_number(cuts[k - 1]) + "<" + col.name + "<=" + format_number(cuts[k]));
  }
  for (std::size_t i = 0; i < col.values.size(); ++i)
    ax.of_row[i] = static_cast<int>(std::lower_bound(cuts.begin(), cuts.end(), col.values[i]) - cuts.begin());
  return ax;
}

}  // namespace detail

inline std::vector<Subgroup> subgroup_effect(const PosteriorFit& fit, std::span<const GroupBy> group_by,
                                             double conf_level = 0.95) {
  detail::require_het(fit);
  check_conf_level(conf_level);
  if (group_by.empty() || group_by.size() > 2) throw UsageError("subgroups need one or two modifiers");
  if (group_by.size() == 2 && group_by[0].modifier == group_by[1].modifier)
    throw UsageError("subgroup modifiers must differ");
  std::vector<detail::GroupAxis> axes;
  for (const auto& g : group_by) axes.push_back(detail::group_axis(fit, g));
  const int inner = axes.size() == 2 ? static_cast<int>(axes[1].labels.size()) : 1;
  const int groups = static_cast<int>(axes[0].labels.size()) * inner;
  const std::size_t n = axes[0].of_row.size();
  std::vector<int> group(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const int a = axes[0].of_row[i];
    const int b = axes.size() == 2 ? axes[1].of_row[i] : 0;
    if (a >= 0 && b >= 0) group[i] = a * inner + b;
  }
  const auto draws = group_average_draws(fit, group, groups);
  std::vector<Subgroup> out(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    auto& s = out[g];
    s.parts.push_back(axes[0].labels[g / inner]);
    if (axes.size() == 2) s.parts.push_back(axes[1].labels[g % inner]);
    s.label = s.parts.size() == 2 ? s.parts[0] + ", " + s.parts[1] : s.parts[0];
    s.size = static_cast<std::size_t>(std::count(group.begin(), group.end(), g));
    if (s.size > 0)
      for (const auto& d : draws[g]) s.curves.push_back(summarize_curve(d, conf_level));
  }
  return out;
}

// --- co-exposure adjusted contrasts ----------------------------------------

struct Contrast {
  bool percentiles = true;
  double low = 0.25;   // fraction when percentiles, otherwise unused
  double high = 0.75;
  std::vector<std::pair<double, double>> levels;  // exact (low, high) per exposure
};

struct CoexposureContrast {
  std::string exposure;
  double low = 0.0;
  double high = 0.0;
  std::vector<double> coexposure_low;   // predicted time-averaged level per exposure
  std::vector<double> coexposure_high;
  stats::Interval effect;
};

// Cubic truncated-power regression spline with interior knots evenly spaced
// over the predictor range.
class CubicSpline {
 public:
  CubicSpline(std::span<const double> x, std::span<const double> y, int knots = 10) {
    lo_ = *std::min_element(x.begin(), x.end());
    hi_ = *std::max_element(x.begin(), x.end());
    if (!(hi_ > lo_)) throw DataError("spline predictor has no spread");
    for (int k = 1; k <= knots; ++k) knots_.push_back(static_cast<double>(k) / (knots + 1));
    Eigen::MatrixXd B(static_cast<Eigen::Index>(x.size()), 4 + knots);
    Eigen::VectorXd Y(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
      B.row(static_cast<Eigen::Index>(i)) = basis(x[i]).transpose();
      Y[static_cast<Eigen::Index>(i)] = y[i];
    }
    coef_ = B.colPivHouseholderQr().solve(Y);
  }

  double operator()(double x) const { return basis(x).dot(coef_); }

 private:
  double lo_ = 0.0;
  double hi_ = 1.0;
  std::vector<double> knots_;
  Eigen::VectorXd coef_;

  Eigen::VectorXd basis(double x) const {
    const double u = (x - lo_) / (hi_ - lo_);
    Eigen::VectorXd b(4 + static_cast<Eigen::Index>(knots_.size()));
    b << 1.0, u, u * u, u * u * u, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(knots_.size()));
    for (std::size_t k = 0; k < knots_.size(); ++k) b[4 + static_cast<Eigen::Index>(k)] = std::pow(std::max(u - knots_[k], 0.0), 3);
    return b;
  }
};

// Exposure contribution to the linear predictor per draw when every exposure
// is held at a constant level across lags.
inline Eigen::VectorXd constant_level_response(const PosteriorFit& fit, std::span<const double> level) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fit.retained()));
  for (std::size_t r = 0; r < fit.retained(); ++r) {
    double total = 0.0;
    for (const auto& u : fit.record(r)) {
      const auto& leaf = u.leaves.front();
      const auto t1 = leaf.tree1.terminals();
      double main1 = 0.0;
      for (int i : t1) main1 += leaf.tree1.node(i).effect * leaf.tree1.node(i).length();
      total += main1 * level[u.exposure1];
      if (!u.paired()) continue;
      const auto t2 = leaf.tree2.terminals();
      double main2 = 0.0;
      for (int i : t2) main2 += leaf.tree2.node(i).effect * leaf.tree2.node(i).length();
      total += main2 * level[u.exposure2];
      if (!u.interactions) continue;
      double inter = 0.0;
      for (std::size_t a = 0; a < t1.size(); ++a)
        for (std::size_t b = 0; b < t2.size(); ++b)
          inter += leaf.omega(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) *
                   leaf.tree1.node(t1[a]).length() * leaf.tree2.node(t2[b]).length();
      total += inter * level[u.exposure1] * level[u.exposure2];
    }
    f[static_cast<Eigen::Index>(r)] = total;
  }
  return f;
}

// For each target exposure, contrast the response at (target high,
// co-exposures at their predicted level) against (target low, co-exposures
// at their predicted level). Exposure values are in model units.
inline std::vector<CoexposureContrast> adj_coexposure(std::span<const ExposureMatrix> exposures, const PosteriorFit& fit,
                                                      const Contrast& contrast, double conf_level = 0.95) {
  check_conf_level(conf_level);
  if (fit.spec.het) throw UsageError("co-exposure adjustment is not defined for heterogeneous fits");
  const std::size_t M = fit.num_exposures();
  if (exposures.size() != M) throw UsageError("exposure list does not match the fitted exposures");
  for (std::size_t m = 0; m < M; ++m) {
    if (exposures[m].name != fit.data.exposure_names[m])
      throw UsageError("exposure '" + exposures[m].name + "' is out of order; expected '" +
                       fit.data.exposure_names[m] + "'");
    if (exposures[m].values.cols() != fit.lags()) throw DataError("exposure '" + exposures[m].name + "' lag count differs");
  }
  if (!contrast.percentiles && contrast.levels.size() != M)
    throw UsageError("exact contrast needs one (low, high) pair per exposure");
  std::vector<std::vector<double>> avg(M);
  for (std::size_t m = 0; m < M; ++m) {
    const Eigen::VectorXd a = exposures[m].values.rowwise().mean();
    avg[m].assign(a.data(), a.data() + a.size());
  }
  std::vector<CoexposureContrast> out;
  for (std::size_t m = 0; m < M; ++m) {
    CoexposureContrast c;
    c.exposure = fit.data.exposure_names[m];
    if (contrast.percentiles) {
      c.low = stats::quantile(avg[m], contrast.low);
      c.high = stats::quantile(avg[m], contrast.high);
    } else {
      c.low = contrast.levels[m].first;
      c.high = contrast.levels[m].second;
    }
    if (!(c.low < c.high)) throw UsageError("contrast for '" + c.exposure + "' is degenerate (low >= high)");
    c.coexposure_low.assign(M, 0.0);
    c.coexposure_high.assign(M, 0.0);
    for (std::size_t k = 0; k < M; ++k) {
      if (k == m) {
        c.coexposure_low[k] = c.low;
        c.coexposure_high[k] = c.high;
        continue;
      }
      const CubicSpline sp(avg[m], avg[k]);
      c.coexposure_low[k] = sp(c.low);
      c.coexposure_high[k] = sp(c.high);
    }
    const Eigen::VectorXd d =
        constant_level_response(fit, c.coexposure_high) - constant_level_response(fit, c.coexposure_low);
    c.effect = stats::summarize_draws(std::span<const double>(d.data(), static_cast<std::size_t>(d.size())), conf_level);
    out.push_back(std::move(c));
  }
  return out;
}

// --- full summary -----------------------------------------------------------

struct FixedEffectRow {
  std::string name;
  stats::Interval interval;
  bool significant = false;
};

struct ExposureSummary {
  std::string name;
  bool has_curve = false;
  CurveSummary curve;
  ExposureSelection selection;
};

struct FitSummary {
  double conf_level = 0.95;
  std::string policy = "mean";
  std::vector<FixedEffectRow> fixed_effects;
  std::vector<ExposureSummary> exposures;
  std::vector<InteractionSummary> interactions;
  std::vector<std::pair<std::string, double>> pips;
  std::optional<double> residual_se;
  double snr = 0.0;
};

// Posterior mean of the residual standard deviation (gaussian family).
inline std::optional<double> residual_se(const PosteriorFit& fit) {
  if (fit.spec.family != Family::gaussian || fit.sigma2.size() == 0) return std::nullopt;
  return fit.sigma2.array().sqrt().mean();
}

inline FitSummary summarize(const PosteriorFit& fit, double conf_level = 0.95, const MarginalizePolicy& policy = {},
                            double bf_threshold = 0.5) {
  check_conf_level(conf_level);
  if (fit.retained() == 0) throw UsageError("fit has no retained draws");
  FitSummary s;
  s.conf_level = conf_level;
  s.policy = policy.describe();
  for (Eigen::Index j = 0; j < fit.gamma.cols(); ++j) {
    std::vector<double> col(fit.gamma.col(j).data(), fit.gamma.col(j).data() + fit.gamma.rows());
    FixedEffectRow row;
    row.name = fit.data.design_names[static_cast<std::size_t>(j)];
    row.interval = stats::summarize_draws(col, conf_level);
    row.significant = stats::excludes_zero(row.interval.lower, row.interval.upper);
    s.fixed_effects.push_back(row);
  }
  const auto effects = effect_draws(fit, policy);
  const auto selection = exposure_selection(fit, bf_threshold, effects);
  for (std::size_t m = 0; m < fit.num_exposures(); ++m) {
    ExposureSummary e;
    e.name = fit.data.exposure_names[m];
    e.selection = selection[m];
    if (!fit.spec.het) {
      e.has_curve = true;
      e.curve = summarize_curve(effects[m], conf_level);
    }
    s.exposures.push_back(std::move(e));
  }
  s.interactions = summarize_interactions(fit, conf_level);
  if (fit.spec.het) s.pips = modifier_pip(fit);
  s.residual_se = residual_se(fit);
  s.snr = fit.snr.size() ? fit.snr.mean() : 0.0;
  return s;
}

}  // namespace laggard
