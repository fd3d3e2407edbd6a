#pragma once

#include <cmath>
#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "laggard/data_model.hpp"
#include "laggard/dlm_tree.hpp"
#include "laggard/rng.hpp"

namespace laggard {

struct ModNode {
  int left = -1;
  int right = -1;
  int parent = -1;
  int depth = 0;
  int var = -1;
  double threshold = 0.0;     // continuous: value <= threshold goes left
  std::uint64_t subset = 0;   // categorical: level in subset goes left

  bool terminal() const { return left < 0; }
};

struct SplitRule {
  int var = -1;
  double threshold = 0.0;
  std::uint64_t subset = 0;
};

// Region of modifier space reaching a node: (lower, upper] per continuous
// modifier, allowed level mask per categorical one.
struct ModRegion {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::uint64_t> levels;
};

inline bool rule_goes_left(const ModifierDef& def, const SplitRule& r, double value) {
  if (def.kind == ModifierKind::continuous) return value <= r.threshold;
  const auto level = static_cast<int>(value);
  return (r.subset >> level) & 1ULL;
}

// Partition of the modifier space into subgroups (leaves).
class ModifierTree {
 public:
  ModifierTree() { nodes_.push_back(ModNode{}); }

  const std::vector<ModNode>& nodes() const { return nodes_; }
  const ModNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

  std::vector<int> leaves() const {
    std::vector<int> out;
    collect(0, out);
    return out;
  }

  int num_leaves() const {
    int c = 0;
    for (const auto& n : nodes_) c += n.terminal() ? 1 : 0;
    return c;
  }

  SplitRule rule(int i) const { return {nodes_[i].var, nodes_[i].threshold, nodes_[i].subset}; }

  // Leaf position (in leaves() order) reached by one row of modifier values.
  int assign(std::span<const double> row, std::span<const ModifierDef> defs) const {
    int i = 0;
    int pos = 0;
    while (!nodes_[i].terminal()) {
      const auto& n = nodes_[i];
      if (n.var < 0 || static_cast<std::size_t>(n.var) >= row.size())
        throw DataError("row lacks a modifier referenced by the tree");
      const double v = row[static_cast<std::size_t>(n.var)];
      if (std::isnan(v)) throw DataError("missing modifier value for '" + defs[n.var].name + "'");
      if (rule_goes_left(defs[n.var], rule(i), v)) {
        i = n.left;
      } else {
        pos += count_leaves(n.left);
        i = n.right;
      }
    }
    return pos;
  }

  std::vector<int> assign_all(const std::vector<ModifierColumn>& columns, std::span<const ModifierDef> defs) const {
    const std::size_t n = columns.empty() ? 0 : columns.front().values.size();
    std::vector<int> out(n, 0);
    if (nodes_.size() == 1) return out;
    std::vector<double> row(columns.size());
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < columns.size(); ++j) row[j] = columns[j].values[r];
      out[r] = assign(row, defs);
    }
    return out;
  }

  void grow(int i, const SplitRule& r) {
    if (!nodes_.at(static_cast<std::size_t>(i)).terminal()) throw std::invalid_argument("grow on internal node");
    const int l = static_cast<int>(nodes_.size());
    ModNode child;
    child.parent = i;
    child.depth = nodes_[i].depth + 1;
    nodes_.push_back(child);
    nodes_.push_back(child);
    auto& n = nodes_[i];
    n.left = l;
    n.right = l + 1;
    n.var = r.var;
    n.threshold = r.threshold;
    n.subset = r.subset;
  }

  void prune(int i) {
    auto& n = nodes_.at(static_cast<std::size_t>(i));
    if (n.terminal() || !nodes_[n.left].terminal() || !nodes_[n.right].terminal())
      throw std::invalid_argument("prune needs two terminal children");
    n.left = n.right = -1;
    n.var = -1;
    n.threshold = 0.0;
    n.subset = 0;
    compact();
  }

  void change(int i, const SplitRule& r) {
    auto& n = nodes_.at(static_cast<std::size_t>(i));
    if (n.terminal()) throw std::invalid_argument("change on terminal node");
    n.var = r.var;
    n.threshold = r.threshold;
    n.subset = r.subset;
  }

  ModRegion region(int i, std::span<const ModifierDef> defs) const {
    ModRegion reg;
    const std::size_t P = defs.size();
    reg.lower.assign(P, -std::numeric_limits<double>::infinity());
    reg.upper.assign(P, std::numeric_limits<double>::infinity());
    reg.levels.assign(P, 0);
    for (std::size_t j = 0; j < P; ++j)
      if (defs[j].kind == ModifierKind::categorical) reg.levels[j] = (std::uint64_t{1} << defs[j].levels.size()) - 1;
    int child = i;
    int p = nodes_[i].parent;
    while (p >= 0) {
      const auto& n = nodes_[p];
      const bool left = n.left == child;
      const auto j = static_cast<std::size_t>(n.var);
      if (defs[j].kind == ModifierKind::continuous) {
        if (left)
          reg.upper[j] = std::min(reg.upper[j], n.threshold);
        else
          reg.lower[j] = std::max(reg.lower[j], n.threshold);
      } else {
        reg.levels[j] &= left ? n.subset : ~n.subset;
      }
      child = p;
      p = n.parent;
    }
    return reg;
  }

  // Modifiers referenced by at least one split.
  std::vector<bool> used(std::size_t num_modifiers) const {
    std::vector<bool> out(num_modifiers, false);
    for (const auto& n : nodes_)
      if (!n.terminal()) out[static_cast<std::size_t>(n.var)] = true;
    return out;
  }

  void split_counts(std::vector<double>& counts) const {
    for (const auto& n : nodes_)
      if (!n.terminal()) counts[static_cast<std::size_t>(n.var)] += 1.0;
  }

  // Preorder records of (var, threshold, subset); var -1 marks a leaf.
  void serialize(std::vector<double>& out) const {
    out.push_back(static_cast<double>(nodes_.size()));
    std::function<void(int)> emit = [&](int i) {
      const auto& n = nodes_[i];
      out.push_back(n.terminal() ? -1.0 : n.var);
      out.push_back(n.threshold);
      out.push_back(static_cast<double>(n.subset));
      if (!n.terminal()) {
        emit(n.left);
        emit(n.right);
      }
    };
    emit(0);
  }

  static ModifierTree deserialize(std::span<const double> in, std::size_t& pos) {
    ModifierTree t;
    t.nodes_.clear();
    const auto count = static_cast<std::size_t>(in[pos++]);
    std::function<int(int, int)> read = [&](int parent, int depth) {
      if (pos + 3 > in.size()) throw DataError("truncated modifier tree record");
      ModNode n;
      n.var = static_cast<int>(in[pos]);
      n.threshold = in[pos + 1];
      n.subset = static_cast<std::uint64_t>(in[pos + 2]);
      pos += 3;
      n.parent = parent;
      n.depth = depth;
      const int idx = static_cast<int>(t.nodes_.size());
      t.nodes_.push_back(n);
      if (n.var >= 0) {
        const int l = read(idx, depth + 1);
        const int r = read(idx, depth + 1);
        t.nodes_[idx].left = l;
        t.nodes_[idx].right = r;
      }
      return idx;
    };
    read(-1, 0);
    if (t.nodes_.size() != count) throw DataError("corrupt modifier tree record");
    return t;
  }

 private:
  std::vector<ModNode> nodes_;

  void collect(int i, std::vector<int>& out) const {
    if (nodes_[i].terminal()) {
      out.push_back(i);
      return;
    }
    collect(nodes_[i].left, out);
    collect(nodes_[i].right, out);
  }

  int count_leaves(int i) const {
    if (nodes_[i].terminal()) return 1;
    return count_leaves(nodes_[i].left) + count_leaves(nodes_[i].right);
  }

  void compact() {
    std::vector<ModNode> out;
    std::function<int(int, int)> copy = [&](int i, int parent) {
      const int idx = static_cast<int>(out.size());
      ModNode n = nodes_[i];
      n.parent = parent;
      out.push_back(n);
      if (!n.terminal()) {
        const int l = copy(n.left, idx);
        const int r = copy(n.right, idx);
        out[idx].left = l;
        out[idx].right = r;
      }
      return idx;
    };
    copy(0, -1);
    nodes_ = std::move(out);
  }
};

inline int assign_subgroup(const ModifierTree& tree, std::span<const double> row, std::span<const ModifierDef> defs) {
  return tree.assign(row, defs);
}

// Candidate rules of modifier j that split the region into two nonempty parts.
inline std::vector<SplitRule> valid_rules(const ModRegion& reg, std::span<const ModifierDef> defs, std::size_t j) {
  std::vector<SplitRule> out;
  const auto& d = defs[j];
  if (d.kind == ModifierKind::continuous) {
    for (double t : d.thresholds)
      if (t > reg.lower[j] && t < reg.upper[j]) out.push_back({static_cast<int>(j), t, 0});
  } else {
    const std::uint64_t allowed = reg.levels[j];
    for (std::uint64_t s : d.subsets)
      if ((s & allowed) != 0 && (allowed & ~s) != 0) out.push_back({static_cast<int>(j), 0.0, s});
  }
  return out;
}

// Split-choice distribution at a node: modifier j with probability
// proportional to weight[j] among modifiers with valid rules, then a rule
// uniformly among that modifier's valid rules.
struct SplitChoice {
  std::vector<std::vector<SplitRule>> rules;
  std::vector<double> prob;

  bool empty() const {
    for (double p : prob)
      if (p > 0.0) return false;
    return true;
  }

  double log_prob(const SplitRule& r) const {
    const auto j = static_cast<std::size_t>(r.var);
    if (prob[j] <= 0.0 || rules[j].empty()) return -std::numeric_limits<double>::infinity();
    return std::log(prob[j]) - std::log(static_cast<double>(rules[j].size()));
  }

  SplitRule draw(Rng& rng) const {
    const std::size_t j = rng.categorical(prob);
    return rules[j][rng.uniform_index(rules[j].size())];
  }
};

inline SplitChoice split_choice(const ModRegion& reg, std::span<const ModifierDef> defs, std::span<const double> weights) {
  SplitChoice c;
  c.rules.resize(defs.size());
  c.prob.assign(defs.size(), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < defs.size(); ++j) {
    c.rules[j] = valid_rules(reg, defs, j);
    if (!c.rules[j].empty()) {
      c.prob[j] = weights[j];
      total += weights[j];
    }
  }
  if (total > 0.0)
    for (double& p : c.prob) p /= total;
  return c;
}

// Structural prior; leaves whose region admits no split contribute 1.
inline double tree_log_prior(const ModifierTree& tree, const TreePriorParams& p, std::span<const ModifierDef> defs) {
  double lp = 0.0;
  for (int i = 0; i < static_cast<int>(tree.nodes().size()); ++i) {
    const auto& n = tree.node(i);
    const double ps = split_probability(p, n.depth);
    if (!n.terminal()) {
      lp += std::log(ps);
      continue;
    }
    const auto reg = tree.region(i, defs);
    bool can_split = false;
    for (std::size_t j = 0; j < defs.size() && !can_split; ++j) can_split = !valid_rules(reg, defs, j).empty();
    if (can_split) lp += std::log1p(-ps);
  }
  return lp;
}

inline double tree_log_target_prior(const ModifierTree& tree, const TreePriorParams& p, std::span<const ModifierDef> defs,
                                    std::span<const double> weights) {
  double lp = 0.0;
  for (int i = 0; i < static_cast<int>(tree.nodes().size()); ++i) {
    const auto& n = tree.node(i);
    const double ps = split_probability(p, n.depth);
    const auto choice = split_choice(tree.region(i, defs), defs, weights);
    if (!n.terminal())
      lp += std::log(ps) + choice.log_prob(tree.rule(i));
    else if (!choice.empty())
      lp += std::log1p(-ps);
  }
  return lp;
}

struct ModifierProposal {
  MoveKind kind = MoveKind::grow;
  int node = 0;
  ModifierTree tree;
  double log_transition_ratio = 0.0;
  double log_prior_ratio = 0.0;
};

struct ModifierAvailability {
  std::vector<int> growable;
  std::vector<int> prunable;

  double total_weight(const MoveWeights& w) const {
    return (growable.empty() ? 0.0 : w.grow) + (prunable.empty() ? 0.0 : w.prune) + (prunable.empty() ? 0.0 : w.change);
  }
};

inline ModifierAvailability modifier_availability(const ModifierTree& tree, std::span<const ModifierDef> defs,
                                                  std::span<const double> weights) {
  ModifierAvailability a;
  for (int i = 0; i < static_cast<int>(tree.nodes().size()); ++i) {
    const auto& n = tree.node(i);
    if (n.terminal()) {
      if (!split_choice(tree.region(i, defs), defs, weights).empty()) a.growable.push_back(i);
    } else if (tree.node(n.left).terminal() && tree.node(n.right).terminal()) {
      a.prunable.push_back(i);
    }
  }
  return a;
}

// Returns false when no move is possible (no modifier admits a split).
inline bool propose_modifier_move(const ModifierTree& tree, const TreePriorParams& params,
                                  std::span<const ModifierDef> defs, std::span<const double> weights, Rng& rng,
                                  ModifierProposal& p, const MoveWeights& mw = {}) {
  const auto avail = modifier_availability(tree, defs, weights);
  const double W = avail.total_weight(mw);
  if (!(W > 0.0)) return false;
  const std::array<double, 3> kw{avail.growable.empty() ? 0.0 : mw.grow, avail.prunable.empty() ? 0.0 : mw.prune,
                                 avail.prunable.empty() ? 0.0 : mw.change};
  p.kind = static_cast<MoveKind>(rng.categorical(kw));
  p.tree = tree;
  double log_fwd = std::log(mw[p.kind] / W);
  double log_rev = 0.0;
  switch (p.kind) {
    case MoveKind::grow: {
      p.node = avail.growable[rng.uniform_index(avail.growable.size())];
      const auto choice = split_choice(tree.region(p.node, defs), defs, weights);
      const SplitRule r = choice.draw(rng);
      p.tree.grow(p.node, r);
      log_fwd += -std::log(static_cast<double>(avail.growable.size())) + choice.log_prob(r);
      const auto after = modifier_availability(p.tree, defs, weights);
      log_rev = std::log(mw.prune / after.total_weight(mw)) - std::log(static_cast<double>(after.prunable.size()));
      break;
    }
    case MoveKind::prune: {
      p.node = avail.prunable[rng.uniform_index(avail.prunable.size())];
      const auto choice = split_choice(tree.region(p.node, defs), defs, weights);
      const SplitRule old = tree.rule(p.node);
      p.tree.prune(p.node);
      log_fwd += -std::log(static_cast<double>(avail.prunable.size()));
      const auto after = modifier_availability(p.tree, defs, weights);
      log_rev = std::log(mw.grow / after.total_weight(mw)) - std::log(static_cast<double>(after.growable.size())) +
                choice.log_prob(old);
      break;
    }
    case MoveKind::change: {
      p.node = avail.prunable[rng.uniform_index(avail.prunable.size())];
      const auto choice = split_choice(tree.region(p.node, defs), defs, weights);
      const SplitRule old = tree.rule(p.node);
      const SplitRule r = choice.draw(rng);
      p.tree.change(p.node, r);
      log_fwd += -std::log(static_cast<double>(avail.prunable.size())) + choice.log_prob(r);
      const auto after = modifier_availability(p.tree, defs, weights);
      log_rev = std::log(mw.change / after.total_weight(mw)) - std::log(static_cast<double>(after.prunable.size())) +
                choice.log_prob(old);
      break;
    }
  }
  p.log_transition_ratio = log_rev - log_fwd;
  p.log_prior_ratio = tree_log_target_prior(p.tree, params, defs, weights) - tree_log_target_prior(tree, params, defs, weights);
  return true;
}

}  // namespace laggard
