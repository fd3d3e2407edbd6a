#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "laggard/error.hpp"
#include "laggard/rng.hpp"

namespace laggard {

struct TreePriorParams {
  double alpha = 0.95;
  double beta = 2.0;
  int num_trees = 20;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("tree prior alpha must lie in (0, 1)");
    if (!(beta >= 0.0)) throw UsageError("tree prior beta must be non-negative");
    if (num_trees < 1) throw UsageError("number of trees must be positive");
  }
};

inline double split_probability(const TreePriorParams& p, int depth) {
  return p.alpha * std::pow(1.0 + depth, -p.beta);
}

enum class MoveKind { grow = 0, prune = 1, change = 2 };
inline constexpr std::array<const char*, 3> kMoveNames{"grow", "prune", "change"};

struct MoveWeights {
  double grow = 0.3;
  double prune = 0.3;
  double change = 0.4;

  double operator[](MoveKind k) const {
    return k == MoveKind::grow ? grow : k == MoveKind::prune ? prune : change;
  }
};

struct DlmNode {
  int lo = 1;
  int hi = 1;
  int split = 0;  // left child covers [lo, split], right [split + 1, hi]
  int left = -1;
  int right = -1;
  int parent = -1;
  int depth = 0;
  double effect = 0.0;

  bool terminal() const { return left < 0; }
  int length() const { return hi - lo + 1; }
};

// Binary partition of the lag axis [1, T] into intervals with constant effects.
class DlmTree {
 public:
  DlmTree() = default;
  explicit DlmTree(int lags) {
    if (lags < 1) throw std::invalid_argument("tree needs at least one lag");
    nodes_.push_back(DlmNode{1, lags});
  }

  int lags() const { return nodes_.empty() ? 0 : nodes_[0].hi; }
  const std::vector<DlmNode>& nodes() const { return nodes_; }
  const DlmNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

  // Terminal node indices ordered along the lag axis.
  std::vector<int> terminals() const {
    std::vector<int> out;
    collect_terminals(0, out);
    return out;
  }

  int num_terminals() const {
    int c = 0;
    for (const auto& n : nodes_) c += n.terminal() ? 1 : 0;
    return c;
  }

  // Position (in terminals() order) of the terminal containing lag t.
  int terminal_position(int t) const {
    check_lag(t);
    int pos = 0;
    int i = 0;
    while (!nodes_[i].terminal()) {
      const auto& n = nodes_[i];
      if (t <= n.split) {
        i = n.left;
      } else {
        pos += count_terminals(n.left);
        i = n.right;
      }
    }
    return pos;
  }

  double evaluate(int t) const {
    check_lag(t);
    int i = 0;
    while (!nodes_[i].terminal()) i = t <= nodes_[i].split ? nodes_[i].left : nodes_[i].right;
    return nodes_[i].effect;
  }

  std::vector<double> effects() const {
    std::vector<double> out;
    for (int i : terminals()) out.push_back(nodes_[i].effect);
    return out;
  }

  void set_effects(std::span<const double> values) {
    const auto term = terminals();
    if (values.size() != term.size()) throw std::invalid_argument("effect count differs from terminal count");
    for (std::size_t k = 0; k < term.size(); ++k) nodes_[term[k]].effect = values[k];
  }

  void grow(int i, int split) {
    DlmNode& n = nodes_.at(static_cast<std::size_t>(i));
    if (!n.terminal()) throw std::invalid_argument("grow on internal node");
    if (split < n.lo || split >= n.hi) throw std::invalid_argument("split outside node interval");
    const int l = static_cast<int>(nodes_.size());
    DlmNode left{n.lo, split, 0, -1, -1, i, n.depth + 1, n.effect};
    DlmNode right{split + 1, n.hi, 0, -1, -1, i, n.depth + 1, n.effect};
    n.split = split;
    n.left = l;
    n.right = l + 1;
    nodes_.push_back(left);
    nodes_.push_back(right);
  }

  void prune(int i) {
    DlmNode& n = nodes_.at(static_cast<std::size_t>(i));
    if (n.terminal() || !nodes_[n.left].terminal() || !nodes_[n.right].terminal())
      throw std::invalid_argument("prune needs two terminal children");
    n.left = n.right = -1;
    n.split = 0;
    compact();
  }

  void change(int i, int split) {
    DlmNode& n = nodes_.at(static_cast<std::size_t>(i));
    if (n.terminal() || !nodes_[n.left].terminal() || !nodes_[n.right].terminal())
      throw std::invalid_argument("change needs two terminal children");
    if (split < n.lo || split >= n.hi) throw std::invalid_argument("split outside node interval");
    n.split = split;
    nodes_[n.left].hi = split;
    nodes_[n.right].lo = split + 1;
  }

  // Terminal intervals tile [1, T] exactly and every split is interior.
  bool valid() const {
    if (nodes_.empty() || nodes_[0].lo != 1) return false;
    int next = 1;
    for (int i : terminals()) {
      if (nodes_[i].lo != next || nodes_[i].hi < nodes_[i].lo) return false;
      next = nodes_[i].hi + 1;
    }
    if (next != lags() + 1) return false;
    for (const auto& n : nodes_) {
      if (n.terminal()) continue;
      if (n.split < n.lo || n.split >= n.hi) return false;
      if (nodes_[n.left].lo != n.lo || nodes_[n.left].hi != n.split) return false;
      if (nodes_[n.right].lo != n.split + 1 || nodes_[n.right].hi != n.hi) return false;
    }
    return true;
  }

  // Preorder records of (lo, hi, split, effect); split 0 marks a terminal.
  void serialize(std::vector<double>& out) const {
    out.push_back(static_cast<double>(nodes_.size()));
    serialize_node(0, out);
  }

  static DlmTree deserialize(std::span<const double> in, std::size_t& pos) {
    DlmTree t;
    const auto count = static_cast<std::size_t>(in[pos++]);
    t.nodes_.reserve(count);
    t.read_node(in, pos, -1, 0);
    if (t.nodes_.size() != count) throw DataError("corrupt tree record");
    return t;
  }

  bool same_topology(const DlmTree& o) const {
    const auto a = terminals();
    const auto b = o.terminals();
    if (a.size() != b.size()) return false;
    std::function<bool(int, int)> eq = [&](int i, int j) {
      const auto& x = nodes_[i];
      const auto& y = o.nodes_[j];
      if (x.lo != y.lo || x.hi != y.hi || x.terminal() != y.terminal()) return false;
      if (x.terminal()) return true;
      return x.split == y.split && eq(x.left, y.left) && eq(x.right, y.right);
    };
    return eq(0, 0);
  }

 private:
  std::vector<DlmNode> nodes_;

  void check_lag(int t) const {
    if (t < 1 || t > lags()) throw std::out_of_range("lag " + std::to_string(t) + " outside [1, " + std::to_string(lags()) + "]");
  }

  void collect_terminals(int i, std::vector<int>& out) const {
    if (nodes_[i].terminal()) {
      out.push_back(i);
      return;
    }
    collect_terminals(nodes_[i].left, out);
    collect_terminals(nodes_[i].right, out);
  }

  int count_terminals(int i) const {
    if (nodes_[i].terminal()) return 1;
    return count_terminals(nodes_[i].left) + count_terminals(nodes_[i].right);
  }

  void compact() {
    std::vector<DlmNode> out;
    out.reserve(nodes_.size());
    std::function<int(int, int)> copy = [&](int i, int parent) {
      const int idx = static_cast<int>(out.size());
      DlmNode n = nodes_[i];
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

  void serialize_node(int i, std::vector<double>& out) const {
    const auto& n = nodes_[i];
    out.push_back(n.lo);
    out.push_back(n.hi);
    out.push_back(n.terminal() ? 0 : n.split);
    out.push_back(n.effect);
    if (!n.terminal()) {
      serialize_node(n.left, out);
      serialize_node(n.right, out);
    }
  }

  int read_node(std::span<const double> in, std::size_t& pos, int parent, int depth) {
    if (pos + 4 > in.size()) throw DataError("truncated tree record");
    DlmNode n;
    n.lo = static_cast<int>(in[pos]);
    n.hi = static_cast<int>(in[pos + 1]);
    const int split = static_cast<int>(in[pos + 2]);
    n.effect = in[pos + 3];
    pos += 4;
    n.parent = parent;
    n.depth = depth;
    const int idx = static_cast<int>(nodes_.size());
    nodes_.push_back(n);
    if (split > 0) {
      nodes_[idx].split = split;
      const int l = read_node(in, pos, idx, depth + 1);
      const int r = read_node(in, pos, idx, depth + 1);
      nodes_[idx].left = l;
      nodes_[idx].right = r;
    }
    return idx;
  }
};

// Structural prior: p_split(d) per internal node and 1 - p_split(d) per
// terminal that could still split. Single-lag terminals contribute 1.
inline double tree_log_prior(const DlmTree& tree, const TreePriorParams& p) {
  double lp = 0.0;
  for (const auto& n : tree.nodes()) {
    const double ps = split_probability(p, n.depth);
    if (!n.terminal())
      lp += std::log(ps);
    else if (n.length() >= 2)
      lp += std::log1p(-ps);
  }
  return lp;
}

// Prior the sampler targets: the structural prior times a uniform choice of
// split lag at every internal node.
inline double tree_log_target_prior(const DlmTree& tree, const TreePriorParams& p) {
  double lp = tree_log_prior(tree, p);
  for (const auto& n : tree.nodes())
    if (!n.terminal()) lp -= std::log(static_cast<double>(n.length() - 1));
  return lp;
}

inline double evaluate_dlm_tree(const DlmTree& tree, int t) { return tree.evaluate(t); }

inline Eigen::VectorXd ensemble_theta(std::span<const DlmTree> ensemble, int lags) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(lags);
  for (const auto& tree : ensemble) {
    if (tree.lags() != lags) throw std::invalid_argument("tree does not span the lag range");
    for (int i : tree.terminals()) {
      const auto& n = tree.node(i);
      theta.segment(n.lo - 1, n.length()).array() += n.effect;
    }
  }
  return theta;
}

struct MoveAvailability {
  std::vector<int> growable;    // terminals with at least two lags
  std::vector<int> prunable;    // internal nodes with two terminal children
  std::vector<int> changeable;  // prunable nodes spanning at least three lags

  double total_weight(const MoveWeights& w) const {
    return (growable.empty() ? 0.0 : w.grow) + (prunable.empty() ? 0.0 : w.prune) +
           (changeable.empty() ? 0.0 : w.change);
  }
};

inline MoveAvailability move_availability(const DlmTree& tree) {
  MoveAvailability a;
  const auto& nodes = tree.nodes();
  for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
    const auto& n = nodes[i];
    if (n.terminal()) {
      if (n.length() >= 2) a.growable.push_back(i);
    } else if (nodes[n.left].terminal() && nodes[n.right].terminal()) {
      a.prunable.push_back(i);
      if (n.length() >= 3) a.changeable.push_back(i);
    }
  }
  return a;
}

inline MoveKind choose_move_kind(const MoveAvailability& a, const MoveWeights& w, Rng& rng) {
  const std::array<double, 3> weights{a.growable.empty() ? 0.0 : w.grow, a.prunable.empty() ? 0.0 : w.prune,
                                      a.changeable.empty() ? 0.0 : w.change};
  return static_cast<MoveKind>(rng.categorical(weights));
}

struct DlmProposal {
  MoveKind kind = MoveKind::grow;
  int node = 0;
  DlmTree tree;
  double log_transition_ratio = 0.0;  // log q(old | new) - log q(new | old)
  double log_prior_ratio = 0.0;       // target prior, new over old
};

inline DlmProposal propose_move(const DlmTree& tree, const TreePriorParams& params, Rng& rng,
                                const MoveWeights& weights = {}) {
  const auto avail = move_availability(tree);
  const double W = avail.total_weight(weights);
  if (!(W > 0.0)) throw std::logic_error("no tree move available");
  DlmProposal p;
  p.kind = choose_move_kind(avail, weights, rng);
  p.tree = tree;
  double log_fwd = std::log(weights[p.kind] / W);
  double log_rev = 0.0;
  switch (p.kind) {
    case MoveKind::grow: {
      p.node = avail.growable[rng.uniform_index(avail.growable.size())];
      const auto& n = tree.node(p.node);
      const int split = n.lo + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n.length() - 1)));
      p.tree.grow(p.node, split);
      log_fwd += -std::log(static_cast<double>(avail.growable.size())) - std::log(n.length() - 1.0);
      const auto after = move_availability(p.tree);
      log_rev = std::log(weights.prune / after.total_weight(weights)) - std::log(static_cast<double>(after.prunable.size()));
      break;
    }
    case MoveKind::prune: {
      p.node = avail.prunable[rng.uniform_index(avail.prunable.size())];
      const int len = tree.node(p.node).length();
      p.tree.prune(p.node);
      log_fwd += -std::log(static_cast<double>(avail.prunable.size()));
      const auto after = move_availability(p.tree);
      log_rev = std::log(weights.grow / after.total_weight(weights)) -
                std::log(static_cast<double>(after.growable.size())) - std::log(len - 1.0);
      break;
    }
    case MoveKind::change: {
      p.node = avail.changeable[rng.uniform_index(avail.changeable.size())];
      const auto& n = tree.node(p.node);
      int split = n.lo + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n.length() - 2)));
      if (split >= n.split) ++split;
      p.tree.change(p.node, split);
      // The reverse move picks the same node among the same candidates.
      log_rev = log_fwd;
      break;
    }
  }
  p.log_transition_ratio = log_rev - log_fwd;
  p.log_prior_ratio = tree_log_target_prior(p.tree, params) - tree_log_target_prior(tree, params);
  return p;
}

// Two DLM trees sharing an interaction surface over their terminal cells.
struct TreePair {
  DlmTree tree1;
  DlmTree tree2;
  int exposure1 = 0;
  int exposure2 = 0;
  Eigen::MatrixXd omega;  // num_terminals(tree1) x num_terminals(tree2)

  bool consistent() const {
    return omega.rows() == tree1.num_terminals() && omega.cols() == tree2.num_terminals();
  }
};

struct PairEffects {
  Eigen::VectorXd main1;
  Eigen::VectorXd main2;
  Eigen::MatrixXd interaction;  // T x T, entry (t1, t2)
};

inline PairEffects pair_effects(const TreePair& pair, int lags) {
  PairEffects e;
  e.main1.resize(lags);
  e.main2.resize(lags);
  for (int t = 1; t <= lags; ++t) {
    e.main1[t - 1] = pair.tree1.evaluate(t);
    e.main2[t - 1] = pair.tree2.evaluate(t);
  }
  e.interaction = Eigen::MatrixXd::Zero(lags, lags);
  if (pair.omega.size() == 0) return e;
  const auto t1 = pair.tree1.terminals();
  const auto t2 = pair.tree2.terminals();
  for (std::size_t a = 0; a < t1.size(); ++a) {
    const auto& n1 = pair.tree1.node(t1[a]);
    for (std::size_t b = 0; b < t2.size(); ++b) {
      const auto& n2 = pair.tree2.node(t2[b]);
      e.interaction.block(n1.lo - 1, n2.lo - 1, n1.length(), n2.length())
          .setConstant(pair.omega(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
    }
  }
  return e;
}

}  // namespace laggard
