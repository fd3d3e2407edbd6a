#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "laggard/data_model.hpp"
#include "laggard/dlm_tree.hpp"
#include "laggard/error.hpp"
#include "laggard/modifier_tree.hpp"

namespace laggard {

enum class Family { gaussian, logit };
enum class InteractionMode { none, noself, all };

inline std::string to_string(Family f) { return f == Family::gaussian ? "gaussian" : "logit"; }

inline std::string to_string(InteractionMode m) {
  switch (m) {
    case InteractionMode::none: return "none";
    case InteractionMode::noself: return "noself";
    case InteractionMode::all: return "all";
  }
  return "none";
}

inline Family parse_family(const std::string& s) {
  if (s == "gaussian") return Family::gaussian;
  if (s == "logit" || s == "binomial" || s == "logistic") return Family::logit;
  if (s == "zinb" || s == "negbin" || s == "poisson")
    throw UnsupportedModel("family '" + s + "' is not supported (supported: gaussian, logit)");
  throw UsageError("unknown family '" + s + "'");
}

inline InteractionMode parse_interaction_mode(const std::string& s) {
  if (s == "none") return InteractionMode::none;
  if (s == "noself") return InteractionMode::noself;
  if (s == "all") return InteractionMode::all;
  throw UsageError("unknown interaction mode '" + s + "' (expected none, noself, all)");
}

inline void check_dlm_type(const std::string& s) {
  if (s == "linear") return;
  if (s == "nonlinear" || s == "monotone")
    throw UnsupportedModel("dlm type '" + s + "' is not supported (supported: linear)");
  throw UsageError("unknown dlm type '" + s + "'");
}

struct ShrinkageConfig {
  double tau_scale = 1.0;  // half-Cauchy scale of the effect standard deviation
};

struct ModelSpec {
  Family family = Family::gaussian;
  std::string dlm_type = "linear";
  bool mixture = false;
  bool het = false;
  InteractionMode interaction = InteractionMode::none;
  TreePriorParams tree_prior;
  ShrinkageConfig shrinkage;
  double kappa = 1.0;
  double modifier_sparsity = 0.5;
  std::vector<ModifierDef> modifiers;
  MoveWeights moves;

  std::string model_class() const {
    if (het) return mixture ? "hdlmm" : "hdlm";
    return mixture ? "tdlmm" : "tdlm";
  }

  bool interactions() const { return mixture && interaction != InteractionMode::none; }

  void validate() const {
    check_dlm_type(dlm_type);
    tree_prior.validate();
    if (interaction != InteractionMode::none && !mixture)
      throw UsageError("interactions require a mixture model");
    if (het && modifiers.empty()) throw UsageError("heterogeneous models need at least one modifier");
    if (het && family == Family::logit)
      throw UnsupportedModel("heterogeneous models support the gaussian family only");
    if (!(kappa > 0.0)) throw UsageError("kappa must be positive");
    if (!(modifier_sparsity > 0.0 && modifier_sparsity <= 1.0))
      throw UsageError("modifier sparsity must lie in (0, 1]");
    if (!(shrinkage.tau_scale > 0.0)) throw UsageError("shrinkage scale must be positive");
  }
};

struct McmcControl {
  int n_burn = 2500;
  int n_iter = 10000;
  int n_thin = 5;
  std::uint64_t seed = 1;
  int n_chains = 1;
  bool verbose = false;

  int retained() const { return n_iter / n_thin; }

  void validate() const {
    if (n_burn < 0) throw UsageError("burn-in must be non-negative");
    if (n_iter < 1) throw UsageError("iterations must be positive");
    if (n_thin < 1) throw UsageError("thinning must be positive");
    if (n_thin > n_iter) throw UsageError("thinning exceeds the number of iterations");
    if (n_chains < 1) throw UsageError("chains must be positive");
  }
};

// Test and debugging switches of the sampler.
struct EngineHooks {
  bool freeze_trees = false;  // trees stay root-only with zero effects
  std::optional<double> fixed_sigma2;
  std::optional<double> fixed_tau2;
  bool accept_all = false;
  bool check_invariants = false;
};

// Structure kinds tracked in the tree log.
enum class StructureKind { tree1 = 0, tree2 = 1, modifier = 2 };
inline constexpr std::array<const char*, 3> kStructureNames{"dlm_tree", "dlm_tree2", "modifier_tree"};

// Column layout of the per-iteration tree log.
struct TreeLogLayout {
  static constexpr int kinds = 3;
  static constexpr int moves = 3;
  static int proposed(int kind, int move) { return (kind * moves + move) * 3; }
  static int accepted(int kind, int move) { return proposed(kind, move) + 1; }
  static int rejected(int kind, int move) { return proposed(kind, move) + 2; }
  static int mean_size(int kind) { return kinds * moves * 3 + kind; }
  static int width() { return kinds * moves * 3 + kinds; }
};

// One ensemble member as stored per retained draw: a modifier tree and one
// tree pair payload per leaf (exposure2 < 0 for single-tree payloads).
struct UnitRecord {
  ModifierTree mod;
  int exposure1 = 0;
  int exposure2 = -1;
  bool interactions = false;
  std::vector<TreePair> leaves;

  bool paired() const { return exposure2 >= 0; }
};

using EnsembleRecord = std::vector<UnitRecord>;

inline void serialize_ensemble(const EnsembleRecord& e, std::vector<double>& out) {
  out.push_back(static_cast<double>(e.size()));
  for (const auto& u : e) {
    out.push_back(u.exposure1);
    out.push_back(u.exposure2);
    out.push_back(u.interactions ? 1.0 : 0.0);
    u.mod.serialize(out);
    out.push_back(static_cast<double>(u.leaves.size()));
    for (const auto& leaf : u.leaves) {
      leaf.tree1.serialize(out);
      if (u.paired()) leaf.tree2.serialize(out);
      if (u.interactions)
        for (Eigen::Index a = 0; a < leaf.omega.rows(); ++a)
          for (Eigen::Index b = 0; b < leaf.omega.cols(); ++b) out.push_back(leaf.omega(a, b));
    }
  }
}

inline EnsembleRecord deserialize_ensemble(std::span<const double> in) {
  std::size_t pos = 0;
  if (in.empty()) throw DataError("empty ensemble record");
  const auto units = static_cast<std::size_t>(in[pos++]);
  EnsembleRecord e(units);
  for (auto& u : e) {
    if (pos + 3 > in.size()) throw DataError("truncated ensemble record");
    u.exposure1 = static_cast<int>(in[pos++]);
    u.exposure2 = static_cast<int>(in[pos++]);
    u.interactions = in[pos++] != 0.0;
    u.mod = ModifierTree::deserialize(in, pos);
    const auto leaves = static_cast<std::size_t>(in[pos++]);
    u.leaves.resize(leaves);
    for (auto& leaf : u.leaves) {
      leaf.exposure1 = u.exposure1;
      leaf.exposure2 = u.exposure2;
      leaf.tree1 = DlmTree::deserialize(in, pos);
      if (u.paired()) leaf.tree2 = DlmTree::deserialize(in, pos);
      if (u.interactions) {
        leaf.omega.resize(leaf.tree1.num_terminals(), leaf.tree2.num_terminals());
        if (pos + static_cast<std::size_t>(leaf.omega.size()) > in.size()) throw DataError("truncated interaction record");
        for (Eigen::Index a = 0; a < leaf.omega.rows(); ++a)
          for (Eigen::Index b = 0; b < leaf.omega.cols(); ++b) leaf.omega(a, b) = in[pos++];
      } else if (u.paired()) {
        leaf.omega = Eigen::MatrixXd::Zero(leaf.tree1.num_terminals(), leaf.tree2.num_terminals());
      }
    }
  }
  return e;
}

struct DataSummary {
  Eigen::Index n = 0;
  int lags = 0;
  std::string outcome_name;
  std::vector<std::string> design_names;
  std::vector<std::string> exposure_names;
  std::vector<double> scale_factors;
  std::vector<bool> centered;
  std::uint64_t hash = 0;
};

struct PosteriorFit {
  ModelSpec spec;
  McmcControl control;
  DataSummary data;
  std::uint64_t chain_seed = 0;

  Eigen::MatrixXd gamma;                // retained x p
  Eigen::VectorXd sigma2;               // retained
  Eigen::VectorXd tau;                  // retained
  std::vector<Eigen::MatrixXd> theta;   // per exposure, retained x T
  Eigen::MatrixXd selection_counts;     // retained x M
  Eigen::MatrixXd modifier_usage;       // retained x P, 0/1
  Eigen::VectorXd snr;                  // retained
  Eigen::MatrixXd tree_log;             // post-burn iterations x TreeLogLayout::width()

  std::vector<double> records;          // flat ensemble records
  std::vector<double> record_offsets;   // retained + 1 offsets into records

  // Model-scale exposures and modifier table, kept for marginalization and
  // subgroup routing.
  std::vector<Eigen::MatrixXd> exposures;
  std::vector<ModifierColumn> modifier_columns;

  std::int64_t invariant_violations = 0;

  std::size_t retained() const { return static_cast<std::size_t>(sigma2.size()); }
  std::size_t num_exposures() const { return data.exposure_names.size(); }
  int lags() const { return data.lags; }

  EnsembleRecord record(std::size_t draw) const {
    const auto begin = static_cast<std::size_t>(record_offsets.at(draw));
    const auto end = static_cast<std::size_t>(record_offsets.at(draw + 1));
    return deserialize_ensemble(std::span<const double>(records).subspan(begin, end - begin));
  }
};

}  // namespace laggard
