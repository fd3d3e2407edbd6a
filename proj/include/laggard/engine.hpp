#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <limits>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "laggard/data_model.hpp"
#include "laggard/dlm_tree.hpp"
#include "laggard/error.hpp"
#include "laggard/model.hpp"
#include "laggard/modifier_tree.hpp"
#include "laggard/polya_gamma.hpp"
#include "laggard/rng.hpp"

namespace laggard {

struct NodePosterior {
  double mean = 0.0;
  double variance = 0.0;
};

// Conjugate normal update of one terminal effect with N(0, tau2) prior.
inline NodePosterior node_effect_posterior(const Eigen::VectorXd& residual, const Eigen::VectorXd& u, double sigma2,
                                           double tau2) {
  if (residual.size() != u.size()) throw std::invalid_argument("residual and covariate lengths differ");
  const double v = 1.0 / (u.squaredNorm() / sigma2 + 1.0 / tau2);
  return {v * u.dot(residual) / sigma2, v};
}

// Gibbs draw of one exposure slot: log_weight[m] is the log marginal
// likelihood of the slot under exposure m; `excluded` (if >= 0) is removed
// from the support.
inline int update_exposure_assignment(std::span<const double> log_marginal, std::span<const double> selection_probs,
                                      int excluded, Rng& rng) {
  std::vector<double> w(log_marginal.size());
  for (std::size_t m = 0; m < w.size(); ++m) {
    w[m] = static_cast<int>(m) == excluded || selection_probs[m] <= 0.0
               ? -std::numeric_limits<double>::infinity()
               : log_marginal[m] + std::log(selection_probs[m]);
  }
  return static_cast<int>(rng.categorical_log(w));
}

// Inverse-gamma shape and rate of the variance prior.
inline constexpr double kSigmaPriorShape = 0.001;
inline constexpr double kSigmaPriorRate = 0.001;

namespace engine_detail {

struct Unit {
  ModifierTree mod;
  std::vector<int> leaf_of_row;
  std::vector<int> leaf_sizes;
  DlmTree tree1;
  DlmTree tree2;
  int s1 = 0;
  int s2 = -1;
  Eigen::VectorXd coef;
  Eigen::VectorXd fit;
};

struct Marginal {
  double log_ml = 0.0;
  Eigen::MatrixXd L;   // Cholesky factor of the posterior precision
  Eigen::VectorXd v;   // L^{-1} b / sigma2
};

// Slice sampler with stepping out (Neal 2003) on a scalar log density.
template <class F>
double slice_sample(double x0, F&& logf, Rng& rng, double width = 1.0, int max_steps = 64) {
  const double fx0 = logf(x0);
  const double y = fx0 - rng.exponential();
  double lo = x0 - width * rng.uniform();
  double hi = lo + width;
  int j = static_cast<int>(std::floor(max_steps * rng.uniform()));
  int k = max_steps - 1 - j;
  while (j-- > 0 && logf(lo) > y) lo -= width;
  while (k-- > 0 && logf(hi) > y) hi += width;
  for (int it = 0; it < 200; ++it) {
    const double x1 = lo + rng.uniform() * (hi - lo);
    if (logf(x1) >= y) return x1;
    if (x1 < x0)
      lo = x1;
    else
      hi = x1;
  }
  return x0;
}

class Sampler {
 public:
  Sampler(const ModelSpec& spec, const Dataset& data, const McmcControl& control, const EngineHooks& hooks,
          std::uint64_t seed)
      : spec_(spec), data_(data), control_(control), hooks_(hooks), rng_(seed), seed_(seed) {
    n_ = data.n();
    T_ = static_cast<int>(data.lags());
    M_ = static_cast<int>(data.num_exposures());
    p_ = data.design.cols();
    P_ = spec.het ? spec.modifiers.size() : 0;
    paired_ = spec.mixture;
    inter_ = spec.interactions();
    A_ = spec.tree_prior.num_trees;
    check_inputs();
    build_cumulative();
    if (spec.het) map_modifiers();
  }

  PosteriorFit run() {
    initialise();
    PosteriorFit fit = make_fit_shell();
    const int total = control_.n_burn + control_.n_iter;
    int kept = 0;
    for (int it = 0; it < total; ++it) {
      const bool post = it >= control_.n_burn;
      log_row_.setZero(TreeLogLayout::width());
      iterate(it);
      if (hooks_.check_invariants) fit.invariant_violations += check_invariants();
      if (post) {
        const int j = it - control_.n_burn;
        fit.tree_log.row(j) = log_row_.transpose();
        if ((j + 1) % control_.n_thin == 0) record(fit, kept++);
      }
      if (control_.verbose && (it + 1) % std::max(1, total / 10) == 0) report_progress(it + 1, total, fit);
    }
    return fit;
  }

 private:
  const ModelSpec& spec_;
  const Dataset& data_;
  const McmcControl& control_;
  EngineHooks hooks_;
  Rng rng_;
  std::uint64_t seed_;

  Eigen::Index n_ = 0;
  int T_ = 0;
  int M_ = 0;
  Eigen::Index p_ = 0;
  std::size_t P_ = 0;
  bool paired_ = false;
  bool inter_ = false;
  int A_ = 0;

  std::vector<Eigen::MatrixXd> cum_;        // per exposure n x (T + 1) prefix sums over lags
  std::vector<ModifierColumn> mod_columns_; // aligned with spec_.modifiers

  std::vector<Unit> units_;
  Eigen::VectorXd z_;        // working response
  Eigen::VectorXd sw_;       // square-root weights
  Eigen::MatrixXd Q_;        // orthonormal basis of weighted design
  Eigen::MatrixXd Zs_;       // weighted design
  Eigen::VectorXd partial_;  // z - sum of unit fits
  Eigen::VectorXd gamma_;
  double sigma2_ = 1.0;
  double tau_ = 1.0;
  std::vector<double> select_prob_;
  std::vector<double> mod_prob_;
  double mod_kappa_ = 1.0;
  Eigen::VectorXd log_row_;
  double accept_rolling_ = 0.0;

  bool logit() const { return spec_.family == Family::logit; }

  void check_inputs() {
    spec_.validate();
    control_.validate();
    data_.validate();
    if (logit())
      for (Eigen::Index i = 0; i < n_; ++i)
        if (data_.outcome[i] != 0.0 && data_.outcome[i] != 1.0)
          throw DataError("logit family requires a 0/1 outcome (row " + std::to_string(i + 1) + ")");
    if (spec_.mixture && M_ < 2) throw UsageError("mixture models need at least two exposures");
    if (!spec_.mixture && M_ != 1) throw UsageError("models with several exposures require the mixture option");
    if (inter_)
      for (const auto& e : data_.exposures)
        if (e.centered) throw DataError("centered exposures cannot be used with lagged interactions");
    if (spec_.het && data_.modifiers.empty()) throw DataError("heterogeneous model requires modifier columns");
  }

  void map_modifiers() {
    for (const auto& def : spec_.modifiers) {
      const std::size_t j = data_.modifier_index(def.name);
      mod_columns_.push_back(data_.modifiers[j]);
    }
  }

  void build_cumulative() {
    cum_.resize(static_cast<std::size_t>(M_));
    for (int m = 0; m < M_; ++m) {
      const auto& x = data_.exposures[m].values;
      Eigen::MatrixXd c(n_, T_ + 1);
      c.col(0).setZero();
      for (int t = 1; t <= T_; ++t) c.col(t) = c.col(t - 1) + x.col(t - 1);
      cum_[m] = std::move(c);
    }
  }

  // --- design construction -------------------------------------------------

  Eigen::MatrixXd tree_columns(const DlmTree& tree, int exposure) const {
    const auto term = tree.terminals();
    Eigen::MatrixXd B(n_, static_cast<Eigen::Index>(term.size()));
    const auto& c = cum_[exposure];
    for (std::size_t k = 0; k < term.size(); ++k) {
      const auto& nd = tree.node(term[k]);
      B.col(static_cast<Eigen::Index>(k)) = c.col(nd.hi) - c.col(nd.lo - 1);
    }
    return B;
  }

  int block_size(const DlmTree& t1, const DlmTree& t2) const {
    const int c1 = t1.num_terminals();
    if (!paired_) return c1;
    const int c2 = t2.num_terminals();
    return c1 + c2 + (inter_ ? c1 * c2 : 0);
  }

  Eigen::MatrixXd design(const std::vector<int>& leaf_of_row, int leaves, const DlmTree& t1, const DlmTree& t2, int s1,
                         int s2) const {
    Eigen::MatrixXd base;
    if (!paired_) {
      base = tree_columns(t1, s1);
    } else {
      const Eigen::MatrixXd B1 = tree_columns(t1, s1);
      const Eigen::MatrixXd B2 = tree_columns(t2, s2);
      const Eigen::Index c1 = B1.cols(), c2 = B2.cols();
      base.resize(n_, c1 + c2 + (inter_ ? c1 * c2 : 0));
      base.leftCols(c1) = B1;
      base.middleCols(c1, c2) = B2;
      if (inter_)
        for (Eigen::Index a = 0; a < c1; ++a)
          for (Eigen::Index b = 0; b < c2; ++b) base.col(c1 + c2 + a * c2 + b) = B1.col(a).cwiseProduct(B2.col(b));
    }
    if (leaves == 1) return base;
    const Eigen::Index k = base.cols();
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n_, k * leaves);
    for (Eigen::Index i = 0; i < n_; ++i) D.row(i).segment(leaf_of_row[i] * k, k) = base.row(i);
    return D;
  }

  Eigen::MatrixXd design(const Unit& u) const {
    return design(u.leaf_of_row, u.mod.num_leaves(), u.tree1, u.tree2, u.s1, u.s2);
  }

  // --- collapsed marginal likelihood -----------------------------------------

  Marginal marginal(const Eigen::MatrixXd& D, const Eigen::VectorXd& r) const {
    const Eigen::Index q = D.cols();
    Eigen::MatrixXd Ds;
    Eigen::VectorXd rs;
    if (logit()) {
      Ds = sw_.asDiagonal() * D;
      rs = sw_.cwiseProduct(r);
    } else {
      Ds = D;
      rs = r;
    }
    const Eigen::MatrixXd QtD = Q_.transpose() * Ds;
    const Eigen::VectorXd Qtr = Q_.transpose() * rs;
    Eigen::MatrixXd G = Ds.transpose() * Ds;
    G.noalias() -= QtD.transpose() * QtD;
    Eigen::VectorXd b = Ds.transpose() * rs;
    b.noalias() -= QtD.transpose() * Qtr;
    const double tau2 = tau_ * tau_;
    Eigen::MatrixXd Prec = G / sigma2_;
    Prec.diagonal().array() += 1.0 / tau2;
    Eigen::LLT<Eigen::MatrixXd> llt(Prec);
    Marginal out;
    out.L = llt.matrixL();
    out.v = out.L.triangularView<Eigen::Lower>().solve(b / sigma2_);
    const double logdet = 2.0 * out.L.diagonal().array().log().sum();
    out.log_ml = -0.5 * static_cast<double>(q) * std::log(tau2) - 0.5 * logdet + 0.5 * out.v.squaredNorm();
    return out;
  }

  Eigen::VectorXd draw_coefficients(const Marginal& m) {
    Eigen::VectorXd xi(m.v.size());
    for (Eigen::Index k = 0; k < xi.size(); ++k) xi[k] = rng_.normal();
    return m.L.transpose().triangularView<Eigen::Upper>().solve(m.v + xi);
  }

  // --- state ---------------------------------------------------------------

  void refresh_weights() {
    const Eigen::MatrixXd& Z = data_.design;
    Zs_ = logit() ? Eigen::MatrixXd(sw_.asDiagonal() * Z) : Z;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Zs_);
    Q_ = qr.householderQ() * Eigen::MatrixXd::Identity(n_, p_);
  }

  void set_leaves(Unit& u) const {
    if (P_ == 0) {
      u.leaf_of_row.assign(static_cast<std::size_t>(n_), 0);
      u.leaf_sizes.assign(1, static_cast<int>(n_));
      return;
    }
    u.leaf_of_row = u.mod.assign_all(mod_columns_, spec_.modifiers);
    u.leaf_sizes.assign(static_cast<std::size_t>(u.mod.num_leaves()), 0);
    for (int l : u.leaf_of_row) ++u.leaf_sizes[static_cast<std::size_t>(l)];
  }

  void initialise() {
    units_.assign(static_cast<std::size_t>(A_), Unit{});
    for (int a = 0; a < A_; ++a) {
      Unit& u = units_[a];
      u.tree1 = DlmTree(T_);
      u.s1 = paired_ ? a % M_ : 0;
      if (paired_) {
        u.tree2 = DlmTree(T_);
        u.s2 = (a + 1) % M_;
      }
      set_leaves(u);
      u.coef = Eigen::VectorXd::Zero(block_size(u.tree1, u.tree2) * u.mod.num_leaves());
      u.fit = Eigen::VectorXd::Zero(n_);
    }
    select_prob_.assign(static_cast<std::size_t>(M_), 1.0 / M_);
    if (P_ > 0) mod_prob_.assign(P_, 1.0 / static_cast<double>(P_));
    mod_kappa_ = 1.0;
    tau_ = hooks_.fixed_tau2 ? std::sqrt(*hooks_.fixed_tau2) : spec_.shrinkage.tau_scale;
    sw_ = Eigen::VectorXd::Ones(n_);
    refresh_weights();
    if (logit()) {
      gamma_ = Eigen::VectorXd::Zero(p_);
      z_ = Eigen::VectorXd::Zero(n_);
      sigma2_ = 1.0;
    } else {
      z_ = data_.outcome;
      const Eigen::MatrixXd& Z = data_.design;
      gamma_ = Z.colPivHouseholderQr().solve(z_);
      const Eigen::VectorXd res = z_ - Z * gamma_;
      sigma2_ = hooks_.fixed_sigma2 ? *hooks_.fixed_sigma2 : std::max(res.squaredNorm() / static_cast<double>(n_), 1e-8);
    }
    partial_ = z_;
  }

  // --- sweep ---------------------------------------------------------------

  void iterate(int it) {
    if (logit()) update_latents();
    std::array<double, 3> size_sum{0.0, 0.0, 0.0};
    for (auto& u : units_) {
      update_unit(u, it);
      size_sum[0] += u.tree1.num_terminals();
      if (paired_) size_sum[1] += u.tree2.num_terminals();
      if (spec_.het) size_sum[2] += u.mod.num_leaves();
    }
    for (int k = 0; k < 3; ++k) log_row_[TreeLogLayout::mean_size(k)] = size_sum[k] / A_;
    if (!paired_) log_row_[TreeLogLayout::mean_size(1)] = 0.0;
    update_gamma();
    if (!logit()) update_sigma2();
    update_tau();
    if (it >= control_.n_burn / 2) {
      if (paired_) update_selection_probs();
      if (P_ > 0) update_modifier_probs();
    }
  }

  void update_latents() {
    const Eigen::VectorXd fit_total = z_ - partial_;
    const Eigen::VectorXd eta = data_.design * gamma_ + fit_total;
    for (Eigen::Index i = 0; i < n_; ++i) {
      const double w = std::max(sample_polya_gamma(1.0, eta[i], rng_), 1e-12);
      sw_[i] = std::sqrt(w);
      z_[i] = (data_.outcome[i] - 0.5) / w;
    }
    partial_ = z_ - fit_total;
    refresh_weights();
  }

  bool accept(double log_ratio) {
    if (hooks_.accept_all) return true;
    return std::log(rng_.uniform_pos()) < log_ratio;
  }

  void log_move(StructureKind kind, MoveKind move, bool accepted) {
    const int k = static_cast<int>(kind), m = static_cast<int>(move);
    log_row_[TreeLogLayout::proposed(k, m)] += 1.0;
    log_row_[accepted ? TreeLogLayout::accepted(k, m) : TreeLogLayout::rejected(k, m)] += 1.0;
    accept_rolling_ = 0.99 * accept_rolling_ + 0.01 * (accepted ? 1.0 : 0.0);
  }

  void update_unit(Unit& u, int it) {
    (void)it;
    const Eigen::VectorXd r = partial_ + u.fit;
    if (hooks_.freeze_trees) return;
    Eigen::MatrixXd D = design(u);
    Marginal cur = marginal(D, r);

    if (P_ > 0) {
      ModifierProposal prop;
      if (propose_modifier_move(u.mod, spec_.tree_prior, spec_.modifiers, mod_prob_, rng_, prop, spec_.moves)) {
        Unit cand;
        cand.mod = prop.tree;
        set_leaves(cand);
        bool ok = std::all_of(cand.leaf_sizes.begin(), cand.leaf_sizes.end(), [](int s) { return s > 0; });
        bool accepted = false;
        if (ok) {
          Eigen::MatrixXd Dn = design(cand.leaf_of_row, cand.mod.num_leaves(), u.tree1, u.tree2, u.s1, u.s2);
          Marginal mn = marginal(Dn, r);
          if (accept(mn.log_ml - cur.log_ml + prop.log_prior_ratio + prop.log_transition_ratio)) {
            u.mod = std::move(cand.mod);
            u.leaf_of_row = std::move(cand.leaf_of_row);
            u.leaf_sizes = std::move(cand.leaf_sizes);
            D = std::move(Dn);
            cur = std::move(mn);
            accepted = true;
          }
        }
        log_move(StructureKind::modifier, prop.kind, accepted);
      }
    }

    for (int which = 0; which < (paired_ ? 2 : 1); ++which) {
      DlmTree& tree = which == 0 ? u.tree1 : u.tree2;
      DlmProposal prop = propose_move(tree, spec_.tree_prior, rng_, spec_.moves);
      const DlmTree& t1 = which == 0 ? prop.tree : u.tree1;
      const DlmTree& t2 = which == 0 ? u.tree2 : prop.tree;
      Eigen::MatrixXd Dn = design(u.leaf_of_row, u.mod.num_leaves(), t1, t2, u.s1, u.s2);
      Marginal mn = marginal(Dn, r);
      const bool ok = accept(mn.log_ml - cur.log_ml + prop.log_prior_ratio + prop.log_transition_ratio);
      if (ok) {
        tree = std::move(prop.tree);
        D = std::move(Dn);
        cur = std::move(mn);
      }
      log_move(which == 0 ? StructureKind::tree1 : StructureKind::tree2, prop.kind, ok);
    }

    if (paired_) {
      for (int slot = 0; slot < 2; ++slot) {
        const int partner = slot == 0 ? u.s2 : u.s1;
        const int excluded = spec_.interaction == InteractionMode::noself ? partner : -1;
        std::vector<double> lml(static_cast<std::size_t>(M_), -std::numeric_limits<double>::infinity());
        std::vector<Marginal> ms(static_cast<std::size_t>(M_));
        std::vector<Eigen::MatrixXd> Ds(static_cast<std::size_t>(M_));
        const int current = slot == 0 ? u.s1 : u.s2;
        for (int m = 0; m < M_; ++m) {
          if (m == excluded) continue;
          if (m == current) {
            lml[m] = cur.log_ml;
            continue;
          }
          const int a = slot == 0 ? m : u.s1;
          const int b = slot == 0 ? u.s2 : m;
          Ds[m] = design(u.leaf_of_row, u.mod.num_leaves(), u.tree1, u.tree2, a, b);
          ms[m] = marginal(Ds[m], r);
          lml[m] = ms[m].log_ml;
        }
        const int pick = update_exposure_assignment(lml, select_prob_, excluded, rng_);
        if (pick != current) {
          (slot == 0 ? u.s1 : u.s2) = pick;
          D = std::move(Ds[pick]);
          cur = std::move(ms[pick]);
        }
      }
    }

    u.coef = draw_coefficients(cur);
    Eigen::VectorXd f = D * u.coef;
    partial_ += u.fit - f;
    u.fit = std::move(f);
  }

  void update_gamma() {
    const Eigen::VectorXd ys = logit() ? Eigen::VectorXd(sw_.cwiseProduct(partial_)) : partial_;
    const Eigen::MatrixXd K = Zs_.transpose() * Zs_;
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    const Eigen::VectorXd mean = llt.solve(Zs_.transpose() * ys);
    Eigen::VectorXd xi(p_);
    for (Eigen::Index k = 0; k < p_; ++k) xi[k] = rng_.normal();
    const Eigen::MatrixXd L = llt.matrixL();
    gamma_ = mean + std::sqrt(sigma2_) * L.transpose().triangularView<Eigen::Upper>().solve(xi);
  }

  void update_sigma2() {
    if (hooks_.fixed_sigma2) {
      sigma2_ = *hooks_.fixed_sigma2;
      return;
    }
    const Eigen::VectorXd res = partial_ - data_.design * gamma_;
    const double shape = kSigmaPriorShape + 0.5 * static_cast<double>(n_);
    const double rate = kSigmaPriorRate + 0.5 * res.squaredNorm();
    sigma2_ = 1.0 / rng_.gamma(shape, 1.0 / rate);
  }

  void update_tau() {
    if (hooks_.fixed_tau2) {
      tau_ = std::sqrt(*hooks_.fixed_tau2);
      return;
    }
    if (hooks_.freeze_trees) return;
    double ss = 0.0;
    double q = 0.0;
    for (const auto& u : units_) {
      ss += u.coef.squaredNorm();
      q += static_cast<double>(u.coef.size());
    }
    const double s2 = spec_.shrinkage.tau_scale * spec_.shrinkage.tau_scale;
    auto logf = [&](double x) {
      const double e2 = std::exp(2.0 * x);
      return -q * x - 0.5 * ss / e2 - std::log1p(e2 / s2) + x;
    };
    tau_ = std::exp(slice_sample(std::log(tau_), logf, rng_));
  }

  void update_selection_probs() {
    std::vector<double> alpha(static_cast<std::size_t>(M_), spec_.kappa / M_);
    for (const auto& u : units_) {
      alpha[u.s1] += 1.0;
      alpha[u.s2] += 1.0;
    }
    select_prob_ = rng_.dirichlet(alpha);
  }

  static double log_dirichlet(std::span<const double> s, double conc) {
    const double P = static_cast<double>(s.size());
    double out = std::lgamma(conc) - P * std::lgamma(conc / P);
    for (double v : s) out += (conc / P - 1.0) * std::log(std::max(v, 1e-300));
    return out;
  }

  void update_modifier_probs() {
    std::vector<double> counts(P_, 0.0);
    for (const auto& u : units_) u.mod.split_counts(counts);
    std::vector<double> alpha(P_);
    for (std::size_t j = 0; j < P_; ++j) alpha[j] = mod_kappa_ / static_cast<double>(P_) + counts[j];
    mod_prob_ = rng_.dirichlet(alpha);
    // Concentration: rho = kappa / (kappa + P) ~ Beta(sparsity, 1), independence proposal from the prior.
    const double P = static_cast<double>(P_);
    const double rho = rng_.beta(spec_.modifier_sparsity, 1.0);
    const double prop = std::max(P * rho / std::max(1.0 - rho, 1e-12), 1e-8);
    if (std::log(rng_.uniform_pos()) < log_dirichlet(mod_prob_, prop) - log_dirichlet(mod_prob_, mod_kappa_))
      mod_kappa_ = prop;
  }

  // --- bookkeeping ---------------------------------------------------------

  PosteriorFit make_fit_shell() const {
    PosteriorFit fit;
    fit.spec = spec_;
    fit.control = control_;
    fit.chain_seed = seed_;
    fit.data.n = n_;
    fit.data.lags = T_;
    fit.data.outcome_name = data_.outcome_name;
    fit.data.design_names = data_.design_names;
    for (const auto& e : data_.exposures) {
      fit.data.exposure_names.push_back(e.name);
      fit.data.scale_factors.push_back(e.scale_factor);
      fit.data.centered.push_back(e.centered);
      fit.exposures.push_back(e.values);
    }
    fit.data.hash = data_hash(data_);
    fit.modifier_columns = mod_columns_;
    const auto R = static_cast<Eigen::Index>(control_.retained());
    fit.gamma.resize(R, p_);
    fit.sigma2.resize(R);
    fit.tau.resize(R);
    fit.theta.assign(static_cast<std::size_t>(M_), Eigen::MatrixXd::Zero(R, T_));
    fit.selection_counts = Eigen::MatrixXd::Zero(R, M_);
    fit.modifier_usage = Eigen::MatrixXd::Zero(R, static_cast<Eigen::Index>(P_));
    fit.snr.resize(R);
    fit.tree_log = Eigen::MatrixXd::Zero(control_.n_iter, TreeLogLayout::width());
    fit.record_offsets.push_back(0.0);
    return fit;
  }

  UnitRecord unit_record(const Unit& u) const {
    UnitRecord rec;
    rec.mod = u.mod;
    rec.exposure1 = u.s1;
    rec.exposure2 = paired_ ? u.s2 : -1;
    rec.interactions = inter_;
    const int L = u.mod.num_leaves();
    const int k = block_size(u.tree1, u.tree2);
    const int c1 = u.tree1.num_terminals();
    const int c2 = paired_ ? u.tree2.num_terminals() : 0;
    for (int l = 0; l < L; ++l) {
      TreePair leaf;
      leaf.exposure1 = rec.exposure1;
      leaf.exposure2 = rec.exposure2;
      const double* base = u.coef.data() + static_cast<std::ptrdiff_t>(l) * k;
      leaf.tree1 = u.tree1;
      leaf.tree1.set_effects(std::span<const double>(base, static_cast<std::size_t>(c1)));
      if (paired_) {
        leaf.tree2 = u.tree2;
        leaf.tree2.set_effects(std::span<const double>(base + c1, static_cast<std::size_t>(c2)));
        leaf.omega = Eigen::MatrixXd::Zero(c1, c2);
        if (inter_)
          for (int a = 0; a < c1; ++a)
            for (int b = 0; b < c2; ++b) leaf.omega(a, b) = base[c1 + c2 + a * c2 + b];
      }
      rec.leaves.push_back(std::move(leaf));
    }
    return rec;
  }

  void record(PosteriorFit& fit, int k) const {
    fit.gamma.row(k) = gamma_.transpose();
    fit.sigma2[k] = sigma2_;
    fit.tau[k] = tau_;
    EnsembleRecord ens;
    ens.reserve(units_.size());
    Eigen::VectorXd f_total = Eigen::VectorXd::Zero(n_);
    for (const auto& u : units_) {
      f_total += u.fit;
      UnitRecord rec = unit_record(u);
      for (std::size_t l = 0; l < rec.leaves.size(); ++l) {
        const double w = static_cast<double>(u.leaf_sizes[l]) / static_cast<double>(n_);
        for (const auto& [tree, s] : {std::pair{&rec.leaves[l].tree1, u.s1}, std::pair{&rec.leaves[l].tree2, u.s2}}) {
          if (s < 0 || tree->lags() == 0) continue;
          for (int i : tree->terminals()) {
            const auto& nd = tree->node(i);
            fit.theta[s].row(k).segment(nd.lo - 1, nd.length()).array() += w * nd.effect;
          }
        }
      }
      fit.selection_counts(k, u.s1) += 1.0;
      if (paired_) fit.selection_counts(k, u.s2) += 1.0;
      if (P_ > 0) {
        const auto used = u.mod.used(P_);
        for (std::size_t j = 0; j < P_; ++j)
          if (used[j]) fit.modifier_usage(k, static_cast<Eigen::Index>(j)) = 1.0;
      }
      ens.push_back(std::move(rec));
    }
    const double mean_f = f_total.mean();
    const double var_f = (f_total.array() - mean_f).square().sum() / static_cast<double>(n_);
    fit.snr[k] = var_f / sigma2_;
    serialize_ensemble(ens, fit.records);
    fit.record_offsets.push_back(static_cast<double>(fit.records.size()));
  }

  std::int64_t check_invariants() const {
    std::int64_t bad = 0;
    Eigen::VectorXd f_total = Eigen::VectorXd::Zero(n_);
    std::vector<int> counts(static_cast<std::size_t>(M_), 0);
    for (const auto& u : units_) {
      if (!u.tree1.valid()) ++bad;
      if (paired_ && !u.tree2.valid()) ++bad;
      if (u.coef.size() != static_cast<Eigen::Index>(block_size(u.tree1, u.tree2)) * u.mod.num_leaves()) {
        ++bad;
        continue;
      }
      if (spec_.interaction == InteractionMode::noself && u.s1 == u.s2) ++bad;
      if (P_ > 0) {
        const auto fresh = u.mod.assign_all(mod_columns_, spec_.modifiers);
        if (fresh != u.leaf_of_row) ++bad;
        std::vector<int> sizes(static_cast<std::size_t>(u.mod.num_leaves()), 0);
        for (int l : fresh) {
          if (l < 0 || l >= u.mod.num_leaves()) {
            ++bad;
            break;
          }
          ++sizes[static_cast<std::size_t>(l)];
        }
        if (std::accumulate(sizes.begin(), sizes.end(), 0) != n_) ++bad;
      }
      f_total += design(u) * u.coef;
      ++counts[u.s1];
      if (paired_) ++counts[u.s2];
    }
    if (paired_ && std::accumulate(counts.begin(), counts.end(), 0) != 2 * A_) ++bad;
    if (!logit()) {
      const Eigen::VectorXd carried = partial_ - data_.design * gamma_;
      const Eigen::VectorXd fresh = data_.outcome - data_.design * gamma_ - f_total;
      if ((carried - fresh).cwiseAbs().maxCoeff() > 1e-10) ++bad;
    }
    return bad;
  }

  void report_progress(int done, int total, const PosteriorFit&) const {
    std::cerr << "chain seed " << seed_ << ": iteration " << done << "/" << total << ", rolling acceptance "
              << accept_rolling_ << "\n";
  }
};

}  // namespace engine_detail

inline PosteriorFit fit(const ModelSpec& spec, const Dataset& data, const McmcControl& control,
                        const EngineHooks& hooks = {}) {
  engine_detail::Sampler s(spec, data, control, hooks, control.seed);
  return s.run();
}

inline unsigned chain_threads(int chains) {
  unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LAGGARD_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) cap = static_cast<unsigned>(v);
  }
  return std::min(cap, static_cast<unsigned>(chains));
}

// Chains use seeds seed, seed + 1, ...; output does not depend on the thread count.
inline std::vector<PosteriorFit> run_chains(const ModelSpec& spec, const Dataset& data, const McmcControl& control,
                                            const EngineHooks& hooks = {}) {
  control.validate();
  const int chains = control.n_chains;
  std::vector<PosteriorFit> out(static_cast<std::size_t>(chains));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chains));
  auto work = [&](int c) {
    try {
      McmcControl cc = control;
      cc.seed = control.seed + static_cast<std::uint64_t>(c);
      engine_detail::Sampler s(spec, data, cc, hooks, cc.seed);
      out[c] = s.run();
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  const unsigned threads = chain_threads(chains);
  if (threads <= 1) {
    for (int c = 0; c < chains; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int c = next++; c < chains; c = next++) work(c);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace laggard
