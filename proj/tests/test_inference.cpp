#include <gtest/gtest.h>

#include <numeric>

#include "helpers.hpp"
#include "laggard/laggard.hpp"

using namespace laggard;
using namespace testing_support;

namespace {

const PosteriorFit& single_fit() {
  static const PosteriorFit f = fit_single(1);
  return f;
}

const PosteriorFit& noself_fit() {
  static const PosteriorFit f = fit_mixture(InteractionMode::noself, 1);
  return f;
}

const PosteriorFit& all_fit() {
  static const PosteriorFit f = fit_mixture(InteractionMode::all, 2);
  return f;
}

const PosteriorFit& none_fit() {
  static const PosteriorFit f = fit_mixture(InteractionMode::none, 3);
  return f;
}

const PosteriorFit& het_fit() {
  static const PosteriorFit f = fit_het(1);
  return f;
}

// Marginal effect computed from full T x T interaction grids.
std::vector<Eigen::MatrixXd> grid_marginal(const PosteriorFit& fit, const Eigen::MatrixXd& lev) {
  const int T = fit.lags();
  std::vector<Eigen::MatrixXd> out = fit.theta;
  for (std::size_t r = 0; r < fit.retained(); ++r)
    for (const auto& u : fit.record(r)) {
      if (!u.interactions) continue;
      const auto pe = pair_effects(u.leaves.front(), T);
      const auto row = static_cast<Eigen::Index>(r);
      out[u.exposure1].row(row) += (pe.interaction * lev.row(u.exposure2).transpose()).transpose();
      out[u.exposure2].row(row) += lev.row(u.exposure1) * pe.interaction;
    }
  return out;
}

}  // namespace

TEST(CriticalWindows, DefinitionExamples) {
  const std::vector<double> lo{-0.1, -0.1, 0.01}, up{-0.02, 0.05, 0.05};
  EXPECT_EQ(critical_windows(lo, up), (std::vector<LagRun>{{1, 1}, {3, 3}}));
  const std::vector<double> l0{-1, -1}, u0{1, 1};
  EXPECT_TRUE(critical_windows(l0, u0).empty());
}

TEST(CriticalWindows, RenderedLikeReport) {
  std::vector<double> lo(37, -1.0), up(37, 1.0);
  for (int t = 11; t <= 20; ++t) lo[t - 1] = 0.1;
  for (int t = 36; t <= 37; ++t) up[t - 1] = -0.1;
  EXPECT_EQ(render_windows(critical_windows(lo, up)), "11-20,36-37");
}

TEST(CumulativeEffect, Arithmetic) {
  Eigen::MatrixXd d(2, 2);
  d << 1, 1, 3, 3;
  EXPECT_EQ(cumulative_effect(d).mean, 4.0);
  Eigen::MatrixXd anti(4, 3);
  anti << 0.2, -0.5, 1.0, -0.2, 0.5, -1.0, 3.0, 0.0, 0.1, -3.0, 0.0, -0.1;
  EXPECT_NEAR(cumulative_effect(anti).mean, 0.0, 1e-15);
}

TEST(CumulativeEffect, Linearity) {
  const auto& f = single_fit();
  const Eigen::MatrixXd B = f.theta[0].array().square();
  EXPECT_NEAR(cumulative_effect(f.theta[0] + B).mean, cumulative_effect(f.theta[0]).mean + cumulative_effect(B).mean,
              1e-12);
}

TEST(Summarize, IntervalCoherenceAndNesting) {
  const auto& f = single_fit();
  const auto wide = summarize(f, 0.95);
  const auto narrow = summarize(f, 0.5);
  const auto& w = wide.exposures[0].curve.table;
  const auto& n = narrow.exposures[0].curve.table;
  ASSERT_EQ(w.size(), 10u);
  for (std::size_t t = 0; t < w.size(); ++t) {
    EXPECT_LE(w.lower[t], w.mean[t]);
    EXPECT_LE(w.mean[t], w.upper[t]);
    EXPECT_LE(w.lower[t], n.lower[t]);
    EXPECT_GE(w.upper[t], n.upper[t]);
    EXPECT_EQ(w.critical[t], stats::excludes_zero(w.lower[t], w.upper[t]));
  }
  EXPECT_EQ(wide.exposures[0].curve.windows, critical_windows(w.lower, w.upper));
  EXPECT_THROW(summarize(f, 1.0), UsageError);
  ASSERT_TRUE(wide.residual_se.has_value());
  EXPECT_NEAR(*wide.residual_se, f.sigma2.array().sqrt().mean(), 1e-15);
}

TEST(Summarize, ZeroDrawsGiveZeroIntervals) {
  const auto sim = small_single(1);
  EngineHooks h;
  h.freeze_trees = true;
  const auto f = fit(ModelSpec{}, sim.data, short_control(5, 20, 1), h);
  const auto s = summarize(f);
  const auto& c = s.exposures[0].curve;
  for (std::size_t t = 0; t < c.table.size(); ++t) {
    EXPECT_EQ(c.table.lower[t], 0.0);
    EXPECT_EQ(c.table.upper[t], 0.0);
  }
  EXPECT_TRUE(c.windows.empty());
  EXPECT_EQ(c.cumulative.mean, 0.0);
}

TEST(Marginalize, ParsePolicies) {
  EXPECT_EQ(parse_marginalize("mean").kind, MarginalizePolicy::Kind::mean);
  const auto q = parse_marginalize("q25");
  EXPECT_EQ(q.kind, MarginalizePolicy::Kind::percentile);
  EXPECT_EQ(q.q, 25.0);
  EXPECT_FALSE(q.pooled);
  EXPECT_TRUE(parse_marginalize("q75:pooled").pooled);
  EXPECT_EQ(parse_marginalize("10").q, 10.0);
  EXPECT_EQ(parse_marginalize("levels=1,2.5,-3").levels, (std::vector<double>{1, 2.5, -3}));
  EXPECT_EQ(parse_marginalize("levels=1,2.5").describe(), "levels=1,2.5");
  EXPECT_THROW(parse_marginalize("median"), UsageError);
  EXPECT_THROW(parse_marginalize("q150"), UsageError);
  EXPECT_THROW(parse_marginalize("q5:foo"), UsageError);
}

TEST(Marginalize, MeanEqualsEmpiricalLevelsBitExact) {
  for (const auto* f : {&noself_fit(), &all_fit()}) {
    const auto a = marginal_effects(*f, MarginalizePolicy::mean());
    const auto b = marginal_effects(*f, MarginalizePolicy::at_levels(empirical_means(*f)));
    for (std::size_t m = 0; m < a.size(); ++m) EXPECT_TRUE((a[m].array() == b[m].array()).all());
  }
}

TEST(Marginalize, ModeNoneIsPolicyInvariant) {
  const auto& f = none_fit();
  const auto base = marginal_effects(f, MarginalizePolicy::mean());
  for (const auto& p : {MarginalizePolicy::percentile(10), MarginalizePolicy::percentile(90, true),
                        MarginalizePolicy::at_levels({5.0, -5.0, 2.0})}) {
    const auto other = marginal_effects(f, p);
    for (std::size_t m = 0; m < base.size(); ++m) {
      EXPECT_TRUE((other[m].array() == base[m].array()).all());
      EXPECT_TRUE((other[m].array() == f.theta[m].array()).all());
    }
  }
}

TEST(Marginalize, MatchesGridOracle) {
  for (const auto* f : {&noself_fit(), &all_fit()}) {
    for (const auto& p : {MarginalizePolicy::mean(), MarginalizePolicy::percentile(80),
                          MarginalizePolicy::at_levels({1.0, -0.5, 2.0})}) {
      const auto got = marginal_effects(*f, p);
      const auto want = grid_marginal(*f, coexposure_levels(*f, p));
      for (std::size_t m = 0; m < got.size(); ++m) EXPECT_LE((got[m] - want[m]).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(Marginalize, PercentileLevelsPerLagAndPooled) {
  const auto& f = noself_fit();
  const auto per = coexposure_levels(f, MarginalizePolicy::percentile(50));
  const auto pooled = coexposure_levels(f, MarginalizePolicy::percentile(50, true));
  const auto& x = f.exposures[1];
  std::vector<double> col(x.col(3).data(), x.col(3).data() + x.rows());
  EXPECT_EQ(per(1, 3), stats::quantile(col, 0.5));
  std::vector<double> all(x.data(), x.data() + x.size());
  EXPECT_EQ(pooled(1, 0), stats::quantile(all, 0.5));
  EXPECT_EQ(pooled(1, 0), pooled(1, 7));
}

TEST(Marginalize, LevelsLengthMismatchNamesOrder) {
  try {
    coexposure_levels(noself_fit(), MarginalizePolicy::at_levels({1.0}));
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("e1, e2, e3"), std::string::npos);
  }
  EXPECT_THROW(marginal_effects(single_fit(), MarginalizePolicy::mean()), UsageError);
}

TEST(Interactions, PairsByMode) {
  EXPECT_EQ(interaction_pairs(noself_fit()).size(), 3u);
  EXPECT_EQ(interaction_pairs(all_fit()).size(), 6u);
  EXPECT_TRUE(interaction_pairs(none_fit()).empty());
}

TEST(Interactions, SelfSurfacesAreSymmetric) {
  const auto& f = all_fit();
  const int T = f.lags();
  for (int m = 0; m < 3; ++m) {
    const auto d = interaction_draws(f, {m, m});
    for (Eigen::Index r = 0; r < d.rows(); r += 13)
      for (int a = 0; a < T; ++a)
        for (int b = 0; b < T; ++b) EXPECT_EQ(d(r, a * T + b), d(r, b * T + a));
  }
}

TEST(Interactions, SummaryCountsCells) {
  const auto s = summarize_interactions(noself_fit(), 0.95);
  ASSERT_EQ(s.size(), 3u);
  double top = 0.0;
  for (const auto& it : s) {
    EXPECT_EQ(it.cells, 64u);
    top = std::max(top, it.relative_size);
    std::size_t sig = 0;
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) {
        EXPECT_LE(it.lower(a, b), it.mean(a, b));
        EXPECT_LE(it.mean(a, b), it.upper(a, b));
        sig += stats::excludes_zero(it.lower(a, b), it.upper(a, b)) ? 1 : 0;
      }
    EXPECT_EQ(sig, it.significant_cells);
  }
  EXPECT_EQ(top, 1.0);
}

TEST(Selection, PriorExclusionOracle) {
  // M = 2, kappa = 2 (alpha = 1 each): P(no slot for one exposure) with n
  // slots under a uniform Dirichlet is 1 / (n + 1).
  for (int n : {1, 4, 40}) EXPECT_NEAR(prior_exclusion(2, 2.0, n), 1.0 / (n + 1), 1e-12);
  // Large kappa approaches independent uniform slots.
  EXPECT_NEAR(prior_exclusion(3, 1e9, 5), std::pow(2.0 / 3.0, 5), 1e-6);
}

TEST(Selection, SingleExposureTriviallySelected) {
  const auto s = exposure_selection(single_fit());
  ASSERT_EQ(s.size(), 1u);
  EXPECT_TRUE(s[0].selected);
  EXPECT_TRUE(std::isinf(s[0].bayes_factor));
  EXPECT_EQ(s[0].relative_size, 1.0);
}

TEST(Selection, NeverAssignedExposureNotSelected) {
  PosteriorFit f = noself_fit();
  f.selection_counts.col(2).setZero();
  const auto s = exposure_selection(f, 0.5, std::vector<Eigen::MatrixXd>(f.theta));
  EXPECT_EQ(s[2].posterior_inclusion, 0.0);
  EXPECT_FALSE(s[2].selected);
  EXPECT_GT(s[2].bayes_factor, 0.0);
}

TEST(Selection, BayesFactorFromCounts) {
  const auto& f = noself_fit();
  const auto s = exposure_selection(f, 0.5);
  const double R = static_cast<double>(f.retained());
  const double prior = 1.0 - prior_exclusion(3, f.spec.kappa, 2 * f.spec.tree_prior.num_trees);
  for (int m = 0; m < 3; ++m) {
    const double raw = (f.selection_counts.col(m).array() > 0.0).cast<double>().mean();
    const double pi = std::clamp(raw, 0.5 / R, 1.0 - 0.5 / R);
    EXPECT_NEAR(s[m].bayes_factor, pi / (1 - pi) * (1 - prior) / prior, 1e-9);
    EXPECT_EQ(s[m].selected, raw > 0.0 && s[m].bayes_factor >= 0.5);
  }
}

TEST(AdjCoexposure, SingleExposureIsScaledCumulative) {
  const auto sim = small_single(1);
  const auto& f = single_fit();
  const std::vector<ExposureMatrix> ex{sim.data.exposures[0]};
  Contrast c;
  c.percentiles = false;
  c.levels = {{-0.5, 1.5}};
  const auto out = adj_coexposure(ex, f, c);
  ASSERT_EQ(out.size(), 1u);
  const auto cum = cumulative_effect(f.theta[0]);
  EXPECT_NEAR(out[0].effect.mean, 2.0 * cum.mean, 1e-10);
  c.levels = {{1.0, 1.0}};
  EXPECT_THROW(adj_coexposure(ex, f, c), UsageError);
}

TEST(AdjCoexposure, SplineTracksIndependentCoexposureMean) {
  SimulationConfig c;
  c.n = 3000;
  c.lags = 8;
  c.exposures = {"e1", "e2"};
  const auto sim = simulate_dataset(c, 5);
  std::vector<std::vector<double>> avg;
  for (const auto& e : sim.data.exposures) {
    const Eigen::VectorXd a = e.values.rowwise().mean();
    avg.emplace_back(a.data(), a.data() + a.size());
  }
  const double mean2 = std::accumulate(avg[1].begin(), avg[1].end(), 0.0) / static_cast<double>(avg[1].size());
  const CubicSpline sp(avg[0], avg[1]);
  for (double q : {0.25, 0.5, 0.75}) EXPECT_NEAR(sp(stats::quantile(avg[0], q)), mean2, 0.15) << q;
}

TEST(AdjCoexposure, AdditiveFitMatchesThetaOracle) {
  const auto sim = small_mixture(1);
  const auto& f = none_fit();
  const auto out = adj_coexposure(sim.data.exposures, f, Contrast{});
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_EQ(out[m].coexposure_low[m], out[m].low);
    EXPECT_EQ(out[m].coexposure_high[m], out[m].high);
    double want = 0.0;
    for (std::size_t k = 0; k < 3; ++k)
      want += (out[m].coexposure_high[k] - out[m].coexposure_low[k]) * f.theta[k].rowwise().sum().mean();
    EXPECT_NEAR(out[m].effect.mean, want, 1e-10) << m;
    EXPECT_LE(out[m].effect.lower, out[m].effect.upper);
  }
}

TEST(AdjCoexposure, RejectsMisorderedExposures) {
  auto sim = small_mixture(1);
  std::swap(sim.data.exposures[0], sim.data.exposures[1]);
  EXPECT_THROW(adj_coexposure(sim.data.exposures, noself_fit(), Contrast{}), UsageError);
}

TEST(Heterogeneity, PipsAreProbabilities) {
  const auto pips = modifier_pip(het_fit());
  ASSERT_EQ(pips.size(), 4u);
  for (const auto& [name, p] : pips) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  EXPECT_THROW(modifier_pip(single_fit()), UsageError);
}

TEST(Heterogeneity, PipExtremes) {
  PosteriorFit f = het_fit();
  f.modifier_usage.col(1).setZero();
  f.modifier_usage.col(2).setOnes();
  const auto pips = modifier_pip(f);
  EXPECT_EQ(pips[1].second, 0.0);
  EXPECT_EQ(pips[2].second, 1.0);
}

TEST(Heterogeneity, SplitProportionsSumToOne) {
  const auto sp = split_proportions(het_fit(), "age");
  double total = 0.0;
  for (const auto& s : sp) total += s.proportion;
  if (total > 0.0) EXPECT_NEAR(total, 1.0, 1e-12);
  const auto sex = split_proportions(het_fit(), "sex");
  ASSERT_EQ(sex.size(), 1u);
  EXPECT_EQ(sex[0].levels, (std::vector<std::string>{"F"}));
  EXPECT_THROW(split_proportions(het_fit(), "nope"), UsageError);
}

TEST(Heterogeneity, ModifierRowEncoding) {
  const auto& f = het_fit();
  const auto row = modifier_row(f, {{"sex", std::string("M")}, {"age", 30.0}, {"smk", std::string("no")}, {"bmi", 22.0}});
  EXPECT_EQ(row, (std::vector<double>{1.0, 30.0, 0.0, 22.0}));
  EXPECT_THROW(modifier_row(f, {{"sex", std::string("X")}, {"age", 30.0}, {"smk", std::string("no")}, {"bmi", 1.0}}),
               DataError);
  EXPECT_THROW(modifier_row(f, {{"sex", std::string("M")}}), DataError);
}

TEST(Heterogeneity, RootOnlyTreesGiveIdenticalCurves) {
  PosteriorFit f = het_fit();
  // Rebuild records with every modifier tree collapsed to its first leaf.
  std::vector<double> records;
  std::vector<double> offsets{0.0};
  for (std::size_t r = 0; r < f.retained(); ++r) {
    auto ens = f.record(r);
    for (auto& u : ens) {
      u.mod = ModifierTree{};
      u.leaves.resize(1);
    }
    serialize_ensemble(ens, records);
    offsets.push_back(static_cast<double>(records.size()));
  }
  f.records = records;
  f.record_offsets = offsets;
  const std::vector<double> a{0.0, 20.0, 0.0, 20.0}, b{1.0, 44.0, 1.0, 35.0};
  EXPECT_EQ(individualized_draws(f, a)[0], individualized_draws(f, b)[0]);
}

TEST(Heterogeneity, UnusedModifierIrrelevant) {
  const auto& f = het_fit();
  const auto usage = modifier_pip(f);
  for (std::size_t j = 0; j < usage.size(); ++j) {
    if (usage[j].second > 0.0) continue;
    std::vector<double> a{1.0, 30.0, 0.0, 25.0};
    std::vector<double> b = a;
    b[j] = f.modifier_columns[j].kind == ModifierKind::categorical ? 1.0 - a[j] : a[j] + 7.0;
    EXPECT_EQ(individualized_draws(f, a)[0], individualized_draws(f, b)[0]);
  }
}

TEST(Heterogeneity, SexSpecificTruthRecovered) {
  const auto& f = het_fit();
  const auto male = individualized_effect(f, modifier_row(f, {{"sex", std::string("M")}, {"age", 30.0},
                                                              {"smk", std::string("no")}, {"bmi", 25.0}}));
  const auto female = individualized_effect(f, modifier_row(f, {{"sex", std::string("F")}, {"age", 30.0},
                                                                {"smk", std::string("no")}, {"bmi", 25.0}}));
  double m_win = 0.0, f_win = 0.0;
  for (int t = 1; t <= 3; ++t) {
    m_win += male[0].table.mean[t];
    f_win += female[0].table.mean[t];
  }
  EXPECT_NEAR(m_win, 1.2, 0.45);
  EXPECT_NEAR(f_win, 0.0, 0.45);
}

TEST(Subgroups, WeightedAverageEqualsPopulation) {
  const auto& f = het_fit();
  const std::vector<GroupBy> by{{"age", {25.0, 35.0}, {}}};
  const auto groups = subgroup_effect(f, by);
  ASSERT_EQ(groups.size(), 3u);
  EXPECT_EQ(groups[0].label, "age<=25");
  EXPECT_EQ(groups[1].label, "25<age<=35");
  EXPECT_EQ(groups[2].label, "age>35");
  const auto pop = population_draws(f);
  const Eigen::RowVectorXd pm = pop[0].colwise().mean();
  Eigen::RowVectorXd avg = Eigen::RowVectorXd::Zero(f.lags());
  std::size_t n = 0;
  for (const auto& g : groups) {
    n += g.size;
    if (g.empty()) continue;
    for (int t = 0; t < f.lags(); ++t) avg[t] += g.size * g.curves[0].table.mean[static_cast<std::size_t>(t)];
  }
  EXPECT_EQ(n, 300u);
  avg /= static_cast<double>(n);
  EXPECT_LE((avg - pm).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Subgroups, SingleLevelEqualsPopulation) {
  const auto& f = het_fit();
  const std::vector<GroupBy> by{{"age", {1000.0}, {}}};
  const auto groups = subgroup_effect(f, by);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_TRUE(groups[1].empty());
  const auto pop = summarize_curve(population_draws(f)[0], 0.95);
  for (int t = 0; t < f.lags(); ++t)
    EXPECT_NEAR(groups[0].curves[0].table.mean[static_cast<std::size_t>(t)], pop.table.mean[static_cast<std::size_t>(t)],
                1e-12);
}

TEST(Subgroups, TwoWayGroupingLabels) {
  const auto& f = het_fit();
  const std::vector<GroupBy> by{{"sex", {}, {}}, {"smk", {}, {}}};
  const auto groups = subgroup_effect(f, by);
  ASSERT_EQ(groups.size(), 4u);
  EXPECT_EQ(groups[0].label, "sex=F, smk=no");
  EXPECT_EQ(groups[3].label, "sex=M, smk=yes");
  const std::vector<GroupBy> bad{{"sex", {}, {}}, {"sex", {}, {}}};
  EXPECT_THROW(subgroup_effect(f, bad), UsageError);
  const std::vector<GroupBy> unknown{{"zzz", {}, {}}};
  EXPECT_THROW(subgroup_effect(f, unknown), UsageError);
}

TEST(Subgroups, SexSeparatesInInjectedDirection) {
  const auto& f = het_fit();
  const std::vector<GroupBy> by{{"sex", {}, {}}};
  const auto g = subgroup_effect(f, by);
  double fem = 0.0, mal = 0.0;
  for (int t = 1; t <= 3; ++t) {
    fem += g[0].curves[0].table.mean[static_cast<std::size_t>(t)];
    mal += g[1].curves[0].table.mean[static_cast<std::size_t>(t)];
  }
  EXPECT_GT(mal, fem);
}

TEST(Summarize, HetOmitsCurvesAndFillsPips) {
  const auto s = summarize(het_fit());
  EXPECT_FALSE(s.exposures[0].has_curve);
  EXPECT_EQ(s.pips.size(), 4u);
}
