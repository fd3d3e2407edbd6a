#include <gtest/gtest.h>

#include "helpers.hpp"
#include "laggard/laggard.hpp"

using namespace laggard;
using namespace testing_support;

TEST(RHat, MatchesHandComputation) {
  const std::vector<std::vector<double>> chains{{1, 2, 3, 4, 5, 6}, {2, 2, 2, 3, 3, 3}};
  // Halves: {1,2,3} {4,5,6} {2,2,2} {3,3,3}; means 2,5,2,3; variances 1,1,0,0.
  const double W = 0.5;
  const double B = 3.0 * ((1 + 4 + 1 + 0) / 3.0);
  const double want = std::sqrt(((2.0 / 3.0) * W + B / 3.0) / W);
  EXPECT_NEAR(gelman_split_rhat(chains).value, want, 1e-12);
}

TEST(RHat, DegenerateAndShortSeries) {
  const auto r = gelman_split_rhat({{1, 1, 1, 1}, {1, 1, 1, 1}});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_THROW(gelman_split_rhat({{1, 2, 3}}), UsageError);
  EXPECT_THROW(gelman_split_rhat({}), UsageError);
}

TEST(RHat, WellMixedChainsNearOne) {
  Rng rng(4);
  std::vector<std::vector<double>> chains(4, std::vector<double>(2000));
  for (auto& c : chains)
    for (auto& v : c) v = rng.normal();
  EXPECT_LT(gelman_split_rhat(chains).value, 1.01);
}

TEST(Density, IntegratesToOne) {
  Rng rng(1);
  std::vector<double> x(5000);
  for (auto& v : x) v = rng.gamma(2.0);
  const auto d = density_of("x", x);
  EXPECT_GE(d.density.size(), 20u);
  double total = 0.0;
  for (double v : d.density) total += v * d.width;
  EXPECT_NEAR(total, 1.0, 1e-12);
  const std::vector<double> constant(10, 3.0);
  EXPECT_EQ(density_of("c", constant).density.size(), 20u);
}

TEST(Traces, DefaultSelection) {
  const auto f = fit_single(2);
  EXPECT_EQ(default_trace_lags(37), (std::vector<int>{9, 19, 28}));
  const auto s = trace_series(f, {});
  std::vector<std::string> names;
  for (const auto& x : s) names.push_back(x.name);
  EXPECT_EQ(names, (std::vector<std::string>{"theta[e1][3]", "theta[e1][5]", "theta[e1][8]", "sigma2", "cumulative[e1]"}));
  for (const auto& x : s) EXPECT_EQ(x.values.size(), f.retained());
  EXPECT_EQ(s[1].values[7], f.theta[0](7, 4));
}

TEST(Traces, ExplicitSelectionAndErrors) {
  const auto f = fit_single(2);
  DiagnosticSelection sel;
  sel.lags = {1};
  sel.params = {"tau", "snr", "gamma", "gamma:c1"};
  const auto s = trace_series(f, sel);
  ASSERT_EQ(s.size(), 6u);
  EXPECT_EQ(s[3].name, "gamma[(Intercept)]");
  EXPECT_EQ(s[5].name, "gamma[c1]");
  sel.lags = {11};
  EXPECT_THROW(trace_series(f, sel), UsageError);
  sel.lags = {};
  sel.params = {"bogus"};
  EXPECT_THROW(trace_series(f, sel), UsageError);
  sel.params = {"gamma:zz"};
  EXPECT_THROW(trace_series(f, sel), UsageError);
}

TEST(Diagnose, AcceptanceAndTreeSizes) {
  const auto f = fit_single(3);
  DiagnosticSelection sel;
  sel.rolling_window = 20;
  const auto rep = diagnose(f, sel);
  EXPECT_TRUE(rep.accounting_ok);
  ASSERT_EQ(rep.acceptance.size(), 1u);
  EXPECT_EQ(rep.acceptance[0].kind, "dlm_tree");
  EXPECT_GT(rep.acceptance[0].overall, 0.0);
  EXPECT_LE(rep.acceptance[0].overall, 1.0);
  EXPECT_EQ(rep.acceptance[0].rolling.size(), static_cast<std::size_t>(f.tree_log.rows()));
  ASSERT_EQ(rep.tree_sizes.size(), 1u);
  for (double v : rep.tree_sizes[0].values) EXPECT_GE(v, 1.0);
  EXPECT_EQ(rep.densities.size(), rep.traces.size());
}

TEST(Diagnose, MixtureAndHetReportAllStructures) {
  EXPECT_EQ(diagnose(fit_mixture(InteractionMode::noself)).acceptance.size(), 2u);
  const auto rep = diagnose(fit_het(1));
  ASSERT_EQ(rep.acceptance.size(), 2u);
  EXPECT_EQ(rep.acceptance[1].kind, "modifier_tree");
}

TEST(Diagnose, BrokenAccountingDetected) {
  auto f = fit_single(3);
  f.tree_log(0, TreeLogLayout::accepted(0, 0)) += 1.0;
  EXPECT_FALSE(diagnose(f).accounting_ok);
}

TEST(Diagnose, RHatTableAcrossChains) {
  const auto sim = small_single(1);
  ModelSpec s;
  s.tree_prior.num_trees = 4;
  auto ctl = short_control(100, 200, 2, 11);
  ctl.n_chains = 2;
  const auto fits = run_chains(s, sim.data, ctl);
  std::vector<DiagnosticsReport> reps;
  for (const auto& f : fits) reps.push_back(diagnose(f));
  const auto rows = rhat_table(reps);
  ASSERT_EQ(rows.size(), reps[0].traces.size());
  for (const auto& r : rows) {
    EXPECT_GT(r.rhat.value, 0.5);
    EXPECT_TRUE(std::isfinite(r.rhat.value));
  }
}
