#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "laggard/laggard.hpp"

using namespace laggard;

namespace {

const std::string kFixtures = LAGGARD_FIXTURES;

Table table_of(const std::string& text) {
  std::istringstream in(text);
  return parse_table(in);
}

// Type-7 quantile written out independently of the library.
double type7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TEST(Table, ParsesQuotedCellsAndTrims) {
  const auto t = table_of("a,b\n\"x,1\", 2 \n");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][0], "x,1");
  double v = 0;
  EXPECT_TRUE(parse_number(t.rows[0][1], v));
  EXPECT_EQ(v, 2.0);
}

TEST(Table, FormatNumberRoundTrips) {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-17, 123456789.125, 0.0}) {
    double back = 0;
    ASSERT_TRUE(parse_number(format_number(x), back));
    EXPECT_EQ(back, x);
  }
}

TEST(LoadWideTable, ThreeRowShape) {
  const auto d = load_wide_table(kFixtures + "/wide_small.csv", "y", {}, {{"e", {"e1", "e2", "e3"}}}, {});
  EXPECT_EQ(d.n(), 3);
  EXPECT_EQ(d.lags(), 3);
  EXPECT_EQ(d.num_exposures(), 1u);
  EXPECT_EQ(d.exposures[0].values(1, 2), 0.6);
  EXPECT_EQ(d.outcome[2], -0.5);
}

TEST(LoadWideTable, UnequalLagCountsIsShapeError) {
  const auto t = table_of("y,a1,a2,b1\n1,1,2,3\n2,2,3,1\n");
  EXPECT_THROW(dataset_from_table(t, "y", {}, {{"A", {"a1", "a2"}}, {"B", {"b1"}}}, {}), DataError);
}

TEST(LoadWideTable, MissingColumnIsNamed) {
  try {
    load_wide_table(kFixtures + "/wide_small.csv", "y", {"nope"}, {{"e", {"e1", "e2"}}}, {});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
  }
}

TEST(LoadWideTable, MissingValueReportsRowAndColumn) {
  try {
    load_wide_table(kFixtures + "/missing.csv", "y", {}, {{"x", {"x_1", "x_2"}}}, {});
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos);
    EXPECT_NE(msg.find("x_1"), std::string::npos);
  }
}

TEST(LoadWideTable, CategoricalCovariateMatchesHandExpansion) {
  const auto d = load_wide_table(kFixtures + "/race.csv", "y", {"Race"}, {{"pm", {"pm_1", "pm_2"}}}, {});
  // Sorted levels: AsianPI (reference), Black, white.
  const std::vector<std::string> names{"(Intercept)", "RaceBlack", "Racewhite"};
  EXPECT_EQ(d.design_names, names);
  Eigen::MatrixXd expect(5, 3);
  expect << 1, 0, 1,
            1, 1, 0,
            1, 0, 0,
            1, 0, 1,
            1, 1, 0;
  EXPECT_EQ(d.design, expect);
}

TEST(LoadWideTable, ExpansionIsDeterministic) {
  const auto a = load_wide_table(kFixtures + "/race.csv", "y", {"Race"}, {{"pm", {"pm_1", "pm_2"}}}, {});
  const auto b = load_wide_table(kFixtures + "/race.csv", "y", {"Race"}, {{"pm", {"pm_1", "pm_2"}}}, {});
  EXPECT_EQ(a.design_names, b.design_names);
  EXPECT_EQ(a.design, b.design);
  EXPECT_EQ(data_hash(a), data_hash(b));
}

TEST(LoadWideTable, RankDeficientDesignRejected) {
  const auto t = table_of("y,a,b,x_1,x_2\n1,1,2,1,2\n2,2,4,3,4\n3,3,6,5,6\n4,4,8,1,1\n");
  EXPECT_THROW(dataset_from_table(t, "y", {"a", "b"}, {{"x", {"x_1", "x_2"}}}, {}), DataError);
}

TEST(LoadWideTable, LagColumnsByPrefix) {
  const auto t = table_of("y,pm25_1,pm25_2,pm25_3,o\n1,1,2,3,4\n");
  EXPECT_EQ(lag_columns_by_prefix(t, "pm25_"), (std::vector<std::string>{"pm25_1", "pm25_2", "pm25_3"}));
  EXPECT_THROW(lag_columns_by_prefix(t, "pm25_", 4), DataError);
  EXPECT_THROW(lag_columns_by_prefix(t, "no_"), DataError);
}

TEST(Pivot, ExampleRows) {
  const auto t = read_table(kFixtures + "/series.csv");
  const auto w = pivot_time_series(t, "date", {"pm"}, 2);
  ASSERT_EQ(w.rows.size(), 2u);
  EXPECT_EQ(w.header, (std::vector<std::string>{"date", "y", "pm_1", "pm_2"}));
  EXPECT_EQ(w.rows[0], (std::vector<std::string>{"2020-01-03", "3", "20", "10"}));
  EXPECT_EQ(w.rows[1], (std::vector<std::string>{"2020-01-04", "4", "30", "20"}));
}

TEST(Pivot, LagEqualToLengthIsError) {
  const auto t = read_table(kFixtures + "/series.csv");
  EXPECT_THROW(pivot_time_series(t, "date", {"pm"}, 4), DataError);
}

TEST(Pivot, ConstantSeries) {
  std::string text = "date,y,x\n";
  for (int i = 1; i <= 8; ++i) text += std::to_string(i) + "," + std::to_string(i) + ",7\n";
  const auto w = pivot_time_series(table_of(text), "date", {"x"}, 3);
  for (const auto& r : w.rows)
    for (std::size_t j = 2; j < r.size(); ++j) EXPECT_EQ(r[j], "7");
}

TEST(Pivot, GappedOrUnsortedDatesRejected) {
  EXPECT_THROW(pivot_time_series(table_of("d,x\n1,1\n2,2\n4,3\n5,4\n"), "d", {"x"}, 1), DataError);
  EXPECT_THROW(pivot_time_series(table_of("d,x\n3,1\n2,2\n1,3\n"), "d", {"x"}, 1), DataError);
}

TEST(Pivot, RoundTripThroughLoaderMatchesHandIndexing) {
  std::string text = "date,y,x\n";
  std::vector<double> x(20), y(20);
  for (int i = 0; i < 20; ++i) {
    x[i] = std::sin(0.7 * i) + i;
    y[i] = 0.1 * i;
    text += std::to_string(100 + 7 * i) + "," + format_number(y[i]) + "," + format_number(x[i]) + "\n";
  }
  const int L = 4;
  const auto w = pivot_time_series(table_of(text), "date", {"x"}, L);
  const auto d = dataset_from_table(w, "y", {}, {{"x", lag_columns_by_prefix(w, "x_")}}, {});
  ASSERT_EQ(d.n(), 20 - L);
  for (int r = 0; r < 20 - L; ++r) {
    const int t = r + L;
    EXPECT_EQ(d.outcome[r], y[t]);
    for (int l = 1; l <= L; ++l) EXPECT_EQ(d.exposures[0].values(r, l - 1), x[t - l]);
  }
}

TEST(IqrScale, PooledIqrOracle) {
  ExposureMatrix m{"e", Eigen::MatrixXd(3, 4), 1.0, false};
  for (int i = 0; i < 12; ++i) m.values(i % 3, i / 3) = i;
  std::vector<double> all(m.values.data(), m.values.data() + 12);
  const double iqr = type7(all, 0.75) - type7(all, 0.25);
  const auto s = iqr_scale(m);
  EXPECT_DOUBLE_EQ(s.scale_factor, iqr);
  EXPECT_TRUE(s.values.isApprox(m.values / iqr));
}

TEST(IqrScale, FiveValueExampleHalves) {
  ExposureMatrix m{"e", Eigen::MatrixXd(1, 5), 1.0, false};
  m.values << 0, 1, 2, 3, 4;
  const auto s = iqr_scale(m);
  EXPECT_EQ(s.scale_factor, 2.0);
  EXPECT_EQ(s.values(0, 3), 1.5);
}

TEST(IqrScale, ConstantMatrixRejected) {
  ExposureMatrix m{"e", Eigen::MatrixXd::Constant(4, 3, 2.0), 1.0, false};
  EXPECT_THROW(iqr_scale(m), DataError);
}

TEST(IqrScale, UnitIqrIsIdentity) {
  ExposureMatrix m{"e", Eigen::MatrixXd(1, 5), 1.0, false};
  m.values << 0, 0.5, 1, 1.5, 2;
  const auto s = iqr_scale(m);
  EXPECT_EQ(s.scale_factor, 1.0);
  EXPECT_EQ(s.values, m.values);
}

TEST(IqrScale, RescaleRestoresInput) {
  const auto sim = simulate_dataset(SimulationConfig{}, 5);
  const auto& raw = sim.data.exposures[0];
  const auto s = iqr_scale(raw);
  EXPECT_LE((s.values * s.scale_factor - raw.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SplitCandidates, EvenlySpacedQuantiles) {
  ModifierColumn c{"age", ModifierKind::continuous, {}, {}};
  for (int i = 1; i <= 100; ++i) c.values.push_back(i);
  const auto d = modifier_split_candidates(c, 10);
  ASSERT_EQ(d.thresholds.size(), 10u);
  for (int k = 1; k <= 10; ++k) EXPECT_NEAR(d.thresholds[k - 1], type7(c.values, k / 11.0), 1e-12);
  for (std::size_t k = 1; k < d.thresholds.size(); ++k) EXPECT_LT(d.thresholds[k - 1], d.thresholds[k]);
  EXPECT_GT(d.thresholds.front(), 1.0);
  EXPECT_LT(d.thresholds.back(), 100.0);
}

TEST(SplitCandidates, DeduplicatedAndInsideRange) {
  ModifierColumn c{"x", ModifierKind::continuous, {1, 1, 1, 1, 1, 1, 2, 3}, {}};
  const auto d = modifier_split_candidates(c, 10);
  for (double t : d.thresholds) {
    EXPECT_GT(t, 1.0);
    EXPECT_LT(t, 3.0);
  }
  for (std::size_t k = 1; k < d.thresholds.size(); ++k) EXPECT_LT(d.thresholds[k - 1], d.thresholds[k]);
}

TEST(SplitCandidates, BinaryCategoricalSingleSplit) {
  ModifierColumn c{"sex", ModifierKind::categorical, {0, 1, 1}, {"F", "M"}};
  const auto d = modifier_split_candidates(c, 10);
  ASSERT_EQ(d.subsets.size(), 1u);
}

TEST(SplitCandidates, ManyLevelsFallBackToOneVsRest) {
  ModifierColumn c{"k", ModifierKind::categorical, {}, {}};
  for (int l = 0; l < 8; ++l) c.levels.push_back(std::string(1, static_cast<char>('a' + l)));
  const auto d = modifier_split_candidates(c, 10);
  EXPECT_EQ(d.subsets.size(), 8u);
  ModifierColumn small{"k", ModifierKind::categorical, {}, {"a", "b", "c", "d"}};
  EXPECT_EQ(modifier_split_candidates(small, 10).subsets.size(), 7u);
}

TEST(SplitCandidates, ConstantColumnEmpty) {
  ModifierColumn c{"x", ModifierKind::continuous, {4, 4, 4}, {}};
  EXPECT_TRUE(modifier_split_candidates(c, 5).thresholds.empty());
}

TEST(Simulate, SameSeedBitIdentical) {
  SimulationConfig c;
  c.n = 200;
  c.effects["e1"] = {{11, 15, 0.03}};
  const auto a = simulate_dataset(c, 9);
  const auto b = simulate_dataset(c, 9);
  EXPECT_EQ(a.data.outcome, b.data.outcome);
  EXPECT_EQ(a.data.exposures[0].values, b.data.exposures[0].values);
  EXPECT_EQ(data_hash(a.data), data_hash(b.data));
  const auto other = simulate_dataset(c, 10);
  EXPECT_NE(data_hash(a.data), data_hash(other.data));
}

TEST(Simulate, ZeroEverythingGivesIntercept) {
  SimulationConfig c;
  c.n = 50;
  c.noise_sd = 0.0;
  c.intercept = 2.5;
  const auto s = simulate_dataset(c, 1);
  for (Eigen::Index i = 0; i < s.data.n(); ++i) EXPECT_EQ(s.data.outcome[i], 2.5);
}

TEST(Simulate, OlsRecoversInjectedCumulativeEffect) {
  SimulationConfig c;
  c.effects["e1"] = {{11, 15, 0.03}};
  const auto s = simulate_dataset(c, 2);
  const auto& X = s.data.exposures[0].values;
  Eigen::MatrixXd D(s.data.n(), 2);
  D.col(0).setOnes();
  D.col(1) = X.middleCols(10, 5).rowwise().sum();
  const Eigen::VectorXd b = D.colPivHouseholderQr().solve(s.data.outcome);
  const Eigen::VectorXd res = s.data.outcome - D * b;
  const double s2 = res.squaredNorm() / static_cast<double>(s.data.n() - 2);
  const double se = std::sqrt(s2 * (D.transpose() * D).inverse()(1, 1));
  EXPECT_NEAR(5.0 * b[1], 0.15, 3.0 * 5.0 * se);
}

TEST(Simulate, TruthMatchesInjectedSignal) {
  SimulationConfig c;
  c.n = 300;
  c.exposures = {"a", "b"};
  c.effects["a"] = {{2, 4, 0.2}};
  c.interactions = {{"a", "b", 1, 2, 3, 3, 0.5}};
  c.modifier_rule = {"sex", "M"};
  c.noise_sd = 0.0;
  const auto s = simulate_dataset(c, 4);
  const auto& A = s.data.exposures[0].values;
  const auto& B = s.data.exposures[1].values;
  for (Eigen::Index i = 0; i < s.data.n(); ++i) {
    double f = A.row(i).dot(s.truth.theta.row(0)) + 0.5 * (A(i, 0) + A(i, 1)) * B(i, 2);
    if (s.data.modifiers[0].values[static_cast<std::size_t>(i)] != 1.0) f = 0.0;
    EXPECT_NEAR(s.data.outcome[i], f, 1e-12);
  }
}

TEST(Simulate, InconsistentConfigRejected) {
  SimulationConfig c;
  c.effects["zz"] = {{1, 2, 0.1}};
  EXPECT_THROW(simulate_dataset(c, 1), DataError);
  SimulationConfig w;
  w.effects["e1"] = {{30, 40, 0.1}};
  EXPECT_THROW(simulate_dataset(w, 1), DataError);
}

TEST(Simulate, ConfigFileParses) {
  std::istringstream in("n = 10 # rows\nlags=5\nexposures = a, b\neffect.a = window:1:2:0.5; window:4:4:-1\n");
  const auto c = parse_simulation_config(in);
  EXPECT_EQ(c.n, 10);
  EXPECT_EQ(c.exposures, (std::vector<std::string>{"a", "b"}));
  ASSERT_EQ(c.effects.at("a").size(), 2u);
  EXPECT_EQ(c.effects.at("a")[1].value, -1.0);
  std::istringstream bad("unknown = 3\n");
  EXPECT_THROW(parse_simulation_config(bad), DataError);
}

TEST(Center, RefusedWithInteractions) {
  SimulationConfig c;
  c.n = 50;
  c.lags = 5;
  c.exposures = {"a", "b"};
  auto s = simulate_dataset(c, 1);
  for (auto& e : s.data.exposures) e = center_exposure(e);
  EXPECT_NEAR(s.data.exposures[0].values.mean(), 0.0, 1e-12);
  ModelSpec spec;
  spec.mixture = true;
  spec.interaction = InteractionMode::noself;
  McmcControl ctl;
  ctl.n_burn = 1;
  ctl.n_iter = 2;
  ctl.n_thin = 1;
  EXPECT_THROW(fit(spec, s.data, ctl), DataError);
  spec.interaction = InteractionMode::none;
  EXPECT_NO_THROW(fit(spec, s.data, ctl));
}
