#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "laggard/cli.hpp"

namespace fs = std::filesystem;
using namespace laggard;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("laggard_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string p(const std::string& name) const { return (dir / name).string(); }

  void write_config(const std::string& name, const std::string& text) const {
    std::ofstream(p(name)) << text;
  }

  // Simulates a small dataset and fits it; returns the archive path.
  std::string simulate_and_fit(const std::string& config, std::vector<std::string> extra = {}) {
    write_config("sim.cfg", config);
    const auto s = run({"simulate", "--config", p("sim.cfg"), "--seed", "3", "--output", p("data.csv"), "--truth", p("truth.json")});
    EXPECT_EQ(s.code, 0) << s.err;
    std::vector<std::string> args{"fit",   "--data", p("data.csv"), "--outcome", "y",   "--covariates", "c1",
                                  "--burn", "40",    "--iter",      "80",        "--thin", "2",         "--trees",
                                  "4",     "--output", p("fit.lga")};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto f = run(args);
    EXPECT_EQ(f.code, 0) << f.err;
    return p("fit.lga");
  }

  fs::path dir;
};

const char* kSingle = "n=120\nlags=8\ncovariates=1\neffect.e1=window:3:4:0.4\n";
const char* kMixture = "n=120\nlags=6\ncovariates=1\nexposures=e1,e2,e3\neffect.e1=window:2:3:0.4\n";
const char* kHet = "n=150\nlags=6\ncovariates=1\neffect.e1=window:2:3:0.4\nmodifier_rule=sex:M\n";

}  // namespace

TEST_F(Cli, SimulateWritesTableAndTruth) {
  write_config("sim.cfg", kSingle);
  const auto r = run({"simulate", "--config", p("sim.cfg"), "--seed", "2", "--output", p("a.csv"), "--truth", p("t.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = read_table(p("a.csv"));
  EXPECT_EQ(table.rows.size(), 120u);
  EXPECT_NO_THROW(table.column_index("e1_8"));
  const auto truth = json::parse(slurp(p("t.json")));
  EXPECT_TRUE(truth.contains("exposures"));
  ASSERT_EQ(run({"simulate", "--config", p("sim.cfg"), "--seed", "2", "--output", p("b.csv")}).code, 0);
  EXPECT_EQ(slurp(p("a.csv")), slurp(p("b.csv")));
}

TEST_F(Cli, FitThenSummaryIsReproducible) {
  const auto archive = simulate_and_fit(kSingle, {"--exposure", "e1"});
  const auto a = run({"summary", archive, "--json", p("s.json")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("TDLM summary"), std::string::npos);
  const auto b = run({"summary", archive});
  EXPECT_EQ(a.out, b.out);
  const auto j = json::parse(slurp(p("s.json")));
  EXPECT_EQ(j["model_class"], "tdlm");
  EXPECT_EQ(j["format_version"], "1.0");
}

TEST_F(Cli, FitReportsRetainedDraws) {
  write_config("sim.cfg", kSingle);
  ASSERT_EQ(run({"simulate", "--config", p("sim.cfg"), "--output", p("data.csv")}).code, 0);
  const auto r = run({"fit", "--data", p("data.csv"), "--outcome", "y", "--exposure", "e1", "--burn", "10", "--iter", "20",
                      "--thin", "2", "--trees", "2", "--output", p("f.lga")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("(10 retained draws)"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(p("f.lga")));
}

TEST_F(Cli, MixtureSummaryWithMarginalization) {
  const auto archive =
      simulate_and_fit(kMixture, {"--exposure", "e1", "--exposure", "e2", "--exposure", "e3", "--mixture", "--interactions", "all"});
  for (const std::string m : {"mean", "q25", "q75:pooled", "levels=0,0,0"}) {
    const auto r = run({"summary", archive, "--marginalize", m});
    EXPECT_EQ(r.code, 0) << m << ": " << r.err;
  }
  EXPECT_EQ(run({"summary", archive, "--marginalize", "levels=0,0"}).code, 2);
  EXPECT_EQ(run({"summary", archive, "--marginalize", "median"}).code, 2);
}

TEST_F(Cli, HetFitSummary) {
  const auto archive = simulate_and_fit(kHet, {"--exposure", "e1", "--het", "--modifiers", "sex,age"});
  const auto r = run({"summary", archive});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("sex"), std::string::npos);
  EXPECT_EQ(run({"summary", archive, "--marginalize", "q25"}).code, 2);
}

TEST_F(Cli, DiagnoseSingleAndMultipleChains) {
  const auto archive = simulate_and_fit(kSingle, {"--exposure", "e1", "--chains", "2"});
  EXPECT_FALSE(fs::exists(archive));
  const auto a1 = p("fit.1.lga"), a2 = p("fit.2.lga");
  ASSERT_TRUE(fs::exists(a1));
  ASSERT_TRUE(fs::exists(a2));
  const auto one = run({"diagnose", a1});
  ASSERT_EQ(one.code, 0) << one.err;
  const auto j1 = json::parse(one.out);
  EXPECT_EQ(j1["chains"].size(), 1u);
  EXPECT_FALSE(j1.contains("rhat"));
  const auto two = run({"diagnose", a1, a2, "--lags", "2,4", "--params", "sigma2"});
  ASSERT_EQ(two.code, 0) << two.err;
  const auto j2 = json::parse(two.out);
  EXPECT_EQ(j2["chains"].size(), 2u);
  EXPECT_TRUE(j2.contains("rhat"));
  const auto files = run({"diagnose", a1, a2, "--output-dir", p("diag")});
  ASSERT_EQ(files.code, 0) << files.err;
  for (const char* f : {"diagnostics.json", "traces.1.csv", "traces.2.csv", "acceptance.1.csv", "tree_sizes.2.csv"})
    EXPECT_TRUE(fs::exists(dir / "diag" / f)) << f;
  EXPECT_EQ(run({"diagnose", a1, "--exposure", "zz"}).code, 2);
}

TEST_F(Cli, PivotFixture) {
  const auto r = run({"pivot", "--input", std::string(LAGGARD_FIXTURES) + "/series.csv", "--output", p("wide.csv"), "--date",
                      "date", "--exposures", "pm", "--lags", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = read_table(p("wide.csv"));
  EXPECT_EQ(t.rows.size(), 2u);
  const auto bad = run({"pivot", "--input", std::string(LAGGARD_FIXTURES) + "/series.csv", "--output", p("w2.csv"), "--date",
                        "date", "--exposures", "pm", "--lags", "4"});
  EXPECT_EQ(bad.code, 3);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"fit", "--data", "x.csv"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);

  write_config("sim.cfg", kSingle);
  ASSERT_EQ(run({"simulate", "--config", p("sim.cfg"), "--output", p("data.csv")}).code, 0);
  const std::vector<std::string> base{"fit",    "--data", p("data.csv"), "--outcome", "y",  "--burn", "2",
                                      "--iter", "4",      "--thin",      "1",         "--output", p("f.lga")};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return run(a);
  };
  EXPECT_EQ(with({"--exposure", "e1", "--family", "zinb"}).code, 4);
  EXPECT_EQ(with({"--exposure", "e1", "--dlm-type", "nonlinear"}).code, 4);
  EXPECT_EQ(with({"--exposure", "e1", "--family", "logit"}).code, 3);
  EXPECT_EQ(with({"--exposure", "zz"}).code, 3);
  EXPECT_EQ(run({"fit", "--data", p("data.csv"), "--outcome", "nope", "--exposure", "e1", "--output", p("o.lga")}).code, 3);
  EXPECT_EQ(with({"--exposure", "e1", "--thin", "0"}).code, 2);
  EXPECT_EQ(with({"--exposure", "e1", "--scale", "zscore"}).code, 2);
  EXPECT_EQ(with({"--exposure", "e1", "--covariates", "c1", "--het", "--family", "logit"}).code, 4);

  const auto missing = run({"summary", p("nope.lga")});
  EXPECT_EQ(missing.code, 5);
  EXPECT_NE(missing.err.find("error:"), std::string::npos);
  std::ofstream(p("junk.lga")) << "junk";
  EXPECT_EQ(run({"summary", p("junk.lga")}).code, 5);
  EXPECT_EQ(run({"fit", "--data", p("absent.csv"), "--outcome", "y", "--exposure", "e1", "--output", p("o.lga")}).code, 5);
  write_config("bad.cfg", "wings=3\n");
  EXPECT_EQ(run({"simulate", "--config", p("bad.cfg"), "--output", p("x.csv")}).code, 3);
}

TEST_F(Cli, CenterRefusedWithInteractions) {
  write_config("sim.cfg", kMixture);
  ASSERT_EQ(run({"simulate", "--config", p("sim.cfg"), "--output", p("data.csv")}).code, 0);
  const auto r = run({"fit", "--data", p("data.csv"), "--outcome", "y", "--exposure", "e1", "--exposure", "e2", "--mixture",
                      "--interactions", "noself", "--center", "--burn", "2", "--iter", "4", "--thin", "1", "--output",
                      p("f.lga")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("centering"), std::string::npos);
}
