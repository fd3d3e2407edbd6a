#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "laggard/data_model.hpp"
#include "laggard/error.hpp"
#include "laggard/rng.hpp"
#include "laggard/table.hpp"

namespace laggard {

struct EffectWindow {
  int lo = 1;
  int hi = 1;
  double value = 0.0;
};

struct InteractionTruth {
  std::string exposure1;
  std::string exposure2;
  int lo1 = 1, hi1 = 1, lo2 = 1, hi2 = 1;
  double value = 0.0;
};

// Restricts exposure effects to rows where `modifier` equals `level`.
struct ModifierRule {
  std::string modifier;
  std::string level;
  bool active() const { return !modifier.empty(); }
};

struct SimulationConfig {
  int n = 1000;
  int lags = 37;
  std::vector<std::string> exposures{"e1"};
  std::map<std::string, std::vector<EffectWindow>> effects;
  std::vector<InteractionTruth> interactions;
  ModifierRule modifier_rule;
  double noise_sd = 1.0;
  std::string family = "gaussian";
  double ar1 = 0.5;
  double cross_correlation = 0.0;
  double exposure_mean = 0.0;
  double exposure_sd = 1.0;
  int covariates = 0;
  double intercept = 0.0;
};

struct SimulationTruth {
  Eigen::MatrixXd theta;  // M x T
  std::vector<InteractionTruth> interactions;
  ModifierRule rule;
  Eigen::VectorXd gamma;
  Eigen::VectorXd signal;  // exposure contribution per row
  std::vector<bool> active;
};

struct Simulation {
  Dataset data;
  Table table;
  SimulationTruth truth;
};

namespace sim_detail {

inline std::vector<std::string> split(const std::string& s, char d) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, d)) out.push_back(detail::trim(cur));
  return out;
}

inline double to_real(const std::string& key, const std::string& v) {
  double x = 0.0;
  if (!parse_number(v, x)) throw DataError("config key '" + key + "' expects a number, got '" + v + "'");
  return x;
}

inline int to_int(const std::string& key, const std::string& v) {
  const double x = to_real(key, v);
  if (x != std::floor(x)) throw DataError("config key '" + key + "' expects an integer");
  return static_cast<int>(x);
}

}  // namespace sim_detail

// key = value lines; '#' starts a comment.
inline SimulationConfig parse_simulation_config(std::istream& in) {
  using namespace sim_detail;
  SimulationConfig c;
  c.exposures.clear();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("config line " + std::to_string(line_no) + " lacks '='");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key == "n") c.n = to_int(key, val);
    else if (key == "lags") c.lags = to_int(key, val);
    else if (key == "exposures") c.exposures = split(val, ',');
    else if (key == "noise_sd") c.noise_sd = to_real(key, val);
    else if (key == "family") c.family = val;
    else if (key == "ar1") c.ar1 = to_real(key, val);
    else if (key == "cross_correlation") c.cross_correlation = to_real(key, val);
    else if (key == "exposure_mean") c.exposure_mean = to_real(key, val);
    else if (key == "exposure_sd") c.exposure_sd = to_real(key, val);
    else if (key == "covariates") c.covariates = to_int(key, val);
    else if (key == "intercept") c.intercept = to_real(key, val);
    else if (key.rfind("effect.", 0) == 0) {
      const std::string name = key.substr(7);
      for (const auto& w : split(val, ';')) {
        const auto parts = split(w, ':');
        if (parts.size() != 4 || parts[0] != "window")
          throw DataError("effect '" + name + "' expects window:lo:hi:value");
        c.effects[name].push_back({to_int(key, parts[1]), to_int(key, parts[2]), to_real(key, parts[3])});
      }
    } else if (key == "interaction") {
      for (const auto& w : split(val, ';')) {
        const auto parts = split(w, ':');
        if (parts.size() != 7) throw DataError("interaction expects a:b:lo1:hi1:lo2:hi2:value");
        c.interactions.push_back({parts[0], parts[1], to_int(key, parts[2]), to_int(key, parts[3]),
                                  to_int(key, parts[4]), to_int(key, parts[5]), to_real(key, parts[6])});
      }
    } else if (key == "modifier_rule") {
      const auto parts = split(val, ':');
      if (parts.size() != 2) throw DataError("modifier_rule expects modifier:level");
      c.modifier_rule = {parts[0], parts[1]};
    } else {
      throw DataError("unknown config key '" + key + "'");
    }
  }
  if (c.exposures.empty()) c.exposures = {"e1"};
  return c;
}

inline SimulationConfig read_simulation_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_simulation_config(in);
}

inline void validate(const SimulationConfig& c) {
  if (c.n < 1) throw DataError("n must be positive");
  if (c.lags < 2) throw DataError("lags must be at least 2");
  if (c.exposures.empty()) throw DataError("at least one exposure is required");
  auto find = [&](const std::string& name) {
    for (const auto& e : c.exposures)
      if (e == name) return true;
    return false;
  };
  auto check_window = [&](int lo, int hi) {
    if (lo < 1 || hi > c.lags || lo > hi)
      throw DataError("window " + std::to_string(lo) + "-" + std::to_string(hi) + " outside lags 1-" +
                      std::to_string(c.lags));
  };
  for (const auto& [name, ws] : c.effects) {
    if (!find(name)) throw DataError("effect names unknown exposure '" + name + "'");
    for (const auto& w : ws) check_window(w.lo, w.hi);
  }
  for (const auto& it : c.interactions) {
    if (!find(it.exposure1) || !find(it.exposure2)) throw DataError("interaction names an unknown exposure");
    check_window(it.lo1, it.hi1);
    check_window(it.lo2, it.hi2);
  }
  if (c.family != "gaussian" && c.family != "logit") throw DataError("family must be gaussian or logit");
  if (!(c.noise_sd >= 0.0)) throw DataError("noise_sd must be non-negative");
  if (!(std::fabs(c.ar1) < 1.0)) throw DataError("ar1 must lie in (-1, 1)");
  if (!(c.cross_correlation >= 0.0 && c.cross_correlation <= 1.0)) throw DataError("cross_correlation must lie in [0, 1]");
  if (!(c.exposure_sd > 0.0)) throw DataError("exposure_sd must be positive");
  if (c.covariates < 0) throw DataError("covariates must be non-negative");
  if (c.modifier_rule.active()) {
    const auto& m = c.modifier_rule.modifier;
    if (m != "sex" && m != "smk") throw DataError("modifier_rule supports the categorical modifiers sex and smk");
  }
}

// Built-in generator. Modifier columns: sex (F/M), age, smk (no/yes), bmi.
inline Simulation simulate_dataset(const SimulationConfig& c, std::uint64_t seed) {
  validate(c);
  Rng rng(seed);
  const int n = c.n, T = c.lags;
  const int M = static_cast<int>(c.exposures.size());

  Simulation sim;
  auto& truth = sim.truth;
  truth.theta = Eigen::MatrixXd::Zero(M, T);
  for (int m = 0; m < M; ++m) {
    auto it = c.effects.find(c.exposures[m]);
    if (it == c.effects.end()) continue;
    for (const auto& w : it->second)
      for (int t = w.lo; t <= w.hi; ++t) truth.theta(m, t - 1) += w.value;
  }
  truth.interactions = c.interactions;
  truth.rule = c.modifier_rule;

  // Exposures: stationary AR(1) innovations sharing a common component.
  std::vector<Eigen::MatrixXd> X(static_cast<std::size_t>(M), Eigen::MatrixXd(n, T));
  const double rho = c.ar1;
  const double innov = std::sqrt(1.0 - rho * rho);
  const double shared = std::sqrt(c.cross_correlation);
  const double own = std::sqrt(1.0 - c.cross_correlation);
  std::vector<double> prev(static_cast<std::size_t>(M));
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < T; ++t) {
      const double common = rng.normal();
      for (int m = 0; m < M; ++m) {
        const double e = shared * common + own * rng.normal();
        prev[m] = t == 0 ? e : rho * prev[m] + innov * e;
        X[m](i, t) = prev[m];
      }
    }
  }
  for (auto& x : X) x = (x.array() * c.exposure_sd + c.exposure_mean).matrix();

  // Modifiers.
  ModifierColumn sex{"sex", ModifierKind::categorical, {}, {"F", "M"}};
  ModifierColumn age{"age", ModifierKind::continuous, {}, {}};
  ModifierColumn smk{"smk", ModifierKind::categorical, {}, {"no", "yes"}};
  ModifierColumn bmi{"bmi", ModifierKind::continuous, {}, {}};
  for (int i = 0; i < n; ++i) {
    sex.values.push_back(rng.uniform() < 0.5 ? 0.0 : 1.0);
    age.values.push_back(std::round((18.0 + 27.0 * rng.uniform()) * 10.0) / 10.0);
    smk.values.push_back(rng.uniform() < 0.3 ? 1.0 : 0.0);
    bmi.values.push_back(std::round(rng.normal(25.0, 4.0) * 10.0) / 10.0);
  }

  // Covariates and their coefficients.
  Eigen::MatrixXd Z(n, 1 + c.covariates);
  Z.col(0).setOnes();
  truth.gamma.resize(1 + c.covariates);
  truth.gamma[0] = c.intercept;
  for (int k = 0; k < c.covariates; ++k) {
    for (int i = 0; i < n; ++i) Z(i, 1 + k) = rng.normal();
    truth.gamma[1 + k] = 0.5 / (k + 1);
  }

  truth.active.assign(static_cast<std::size_t>(n), true);
  if (c.modifier_rule.active()) {
    const ModifierColumn& col = c.modifier_rule.modifier == "sex" ? sex : smk;
    const int level = col.level_index(c.modifier_rule.level);
    if (level < 0) throw DataError("modifier_rule level '" + c.modifier_rule.level + "' not among the modifier's levels");
    for (int i = 0; i < n; ++i) truth.active[i] = col.values[i] == level;
  }

  truth.signal = Eigen::VectorXd::Zero(n);
  for (int m = 0; m < M; ++m) truth.signal += X[m] * truth.theta.row(m).transpose();
  for (const auto& it : c.interactions) {
    int a = 0, b = 0;
    for (int m = 0; m < M; ++m) {
      if (c.exposures[m] == it.exposure1) a = m;
      if (c.exposures[m] == it.exposure2) b = m;
    }
    const Eigen::VectorXd s1 = X[a].middleCols(it.lo1 - 1, it.hi1 - it.lo1 + 1).rowwise().sum();
    const Eigen::VectorXd s2 = X[b].middleCols(it.lo2 - 1, it.hi2 - it.lo2 + 1).rowwise().sum();
    truth.signal += it.value * s1.cwiseProduct(s2);
  }
  for (int i = 0; i < n; ++i)
    if (!truth.active[i]) truth.signal[i] = 0.0;

  Eigen::VectorXd y(n);
  const Eigen::VectorXd eta = Z * truth.gamma + truth.signal;
  for (int i = 0; i < n; ++i) {
    if (c.family == "logit") {
      const double p = 1.0 / (1.0 + std::exp(-eta[i]));
      y[i] = rng.uniform() < p ? 1.0 : 0.0;
    } else {
      y[i] = eta[i] + (c.noise_sd > 0.0 ? c.noise_sd * rng.normal() : 0.0);
    }
  }

  auto& d = sim.data;
  d.outcome_name = "y";
  d.outcome = y;
  d.design = Z;
  d.design_names = {"(Intercept)"};
  for (int k = 0; k < c.covariates; ++k) {
    d.design_names.push_back("c" + std::to_string(k + 1));
    d.covariate_names.push_back("c" + std::to_string(k + 1));
  }
  for (int m = 0; m < M; ++m) d.exposures.push_back({c.exposures[m], X[m], 1.0, false});
  d.modifiers = {sex, age, smk, bmi};

  auto& tab = sim.table;
  tab.header.push_back("y");
  for (int k = 0; k < c.covariates; ++k) tab.header.push_back("c" + std::to_string(k + 1));
  for (const auto* mc : {&sex, &age, &smk, &bmi}) tab.header.push_back(mc->name);
  for (int m = 0; m < M; ++m)
    for (int t = 1; t <= T; ++t) tab.header.push_back(c.exposures[m] + "_" + std::to_string(t));
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> row;
    row.push_back(format_number(y[i]));
    for (int k = 0; k < c.covariates; ++k) row.push_back(format_number(Z(i, 1 + k)));
    for (const auto* mc : {&sex, &age, &smk, &bmi}) {
      if (mc->kind == ModifierKind::categorical)
        row.push_back(mc->levels[static_cast<std::size_t>(mc->values[i])]);
      else
        row.push_back(format_number(mc->values[i]));
    }
    for (int m = 0; m < M; ++m)
      for (int t = 0; t < T; ++t) row.push_back(format_number(X[m](i, t)));
    tab.rows.push_back(std::move(row));
  }
  d.validate();
  return sim;
}

}  // namespace laggard
