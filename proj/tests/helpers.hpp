#pragma once

#include <string>
#include <vector>

#include "laggard/laggard.hpp"

namespace testing_support {

inline laggard::McmcControl short_control(int burn = 100, int iter = 200, int thin = 2, std::uint64_t seed = 1) {
  laggard::McmcControl c;
  c.n_burn = burn;
  c.n_iter = iter;
  c.n_thin = thin;
  c.seed = seed;
  return c;
}

inline laggard::Simulation small_single(std::uint64_t seed = 1, int n = 200, int lags = 10) {
  laggard::SimulationConfig c;
  c.n = n;
  c.lags = lags;
  c.covariates = 1;
  c.effects["e1"] = {{3, 5, 0.3}};
  return laggard::simulate_dataset(c, seed);
}

inline laggard::Simulation small_mixture(std::uint64_t seed = 1, int n = 200, int lags = 8) {
  laggard::SimulationConfig c;
  c.n = n;
  c.lags = lags;
  c.exposures = {"e1", "e2", "e3"};
  c.effects["e1"] = {{2, 4, 0.3}};
  c.interactions = {{"e1", "e2", 2, 3, 5, 6, 0.1}};
  return laggard::simulate_dataset(c, seed);
}

inline laggard::Simulation small_het(std::uint64_t seed = 1, int n = 300, int lags = 8) {
  laggard::SimulationConfig c;
  c.n = n;
  c.lags = lags;
  c.effects["e1"] = {{2, 4, 0.4}};
  c.modifier_rule = {"sex", "M"};
  return laggard::simulate_dataset(c, seed);
}

inline std::vector<laggard::ModifierDef> modifier_defs(const laggard::Dataset& d, int splits = 5) {
  std::vector<laggard::ModifierDef> out;
  for (const auto& m : d.modifiers) out.push_back(laggard::modifier_split_candidates(m, splits));
  return out;
}

inline laggard::PosteriorFit fit_single(std::uint64_t seed = 1) {
  const auto sim = small_single(seed);
  laggard::ModelSpec s;
  s.tree_prior.num_trees = 5;
  return laggard::fit(s, sim.data, short_control(100, 200, 2, seed));
}

inline laggard::PosteriorFit fit_mixture(laggard::InteractionMode mode, std::uint64_t seed = 1) {
  const auto sim = small_mixture(seed);
  laggard::ModelSpec s;
  s.mixture = true;
  s.interaction = mode;
  s.tree_prior.num_trees = 6;
  return laggard::fit(s, sim.data, short_control(100, 200, 2, seed));
}

inline laggard::PosteriorFit fit_het(std::uint64_t seed = 1, bool mixture = false) {
  laggard::SimulationConfig c;
  c.n = 300;
  c.lags = 8;
  if (mixture) c.exposures = {"e1", "e2"};
  c.effects["e1"] = {{2, 4, 0.4}};
  c.modifier_rule = {"sex", "M"};
  const auto sim = laggard::simulate_dataset(c, seed);
  laggard::ModelSpec s;
  s.het = true;
  s.mixture = mixture;
  s.tree_prior.num_trees = 5;
  s.modifiers = modifier_defs(sim.data);
  return laggard::fit(s, sim.data, short_control(100, 200, 2, seed));
}

}  // namespace testing_support
