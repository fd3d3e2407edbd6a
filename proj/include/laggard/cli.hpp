#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "laggard/archive.hpp"
#include "laggard/data_model.hpp"
#include "laggard/diagnostics.hpp"
#include "laggard/engine.hpp"
#include "laggard/http.hpp"
#include "laggard/inference.hpp"
#include "laggard/report.hpp"
#include "laggard/server.hpp"
#include "laggard/simulate.hpp"

namespace laggard::cli {

inline constexpr const char* kVersion = "1.0.0";

namespace detail {

inline char parse_delim(const std::string& d) {
  if (d == "comma" || d == ",") return ',';
  if (d == "tab" || d == "\\t" || d == "\t") return '\t';
  if (d.size() == 1) return d[0];
  throw UsageError("unknown delimiter '" + d + "'");
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

// Output path of chain c (0-based) when several chains are written.
inline std::string chain_path(const std::string& path, int c, int chains) {
  if (chains == 1) return path;
  const std::filesystem::path p(path);
  auto name = p.stem().string() + "." + std::to_string(c + 1) + p.extension().string();
  return (p.parent_path() / name).string();
}

struct FitOptions {
  std::string data;
  std::string delim = "comma";
  std::string outcome;
  std::vector<std::string> covariates;
  std::vector<std::string> exposures;
  int lags = 0;
  std::string scale = "none";
  bool center = false;
  std::string family = "gaussian";
  std::string dlm_type = "linear";
  bool mixture = false;
  bool het = false;
  std::string interactions = "noself";
  std::vector<std::string> modifiers;
  int modifier_splits = 10;
  int trees = 20;
  double alpha = 0.95;
  double beta = 2.0;
  double tau_scale = 1.0;
  double kappa = 1.0;
  double modifier_sparsity = 0.5;
  int burn = 2500;
  int iter = 10000;
  int thin = 5;
  std::uint64_t seed = 1;
  int chains = 1;
  bool verbose = false;
  std::string output;
};

inline std::vector<ExposureGroup> exposure_groups(const Table& t, const FitOptions& o) {
  if (o.exposures.empty()) throw UsageError("at least one --exposure is required");
  std::vector<ExposureGroup> groups;
  for (const auto& spec : o.exposures) {
    const auto eq = spec.find('=');
    ExposureGroup g;
    g.name = spec.substr(0, eq);
    const std::string prefix = eq == std::string::npos ? g.name + "_" : spec.substr(eq + 1);
    g.columns = lag_columns_by_prefix(t, prefix, o.lags);
    groups.push_back(std::move(g));
  }
  return groups;
}

inline int do_fit(const FitOptions& o, std::ostream& out) {
  ModelSpec spec;
  spec.family = parse_family(o.family);
  check_dlm_type(o.dlm_type);
  spec.dlm_type = o.dlm_type;
  spec.mixture = o.mixture;
  spec.het = o.het;
  spec.interaction = o.mixture ? parse_interaction_mode(o.interactions) : InteractionMode::none;
  spec.tree_prior.num_trees = o.trees;
  spec.tree_prior.alpha = o.alpha;
  spec.tree_prior.beta = o.beta;
  spec.shrinkage.tau_scale = o.tau_scale;
  spec.kappa = o.kappa;
  spec.modifier_sparsity = o.modifier_sparsity;
  if (o.modifier_splits < 1) throw UsageError("--modifier-splits must be at least 1");
  if (!o.het && !o.modifiers.empty()) throw UsageError("--modifiers requires --het");
  if (o.het && spec.family == Family::logit)
    throw UnsupportedModel("heterogeneous models support the gaussian family only");

  const Table table = read_table(o.data, parse_delim(o.delim));
  const auto groups = exposure_groups(table, o);
  const std::vector<std::string> modifiers = o.het && o.modifiers.empty() ? o.covariates : o.modifiers;
  Dataset data = laggard::dataset_from_table(table, o.outcome, o.covariates, groups, modifiers);
  if (o.scale == "iqr") {
    for (auto& e : data.exposures) e = iqr_scale(e);
  } else if (o.scale != "none") {
    throw UsageError("unknown --scale '" + o.scale + "' (expected none or iqr)");
  }
  if (o.center) {
    if (spec.interactions()) throw DataError("centering is refused when lagged interactions are requested");
    for (auto& e : data.exposures) e = center_exposure(e);
  }
  if (o.het)
    for (const auto& c : data.modifiers) spec.modifiers.push_back(modifier_split_candidates(c, o.modifier_splits));
  spec.validate();

  McmcControl control;
  control.n_burn = o.burn;
  control.n_iter = o.iter;
  control.n_thin = o.thin;
  control.seed = o.seed;
  control.n_chains = o.chains;
  control.verbose = o.verbose;
  control.validate();

  const auto fits = run_chains(spec, data, control);
  out << report_detail::upper(spec.model_class()) << " fit\n\n";
  render_run_info(out, fits.front(), 0.95);
  for (int c = 0; c < o.chains; ++c) {
    const auto path = chain_path(o.output, c, o.chains);
    write_archive(fits[static_cast<std::size_t>(c)], path);
    out << "wrote " << path << " (" << fits[static_cast<std::size_t>(c)].retained() << " retained draws)\n";
  }
  return 0;
}

inline json truth_json(const Simulation& sim, const SimulationConfig& c) {
  json j;
  j["format_version"] = kFormatVersion;
  j["exposures"] = c.exposures;
  j["theta"] = json::array();
  for (Eigen::Index m = 0; m < sim.truth.theta.rows(); ++m) {
    std::vector<double> row(static_cast<std::size_t>(sim.truth.theta.cols()));
    for (Eigen::Index t = 0; t < sim.truth.theta.cols(); ++t) row[static_cast<std::size_t>(t)] = sim.truth.theta(m, t);
    j["theta"].push_back(row);
  }
  j["interactions"] = json::array();
  for (const auto& it : sim.truth.interactions)
    j["interactions"].push_back({{"exposure1", it.exposure1},
                                 {"exposure2", it.exposure2},
                                 {"lags1", {it.lo1, it.hi1}},
                                 {"lags2", {it.lo2, it.hi2}},
                                 {"value", it.value}});
  if (sim.truth.rule.active()) j["modifier_rule"] = {{"modifier", sim.truth.rule.modifier}, {"level", sim.truth.rule.level}};
  j["gamma"] = std::vector<double>(sim.truth.gamma.data(), sim.truth.gamma.data() + sim.truth.gamma.size());
  return j;
}

}  // namespace detail

// Runs the command line; returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"laggard: treed distributed lag models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // pivot
  std::string pv_input, pv_output, pv_date, pv_delim = "comma";
  std::vector<std::string> pv_exposures;
  int pv_lags = 0;
  auto* pivot = app.add_subcommand("pivot", "Pivot a time-series table to wide lag format");
  pivot->add_option("--input", pv_input, "Time-series table")->required();
  pivot->add_option("--output", pv_output, "Wide-format output table")->required();
  pivot->add_option("--date", pv_date, "Date column (ISO yyyy-mm-dd or integer)")->required();
  pivot->add_option("--exposures", pv_exposures, "Exposure columns to lag")->required()->delimiter(',');
  pivot->add_option("--lags", pv_lags, "Number of lags L")->required();
  pivot->add_option("--delim", pv_delim, "Field delimiter: comma or tab");

  // simulate
  std::string sm_config, sm_output, sm_truth;
  std::uint64_t sm_seed = 1;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic wide-format dataset");
  simulate->add_option("--config", sm_config, "Generator key=value file");
  simulate->add_option("--seed", sm_seed, "Random seed");
  simulate->add_option("--output", sm_output, "Wide-format output table")->required();
  simulate->add_option("--truth", sm_truth, "Write the truth record as JSON");

  // fit
  detail::FitOptions fo;
  auto* fitc = app.add_subcommand("fit", "Fit a treed distributed lag model");
  fitc->set_config("--config", "", "Read options from a TOML/INI file");
  fitc->add_option("--data", fo.data, "Wide-format data table")->required();
  fitc->add_option("--delim", fo.delim, "Field delimiter: comma or tab");
  fitc->add_option("--outcome", fo.outcome, "Outcome column")->required();
  fitc->add_option("--covariates", fo.covariates, "Covariate columns")->delimiter(',');
  fitc->add_option("--exposure", fo.exposures, "Exposure NAME or NAME=PREFIX; lag columns PREFIX1..PREFIXT (default PREFIX is NAME_)")
      ->required();
  fitc->add_option("--lags", fo.lags, "Number of lag columns per exposure (default: detect)");
  fitc->add_option("--scale", fo.scale, "Exposure scaling: none or iqr");
  fitc->add_flag("--center", fo.center, "Center exposures (refused with interactions)");
  fitc->add_option("--family", fo.family, "gaussian or logit");
  fitc->add_option("--dlm-type", fo.dlm_type, "linear");
  fitc->add_flag("--mixture", fo.mixture, "Multi-exposure mixture model");
  fitc->add_flag("--het", fo.het, "Heterogeneous effects via modifier trees");
  fitc->add_option("--interactions", fo.interactions, "none, noself or all (mixture only)");
  fitc->add_option("--modifiers", fo.modifiers, "Modifier columns (default: all covariates)")->delimiter(',');
  fitc->add_option("--modifier-splits", fo.modifier_splits, "Split candidates per continuous modifier");
  fitc->add_option("--trees", fo.trees, "Number of trees");
  fitc->add_option("--alpha", fo.alpha, "Tree prior alpha");
  fitc->add_option("--beta", fo.beta, "Tree prior beta");
  fitc->add_option("--tau-scale", fo.tau_scale, "Half-Cauchy scale of the effect shrinkage");
  fitc->add_option("--kappa", fo.kappa, "Exposure selection concentration");
  fitc->add_option("--modifier-sparsity", fo.modifier_sparsity, "Modifier sparsity prior");
  fitc->add_option("--burn", fo.burn, "Burn-in iterations");
  fitc->add_option("--iter", fo.iter, "Post-burn iterations");
  fitc->add_option("--thin", fo.thin, "Thinning factor");
  fitc->add_option("--seed", fo.seed, "Random seed (chain c uses seed + c)");
  fitc->add_option("--chains", fo.chains, "Number of chains");
  fitc->add_flag("--verbose", fo.verbose, "Report progress on standard error");
  fitc->add_option("--output", fo.output, "Archive path (chain k of several: STEM.k.EXT)")->required();

  // summary
  std::string su_archive, su_marg = "mean", su_json;
  double su_conf = 0.95, su_bf = 0.5;
  auto* summary = app.add_subcommand("summary", "Summarize a fit archive");
  summary->add_option("archive", su_archive, "Fit archive")->required();
  summary->add_option("--conf", su_conf, "Credible level");
  summary->add_option("--marginalize", su_marg, "mean, qNN, qNN:pooled or levels=v1,v2,...");
  summary->add_option("--bf-threshold", su_bf, "Bayes factor threshold for exposure selection");
  summary->add_option("--json", su_json, "Write the machine-readable summary here");

  // diagnose
  std::vector<std::string> dg_archives, dg_params;
  std::vector<int> dg_lags;
  std::string dg_exposure, dg_outdir;
  int dg_window = 100;
  auto* diag = app.add_subcommand("diagnose", "Convergence diagnostics for one or more archives");
  diag->add_option("archives", dg_archives, "Fit archives (several: chains of one model)")->required();
  diag->add_option("--lags", dg_lags, "Lags to trace")->delimiter(',');
  diag->add_option("--params", dg_params, "sigma2, tau, snr, cumulative, gamma, gamma:NAME")->delimiter(',');
  diag->add_option("--exposure", dg_exposure, "Exposure whose lags are traced");
  diag->add_option("--window", dg_window, "Rolling acceptance window");
  diag->add_option("--output-dir", dg_outdir, "Write report files here instead of printing JSON");

  // serve
  std::string sv_archive, sv_host = "127.0.0.1", sv_assets;
  int sv_port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve the JSON API for the effect explorer");
  serve->add_option("archive", sv_archive, "Fit archive")->required();
  serve->add_option("--host", sv_host, "Bind address");
  serve->add_option("--port", sv_port, "Port");
  serve->add_option("--assets", sv_assets, "Static explorer assets directory");

  std::vector<const char*> argv{"laggard"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (*pivot) {
      const Table t = read_table(pv_input, detail::parse_delim(pv_delim));
      write_table(pv_output, pivot_time_series(t, pv_date, pv_exposures, pv_lags), detail::parse_delim(pv_delim));
      return 0;
    }
    if (*simulate) {
      const SimulationConfig cfg = sm_config.empty() ? SimulationConfig{} : read_simulation_config(sm_config);
      const auto sim = simulate_dataset(cfg, sm_seed);
      write_table(sm_output, sim.table);
      if (!sm_truth.empty()) detail::write_text(sm_truth, detail::truth_json(sim, cfg).dump(2) + "\n");
      return 0;
    }
    if (*fitc) return detail::do_fit(fo, out);
    if (*summary) {
      const auto fit = read_archive(su_archive);
      const auto policy = parse_marginalize(su_marg);
      if (policy.kind != MarginalizePolicy::Kind::mean && (!fit.spec.mixture || fit.spec.het))
        throw UsageError("--marginalize applies to non-heterogeneous mixture fits only");
      const auto sum = summarize(fit, su_conf, policy, su_bf);
      out << render_summary(sum, fit);
      if (!su_json.empty()) detail::write_text(su_json, summary_json(sum, fit).dump(2) + "\n");
      return 0;
    }
    if (*diag) {
      std::vector<PosteriorFit> fits;
      for (const auto& a : dg_archives) fits.push_back(read_archive(a));
      DiagnosticSelection sel;
      sel.lags = dg_lags;
      sel.params = dg_params;
      sel.rolling_window = dg_window;
      if (!dg_exposure.empty()) {
        const auto& names = fits.front().data.exposure_names;
        const auto it = std::find(names.begin(), names.end(), dg_exposure);
        if (it == names.end()) throw UsageError("unknown exposure '" + dg_exposure + "'");
        sel.exposure = static_cast<std::size_t>(it - names.begin());
      }
      std::vector<DiagnosticsReport> reports;
      for (const auto& f : fits) reports.push_back(diagnose(f, sel));
      json doc;
      doc["format_version"] = kFormatVersion;
      doc["chains"] = json::array();
      for (const auto& r : reports) doc["chains"].push_back(diagnostics_json(r));
      if (reports.size() > 1) doc["rhat"] = rhat_json(rhat_table(reports));
      if (dg_outdir.empty()) {
        out << doc.dump(2) << "\n";
        return 0;
      }
      std::filesystem::create_directories(dg_outdir);
      const std::filesystem::path dir(dg_outdir);
      detail::write_text((dir / "diagnostics.json").string(), doc.dump(2) + "\n");
      for (std::size_t c = 0; c < reports.size(); ++c) {
        const std::string suffix = reports.size() > 1 ? "." + std::to_string(c + 1) : "";
        std::vector<Series> rolling;
        for (const auto& a : reports[c].acceptance) rolling.push_back({a.kind, a.rolling});
        detail::write_text((dir / ("traces" + suffix + ".csv")).string(), series_csv(reports[c].traces, "draw"));
        detail::write_text((dir / ("acceptance" + suffix + ".csv")).string(), series_csv(rolling, "iteration"));
        detail::write_text((dir / ("tree_sizes" + suffix + ".csv")).string(),
                           series_csv(reports[c].tree_sizes, "iteration"));
      }
      out << "wrote diagnostics to " << dg_outdir << "\n";
      return 0;
    }
    if (*serve) {
      const ApiHandlers api(read_archive(sv_archive));
      serve_http(api, sv_host, sv_port, sv_assets, err);
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data);
  }
  return static_cast<int>(ExitCode::usage);
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace laggard::cli
