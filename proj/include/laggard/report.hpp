#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "laggard/archive.hpp"
#include "laggard/diagnostics.hpp"
#include "laggard/inference.hpp"

namespace laggard {

namespace report_detail {

inline std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v == 0.0 ? 0.0 : v);
  return buf;
}

inline std::string short_number(double v) {
  std::string s = fixed(v, 2);
  while (s.find('.') != std::string::npos && (s.back() == '0' || s.back() == '.')) {
    const bool dot = s.back() == '.';
    s.pop_back();
    if (dot) break;
  }
  return s;
}

inline std::string thousands(long long n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

inline std::string pad_right(const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); }
inline std::string pad_left(const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; }

inline std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

inline std::string interaction_label(InteractionMode m) {
  switch (m) {
    case InteractionMode::none: return "no interactions";
    case InteractionMode::noself: return "no-self interactions";
    case InteractionMode::all: return "all interactions";
  }
  return "";
}

// Rows of (label, mean, lower, upper) with a significance star column.
inline void interval_table(std::ostream& out, const std::vector<std::string>& labels, const std::vector<double>& mean,
                           const std::vector<double>& lower, const std::vector<double>& upper) {
  std::size_t w = 0;
  for (const auto& l : labels) w = std::max(w, l.size() + 1);
  std::vector<std::array<std::string, 3>> cells;
  std::size_t cw = 5;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cells.push_back({fixed(mean[i]), fixed(lower[i]), fixed(upper[i])});
    for (const auto& c : cells.back()) cw = std::max(cw, c.size());
  }
  out << std::string(w, ' ') << " " << pad_left("Mean", cw) << " " << pad_left("Lower", cw) << " "
      << pad_left("Upper", cw) << "\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool star = stats::excludes_zero(lower[i], upper[i]);
    out << pad_right((star ? "*" : " ") + labels[i], w) << " " << pad_left(cells[i][0], cw) << " "
        << pad_left(cells[i][1], cw) << " " << pad_left(cells[i][2], cw) << "\n";
  }
}

}  // namespace report_detail

// The "Model run info" block.
inline void render_run_info(std::ostream& out, const PosteriorFit& fit, double conf_level) {
  using namespace report_detail;
  const auto& s = fit.spec;
  std::string rhs;
  for (std::size_t j = 1; j < fit.data.design_names.size(); ++j) rhs += (rhs.empty() ? "" : " + ") + fit.data.design_names[j];
  if (rhs.empty()) rhs = "1";
  out << "Model run info:\n";
  out << "- " << fit.data.outcome_name << " ~ " << rhs << "\n";
  out << "- sample size: " << thousands(fit.data.n) << "\n";
  out << "- family: " << to_string(s.family) << "\n";
  out << "- " << s.tree_prior.num_trees << " trees (alpha = " << format_number(s.tree_prior.alpha)
      << ", beta = " << format_number(s.tree_prior.beta) << ")\n";
  out << "- " << fit.control.n_burn << " burn-in iterations\n";
  out << "- " << fit.control.n_iter << " post-burn iterations\n";
  out << "- " << fit.control.n_thin << " thinning factor\n";
  if (s.mixture) {
    out << "- " << fit.num_exposures() << " exposures measured at " << fit.lags() << " time points\n";
    const auto pairs = pair_list(s, fit.data.exposure_names).size();
    out << "- " << pairs << " two-way interactions (" << interaction_label(s.interaction) << ")\n";
    out << "- " << format_number(s.kappa) << " kappa sparsity prior\n";
  } else {
    out << "- exposure measured at " << fit.lags() << " time points\n";
  }
  if (s.het) out << "- " << format_number(s.modifier_sparsity) << " modifier sparsity prior\n";
  out << "- " << format_number(conf_level) << " confidence level\n";
}

inline std::string render_summary(const FitSummary& sum, const PosteriorFit& fit) {
  using namespace report_detail;
  std::ostringstream out;
  out << "---\n" << upper(fit.spec.model_class()) << " summary\n\n";
  render_run_info(out, fit, sum.conf_level);
  out << "\nFixed effect coefficients:\n";
  {
    std::vector<std::string> labels;
    std::vector<double> m, lo, hi;
    for (const auto& r : sum.fixed_effects) {
      labels.push_back(r.name);
      m.push_back(r.interval.mean);
      lo.push_back(r.interval.lower);
      hi.push_back(r.interval.upper);
    }
    interval_table(out, labels, m, lo, hi);
  }
  out << "---\n* = CI does not contain zero\n\n";

  if (fit.spec.het) {
    out << "Modifiers:\n";
    std::size_t w = 0;
    for (const auto& [name, pip] : sum.pips) w = std::max(w, name.size());
    out << std::string(w, ' ') << "    PIP\n";
    for (const auto& [name, pip] : sum.pips) out << pad_right(name, w) << " " << fixed(pip, 4) << "\n";
    out << "---\nPIP = Posterior inclusion probability\n";
    if (fit.spec.mixture) {
      out << "\nExposures:\n* = Exposure selected by Bayes Factor\n(x.xx) = Relative effect size\n\n";
      for (const auto& e : sum.exposures)
        out << " " << (e.selection.selected ? "*" : " ") << e.name << " (" << short_number(e.selection.relative_size)
            << ")\n";
    }
  } else if (!fit.spec.mixture) {
    const auto& e = sum.exposures.front();
    const auto& t = e.curve.table;
    out << "DLM effect:\n";
    out << "range = [" << fixed(*std::min_element(t.mean.begin(), t.mean.end())) << ", "
        << fixed(*std::max_element(t.mean.begin(), t.mean.end())) << "]\n";
    out << "signal-to-noise = " << fixed(sum.snr) << "\n";
    out << "critical windows: " << render_windows(e.curve.windows) << "\n";
    std::vector<std::string> labels;
    for (std::size_t l = 0; l < t.size(); ++l) labels.push_back("Period " + std::to_string(l + 1));
    interval_table(out, labels, t.mean, t.lower, t.upper);
    out << "---\n* = CI does not contain zero\n\n";
    out << "cumulative effect: " << fixed(e.curve.cumulative.mean) << " [" << fixed(e.curve.cumulative.lower) << ", "
        << fixed(e.curve.cumulative.upper) << "]\n";
  } else {
    out << "--\nExposure effects: critical windows\n* = Exposure selected by Bayes Factor\n"
           "(x.xx) = Relative effect size\n\n";
    for (const auto& e : sum.exposures)
      out << " " << (e.selection.selected ? "*" : "") << e.name << " (" << short_number(e.selection.relative_size)
          << "): " << render_windows(e.curve.windows) << "\n";
    out << "\nMarginal cumulative effects (co-exposures at " << sum.policy << "):\n";
    for (const auto& e : sum.exposures)
      out << " " << e.name << ": " << fixed(e.curve.cumulative.mean) << " [" << fixed(e.curve.cumulative.lower) << ", "
          << fixed(e.curve.cumulative.upper) << "]\n";
    if (fit.spec.interactions()) {
      out << "--\nInteraction effects: critical windows\n";
      for (const auto& it : sum.interactions) {
        if (it.rows.empty()) continue;
        out << "\n " << it.exposure1 << "/" << it.exposure2 << " (" << short_number(it.relative_size) << "):\n";
        for (const auto& r : it.rows) out << " " << r.lag1 << "/" << render_windows(r.runs) << "\n";
      }
    }
  }
  out << "---\n";
  if (sum.residual_se) out << "residual standard errors: " << fixed(*sum.residual_se) << "\n---\n";
  if (fit.spec.het) out << "To obtain exposure effect estimates, use the 'serve' command.\n";
  return out.str();
}

// --- machine-readable documents --------------------------------------------

inline json interval_json(const stats::Interval& iv) {
  return {{"mean", iv.mean}, {"lower", iv.lower}, {"upper", iv.upper}};
}

inline json lag_table_json(const LagTable& t) {
  std::vector<int> crit;
  for (bool b : t.critical) crit.push_back(b ? 1 : 0);
  return {{"mean", t.mean}, {"lower", t.lower}, {"upper", t.upper}, {"critical", crit}};
}

inline json windows_json(const std::vector<LagRun>& runs) {
  json a = json::array();
  for (const auto& r : runs) a.push_back({r.lo, r.hi});
  return a;
}

inline json curve_json(const CurveSummary& c) {
  return {{"lags", lag_table_json(c.table)},
          {"cumulative", interval_json(c.cumulative)},
          {"critical_windows", windows_json(c.windows)},
          {"critical_windows_text", render_windows(c.windows)}};
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json selection_json(const ExposureSelection& s) {
  return {{"name", s.name},
          {"selected", s.selected},
          {"bayes_factor", finite_or_null(s.bayes_factor)},
          {"posterior_inclusion", s.posterior_inclusion},
          {"prior_inclusion", s.prior_inclusion},
          {"relative_size", s.relative_size}};
}

inline json summary_json(const FitSummary& sum, const PosteriorFit& fit) {
  json j;
  j["format_version"] = kFormatVersion;
  j["model_class"] = fit.spec.model_class();
  j["conf_level"] = sum.conf_level;
  j["marginalize"] = sum.policy;
  j["fixed_effects"] = json::array();
  for (const auto& r : sum.fixed_effects) {
    json row = interval_json(r.interval);
    row["name"] = r.name;
    row["significant"] = r.significant;
    j["fixed_effects"].push_back(row);
  }
  j["exposures"] = json::array();
  for (const auto& e : sum.exposures) {
    json row = selection_json(e.selection);
    if (e.has_curve) row["effect"] = curve_json(e.curve);
    j["exposures"].push_back(row);
  }
  j["interactions"] = json::array();
  for (const auto& it : sum.interactions) {
    json rows = json::array();
    for (const auto& r : it.rows) rows.push_back({{"lag1", r.lag1}, {"lag2_runs", windows_json(r.runs)}});
    j["interactions"].push_back({{"exposure1", it.exposure1},
                                 {"exposure2", it.exposure2},
                                 {"relative_size", it.relative_size},
                                 {"significant_cells", it.significant_cells},
                                 {"cells", it.cells},
                                 {"windows", rows}});
  }
  j["pips"] = json::object();
  for (const auto& [name, pip] : sum.pips) j["pips"][name] = pip;
  j["residual_se"] = sum.residual_se ? json(*sum.residual_se) : json(nullptr);
  j["signal_to_noise"] = sum.snr;
  return j;
}

inline json diagnostics_json(const DiagnosticsReport& rep) {
  json j;
  j["format_version"] = kFormatVersion;
  j["accounting_ok"] = rep.accounting_ok;
  j["traces"] = json::array();
  for (const auto& s : rep.traces)
    j["traces"].push_back({{"name", s.name}, {"mean", stats::mean(s.values)}, {"mcse", stats::batch_means_se(s.values)}});
  j["acceptance"] = json::array();
  for (const auto& a : rep.acceptance) {
    json by = json::object();
    for (std::size_t k = 0; k < 3; ++k) by[kMoveNames[k]] = finite_or_null(a.by_move[k]);
    j["acceptance"].push_back({{"kind", a.kind}, {"overall", a.overall}, {"by_move", by}});
  }
  j["tree_sizes"] = json::array();
  for (const auto& s : rep.tree_sizes) j["tree_sizes"].push_back({{"kind", s.name}, {"mean", stats::mean(s.values)}});
  j["densities"] = json::array();
  for (const auto& d : rep.densities)
    j["densities"].push_back({{"name", d.name}, {"lower", d.lower}, {"width", d.width}, {"density", d.density}});
  return j;
}

inline json rhat_json(const std::vector<RHatRow>& rows) {
  json a = json::array();
  for (const auto& r : rows) a.push_back({{"name", r.name}, {"rhat", r.rhat.value}, {"degenerate", r.rhat.degenerate}});
  return a;
}

// Long-format plot table: one (series, index, value) record per line.
inline std::string series_csv(const std::vector<Series>& series, const std::string& index_name) {
  std::ostringstream out;
  out << "series," << index_name << ",value\n";
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.values.size(); ++i) out << s.name << "," << i + 1 << "," << format_number(s.values[i]) << "\n";
  return out.str();
}

}  // namespace laggard
