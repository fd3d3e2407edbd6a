#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "laggard/archive.hpp"
#include "laggard/inference.hpp"
#include "laggard/report.hpp"

namespace laggard {

struct ApiResponse {
  int status = 200;
  json body;
};

// Read-only JSON API over one fit. Handlers are const and safe to call
// concurrently.
class ApiHandlers {
 public:
  explicit ApiHandlers(PosteriorFit fit) : fit_(std::move(fit)) {}

  const PosteriorFit& fit() const { return fit_; }

  ApiResponse handle(const std::string& method, const std::string& path,
                     const std::map<std::string, std::string>& query, const std::string& body) const {
    try {
      if (path == "/api/meta" && method == "GET") return ok(meta());
      if (path == "/api/summary" && method == "GET") return ok(summary(query));
      if (path == "/api/exposures" && method == "GET") return ok(exposures(query));
      if (path == "/api/pips" && method == "GET") return het_only([&] { return pips(); });
      if (path == "/api/splits" && method == "GET") return het_only([&] { return splits(query); });
      if (path == "/api/individual" && method == "POST") return het_only([&] { return individual(parse(body)); });
      if (path == "/api/subgroup" && method == "POST") return het_only([&] { return subgroup(parse(body)); });
      return error(404, "not_found", "no endpoint " + method + " " + path);
    } catch (const BadRequest& e) {
      return error(400, "bad_request", e.what());
    } catch (const Error& e) {
      return error(400, e.code() == ExitCode::data ? "bad_input" : "bad_request", e.what());
    } catch (const json::exception& e) {
      return error(400, "bad_request", e.what());
    }
  }

  json meta() const {
    json j = base();
    j["model_class"] = fit_.spec.model_class();
    j["family"] = to_string(fit_.spec.family);
    j["mixture"] = fit_.spec.mixture;
    j["het"] = fit_.spec.het;
    j["interaction"] = to_string(fit_.spec.interaction);
    j["n"] = fit_.data.n;
    j["lags"] = fit_.lags();
    j["retained"] = fit_.retained();
    j["outcome"] = fit_.data.outcome_name;
    j["exposures"] = json::array();
    for (std::size_t m = 0; m < fit_.num_exposures(); ++m)
      j["exposures"].push_back({{"name", fit_.data.exposure_names[m]}, {"scale_factor", fit_.data.scale_factors[m]}});
    j["modifiers"] = json::array();
    for (const auto& c : fit_.modifier_columns) {
      json mj{{"name", c.name}};
      if (c.kind == ModifierKind::continuous) {
        mj["kind"] = "continuous";
        mj["min"] = *std::min_element(c.values.begin(), c.values.end());
        mj["max"] = *std::max_element(c.values.begin(), c.values.end());
      } else {
        mj["kind"] = "categorical";
        mj["levels"] = c.levels;
      }
      j["modifiers"].push_back(mj);
    }
    j["control"] = control_json(fit_.control);
    return j;
  }

  json summary(const std::map<std::string, std::string>& query) const {
    const double conf = conf_of(query);
    const auto policy = fit_.spec.mixture && !fit_.spec.het ? parse_marginalize(value(query, "marginalize", "mean"))
                                                            : MarginalizePolicy::mean();
    json j = summary_json(summarize(fit_, conf, policy), fit_);
    return j;
  }

  json exposures(const std::map<std::string, std::string>& query) const {
    const auto policy = fit_.spec.mixture && !fit_.spec.het ? parse_marginalize(value(query, "marginalize", "mean"))
                                                            : MarginalizePolicy::mean();
    double threshold = 0.5;
    if (const auto it = query.find("bf_threshold"); it != query.end() && !parse_number(it->second, threshold))
      throw BadRequest("bf_threshold must be a number");
    json j = base();
    j["exposures"] = json::array();
    for (const auto& s : exposure_selection(fit_, threshold, policy)) j["exposures"].push_back(selection_json(s));
    return j;
  }

  json pips() const {
    json j = base();
    j["pips"] = json::array();
    for (const auto& [name, p] : modifier_pip(fit_)) j["pips"].push_back({{"modifier", name}, {"pip", p}});
    return j;
  }

  json splits(const std::map<std::string, std::string>& query) const {
    const auto it = query.find("modifier");
    if (it == query.end()) throw BadRequest("query parameter 'modifier' is required");
    json j = base();
    j["modifier"] = it->second;
    j["splits"] = json::array();
    for (const auto& sp : split_proportions(fit_, it->second)) {
      json s{{"count", sp.count}, {"proportion", sp.proportion}};
      if (sp.levels.empty())
        s["threshold"] = sp.threshold;
      else
        s["levels"] = sp.levels;
      j["splits"].push_back(s);
    }
    return j;
  }

  json individual(const json& req) const {
    const double conf = req.value("conf", 0.95);
    if (!req.contains("modifiers") || !req["modifiers"].is_object()) throw BadRequest("body needs a 'modifiers' object");
    std::map<std::string, ModifierValue> values;
    for (const auto& [k, v] : req["modifiers"].items()) {
      if (v.is_number())
        values[k] = v.get<double>();
      else if (v.is_string())
        values[k] = v.get<std::string>();
      else
        throw BadRequest("modifier '" + k + "' must be a number or string");
    }
    const auto row = modifier_row(fit_, values);
    const auto curves = individualized_effect(fit_, row, conf);
    json j = base();
    j["conf"] = conf;
    j["exposures"] = curves_json(curves);
    return j;
  }

  json subgroup(const json& req) const {
    const double conf = req.value("conf", 0.95);
    if (!req.contains("group_by") || !req["group_by"].is_array()) throw BadRequest("body needs a 'group_by' array");
    std::vector<GroupBy> groups;
    for (const auto& g : req["group_by"]) {
      GroupBy gb;
      gb.modifier = g.at("modifier").get<std::string>();
      if (g.contains("cuts")) gb.cuts = g["cuts"].get<std::vector<double>>();
      if (g.contains("levels")) gb.levels = g["levels"].get<std::vector<std::string>>();
      groups.push_back(std::move(gb));
    }
    json j = base();
    j["conf"] = conf;
    j["subgroups"] = json::array();
    for (const auto& s : subgroup_effect(fit_, groups, conf))
      j["subgroups"].push_back({{"label", s.label},
                                {"parts", s.parts},
                                {"size", s.size},
                                {"empty", s.empty()},
                                {"exposures", curves_json(s.curves)}});
    return j;
  }

 private:
  struct BadRequest : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

  PosteriorFit fit_;

  static json base() { return {{"format_version", kFormatVersion}}; }
  static ApiResponse ok(json body) { return {200, std::move(body)}; }

  static ApiResponse error(int status, const std::string& code, const std::string& message) {
    json j = base();
    j["error"] = {{"code", code}, {"message", message}};
    return {status, j};
  }

  template <class F>
  ApiResponse het_only(F&& f) const {
    if (!fit_.spec.het) return error(404, "not_heterogeneous", "this endpoint needs a heterogeneous (hdlm/hdlmm) fit");
    return ok(f());
  }

  static json parse(const std::string& body) {
    try {
      return json::parse(body.empty() ? "{}" : body);
    } catch (const json::exception& e) {
      throw BadRequest(std::string("malformed JSON body: ") + e.what());
    }
  }

  static std::string value(const std::map<std::string, std::string>& q, const std::string& key, std::string fallback) {
    const auto it = q.find(key);
    return it == q.end() ? fallback : it->second;
  }

  static double conf_of(const std::map<std::string, std::string>& q) {
    double conf = 0.95;
    if (const auto it = q.find("conf"); it != q.end() && !parse_number(it->second, conf))
      throw BadRequest("conf must be a number");
    return conf;
  }

  json curves_json(const std::vector<CurveSummary>& curves) const {
    json a = json::array();
    for (std::size_t m = 0; m < curves.size(); ++m) {
      json c = curve_json(curves[m]);
      c["name"] = fit_.data.exposure_names[m];
      a.push_back(c);
    }
    return a;
  }
};

}  // namespace laggard
