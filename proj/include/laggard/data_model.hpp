#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "laggard/error.hpp"
#include "laggard/stats.hpp"
#include "laggard/table.hpp"

namespace laggard {

// One longitudinal exposure in wide format: n rows by T lag columns.
struct ExposureMatrix {
  std::string name;
  Eigen::MatrixXd values;
  double scale_factor = 1.0;
  bool centered = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index lags() const { return values.cols(); }

  void validate() const {
    if (values.rows() < 1) throw DataError("exposure '" + name + "' has no rows");
    if (values.cols() < 2) throw DataError("exposure '" + name + "' needs at least 2 lags");
    if (!values.allFinite()) throw DataError("exposure '" + name + "' has missing or non-finite values");
    if (!(scale_factor > 0.0)) throw DataError("exposure '" + name + "' has non-positive scale factor");
  }
};

enum class ModifierKind { continuous, categorical };

// A modifier column. Categorical values are stored as level indices into
// `levels`, which are sorted lexicographically.
struct ModifierColumn {
  std::string name;
  ModifierKind kind = ModifierKind::continuous;
  std::vector<double> values;
  std::vector<std::string> levels;

  int level_index(const std::string& level) const {
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (levels[i] == level) return static_cast<int>(i);
    return -1;
  }
};

// Split candidates of one modifier. Continuous candidates are thresholds
// (value <= threshold goes left); categorical candidates are level subsets
// as bit masks over `levels` (member goes left).
struct ModifierDef {
  std::string name;
  ModifierKind kind = ModifierKind::continuous;
  std::vector<double> thresholds;
  std::vector<std::uint64_t> subsets;
  std::vector<std::string> levels;

  std::size_t num_candidates() const {
    return kind == ModifierKind::continuous ? thresholds.size() : subsets.size();
  }
};

struct Dataset {
  std::string outcome_name = "y";
  Eigen::VectorXd outcome;
  Eigen::MatrixXd design;
  std::vector<std::string> design_names;
  std::vector<std::string> covariate_names;
  std::vector<ExposureMatrix> exposures;
  std::vector<ModifierColumn> modifiers;

  Eigen::Index n() const { return outcome.size(); }
  Eigen::Index lags() const { return exposures.empty() ? 0 : exposures.front().lags(); }
  std::size_t num_exposures() const { return exposures.size(); }

  std::size_t exposure_index(const std::string& name) const {
    for (std::size_t m = 0; m < exposures.size(); ++m)
      if (exposures[m].name == name) return m;
    throw DataError("unknown exposure '" + name + "'");
  }

  std::size_t modifier_index(const std::string& name) const {
    for (std::size_t j = 0; j < modifiers.size(); ++j)
      if (modifiers[j].name == name) return j;
    throw DataError("unknown modifier '" + name + "'");
  }

  void validate() const {
    const Eigen::Index n_rows = outcome.size();
    if (n_rows < 1) throw DataError("dataset has no rows");
    if (!outcome.allFinite()) throw DataError("outcome has missing or non-finite values");
    if (design.rows() != n_rows) throw DataError("design rows differ from outcome length");
    if (static_cast<std::size_t>(design.cols()) != design_names.size())
      throw DataError("design column names do not match design width");
    if (!design.allFinite()) throw DataError("design has missing or non-finite values");
    if (exposures.empty()) throw DataError("dataset has no exposures");
    std::set<std::string> names;
    for (const auto& e : exposures) {
      e.validate();
      if (e.rows() != n_rows) throw DataError("exposure '" + e.name + "' row count differs from outcome");
      if (e.lags() != exposures.front().lags())
        throw DataError("exposures must share the same number of lags");
      if (!names.insert(e.name).second) throw DataError("duplicate exposure name '" + e.name + "'");
    }
    for (const auto& m : modifiers)
      if (static_cast<Eigen::Index>(m.values.size()) != n_rows)
        throw DataError("modifier '" + m.name + "' row count differs from outcome");
    if (design.cols() > 0) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
      if (qr.rank() < design.cols()) throw DataError("design matrix is rank deficient");
    }
  }
};

struct ExposureGroup {
  std::string name;
  std::vector<std::string> columns;
};

// Columns `prefix1 ... prefixT` (or an explicit count) in header order.
inline std::vector<std::string> lag_columns_by_prefix(const Table& t, const std::string& prefix,
                                                      int count = 0) {
  std::vector<std::string> cols;
  for (int l = 1;; ++l) {
    const std::string name = prefix + std::to_string(l);
    if (count > 0 && l > count) break;
    if (!t.has_column(name)) {
      if (count > 0) throw DataError("missing column '" + name + "'");
      break;
    }
    cols.push_back(name);
  }
  if (cols.empty()) throw DataError("no lag columns found with prefix '" + prefix + "'");
  return cols;
}

namespace detail {

inline double numeric_cell(const Table& t, std::size_t row, std::size_t col) {
  const std::string& cell = t.rows[row][col];
  if (is_missing_cell(cell))
    throw DataError("missing value at row " + std::to_string(row + 1) + ", column '" + t.header[col] + "'");
  double v = 0.0;
  if (!parse_number(cell, v))
    throw DataError("non-numeric value '" + cell + "' at row " + std::to_string(row + 1) + ", column '" +
                    t.header[col] + "'");
  return v;
}

inline bool column_is_numeric(const Table& t, std::size_t col) {
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& cell = t.rows[i][col];
    if (is_missing_cell(cell))
      throw DataError("missing value at row " + std::to_string(i + 1) + ", column '" + t.header[col] + "'");
    double v = 0.0;
    if (!parse_number(cell, v)) return false;
  }
  return true;
}

inline ModifierColumn read_modifier_column(const Table& t, const std::string& name) {
  const std::size_t col = t.column_index(name);
  ModifierColumn mc;
  mc.name = name;
  if (column_is_numeric(t, col)) {
    mc.kind = ModifierKind::continuous;
    mc.values.reserve(t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) mc.values.push_back(numeric_cell(t, i, col));
  } else {
    mc.kind = ModifierKind::categorical;
    std::set<std::string> levels;
    for (const auto& r : t.rows) levels.insert(r[col]);
    mc.levels.assign(levels.begin(), levels.end());
    for (const auto& r : t.rows) mc.values.push_back(static_cast<double>(mc.level_index(r[col])));
  }
  return mc;
}

}  // namespace detail

// Reference-coded design: intercept, numeric covariates as-is, categorical
// covariates expanded to indicators of every level but the lexicographically
// first.
inline void build_design(const std::vector<ModifierColumn>& covariates, Eigen::Index n,
                         Eigen::MatrixXd& design, std::vector<std::string>& names) {
  names = {"(Intercept)"};
  std::vector<Eigen::VectorXd> cols{Eigen::VectorXd::Ones(n)};
  for (const auto& c : covariates) {
    if (c.kind == ModifierKind::continuous) {
      cols.emplace_back(Eigen::Map<const Eigen::VectorXd>(c.values.data(), n));
      names.push_back(c.name);
    } else {
      for (std::size_t l = 1; l < c.levels.size(); ++l) {
        Eigen::VectorXd ind(n);
        for (Eigen::Index i = 0; i < n; ++i) ind[i] = c.values[i] == static_cast<double>(l) ? 1.0 : 0.0;
        cols.push_back(std::move(ind));
        names.push_back(c.name + c.levels[l]);
      }
    }
  }
  design.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) design.col(static_cast<Eigen::Index>(j)) = cols[j];
}

inline Dataset dataset_from_table(const Table& t, const std::string& outcome,
                                  const std::vector<std::string>& covariates,
                                  const std::vector<ExposureGroup>& exposure_groups,
                                  const std::vector<std::string>& modifiers) {
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  if (n < 1) throw DataError("input has no data rows");
  if (exposure_groups.empty()) throw DataError("at least one exposure group is required");

  // Resolve every column up front so missing columns are reported first.
  const std::size_t y_col = t.column_index(outcome);
  for (const auto& c : covariates) (void)t.column_index(c);
  for (const auto& g : exposure_groups)
    for (const auto& c : g.columns) (void)t.column_index(c);
  for (const auto& m : modifiers) (void)t.column_index(m);

  const std::size_t lags = exposure_groups.front().columns.size();
  for (const auto& g : exposure_groups)
    if (g.columns.size() != lags)
      throw DataError("exposure '" + g.name + "' has " + std::to_string(g.columns.size()) + " lag columns, expected " +
                      std::to_string(lags));

  Dataset d;
  d.outcome_name = outcome;
  d.outcome.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) d.outcome[i] = detail::numeric_cell(t, i, y_col);

  std::vector<ModifierColumn> cov_cols;
  for (const auto& c : covariates) cov_cols.push_back(detail::read_modifier_column(t, c));
  build_design(cov_cols, n, d.design, d.design_names);
  d.covariate_names = covariates;

  for (const auto& g : exposure_groups) {
    ExposureMatrix e;
    e.name = g.name;
    e.values.resize(n, static_cast<Eigen::Index>(lags));
    for (std::size_t l = 0; l < lags; ++l) {
      const std::size_t col = t.column_index(g.columns[l]);
      for (Eigen::Index i = 0; i < n; ++i) e.values(i, static_cast<Eigen::Index>(l)) = detail::numeric_cell(t, i, col);
    }
    d.exposures.push_back(std::move(e));
  }
  for (const auto& m : modifiers) d.modifiers.push_back(detail::read_modifier_column(t, m));
  d.validate();
  return d;
}

inline Dataset load_wide_table(const std::string& path, const std::string& outcome,
                               const std::vector<std::string>& covariates,
                               const std::vector<ExposureGroup>& exposure_groups,
                               const std::vector<std::string>& modifiers, char delim = ',') {
  return dataset_from_table(read_table(path, delim), outcome, covariates, exposure_groups, modifiers);
}

namespace detail {

// Dates as day numbers: ISO yyyy-mm-dd or plain integers.
inline long long parse_date(const std::string& s, std::size_t row) {
  double v = 0.0;
  if (parse_number(s, v)) {
    if (v != std::floor(v)) throw DataError("non-integer date at row " + std::to_string(row + 1));
    return static_cast<long long>(v);
  }
  int y = 0;
  unsigned m = 0, dd = 0;
  if (std::sscanf(s.c_str(), "%d-%u-%u", &y, &m, &dd) == 3) {
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{dd}};
    if (ymd.ok()) return std::chrono::sys_days{ymd}.time_since_epoch().count();
  }
  throw DataError("unparseable date '" + s + "' at row " + std::to_string(row + 1));
}

}  // namespace detail

// Time-series (long) table to wide lag format. Output row for date index t
// (t > L) holds every non-exposure column at t and `<exposure>_<l>` = value
// at t - l for l = 1..L.
inline Table pivot_time_series(const Table& series, const std::string& date_column,
                               const std::vector<std::string>& exposure_columns, int lags) {
  if (lags < 1) throw DataError("lag count must be at least 1");
  const std::size_t rows = series.rows.size();
  if (static_cast<std::size_t>(lags) >= rows)
    throw DataError("lag count " + std::to_string(lags) + " must be smaller than the number of rows (" +
                    std::to_string(rows) + ")");
  const std::size_t date_col = series.column_index(date_column);
  std::vector<std::size_t> exp_cols;
  for (const auto& e : exposure_columns) exp_cols.push_back(series.column_index(e));

  std::vector<long long> days(rows);
  for (std::size_t i = 0; i < rows; ++i) days[i] = detail::parse_date(series.rows[i][date_col], i);
  if (rows >= 2) {
    const long long step = days[1] - days[0];
    if (step <= 0) throw DataError("dates must be strictly increasing");
    for (std::size_t i = 2; i < rows; ++i)
      if (days[i] - days[i - 1] != step)
        throw DataError("dates must be sorted and equally spaced (problem at row " + std::to_string(i + 1) + ")");
  }

  std::vector<std::size_t> pass;
  for (std::size_t j = 0; j < series.header.size(); ++j)
    if (j != date_col && std::find(exp_cols.begin(), exp_cols.end(), j) == exp_cols.end()) pass.push_back(j);

  Table out;
  out.header.push_back(series.header[date_col]);
  for (std::size_t j : pass) out.header.push_back(series.header[j]);
  for (std::size_t e = 0; e < exp_cols.size(); ++e)
    for (int l = 1; l <= lags; ++l) out.header.push_back(exposure_columns[e] + "_" + std::to_string(l));

  for (std::size_t t = static_cast<std::size_t>(lags); t < rows; ++t) {
    std::vector<std::string> row;
    row.push_back(series.rows[t][date_col]);
    for (std::size_t j : pass) row.push_back(series.rows[t][j]);
    for (std::size_t e = 0; e < exp_cols.size(); ++e)
      for (int l = 1; l <= lags; ++l) {
        const std::string& cell = series.rows[t - static_cast<std::size_t>(l)][exp_cols[e]];
        if (is_missing_cell(cell))
          throw DataError("missing value at row " + std::to_string(t - l + 1) + ", column '" +
                          exposure_columns[e] + "'");
        row.push_back(cell);
      }
    out.rows.push_back(std::move(row));
  }
  return out;
}

// Pooled interquartile range of every cell.
inline double pooled_iqr(const Eigen::MatrixXd& values) {
  std::vector<double> all(values.data(), values.data() + values.size());
  std::sort(all.begin(), all.end());
  return stats::quantile_sorted(all, 0.75) - stats::quantile_sorted(all, 0.25);
}

inline ExposureMatrix iqr_scale(const ExposureMatrix& m) {
  if (m.values.size() == 0) throw DataError("cannot scale an empty exposure");
  const double iqr = pooled_iqr(m.values);
  if (!(iqr > 0.0)) throw DataError("exposure '" + m.name + "' has zero interquartile range");
  ExposureMatrix out = m;
  out.values = m.values / iqr;
  out.scale_factor = iqr;
  return out;
}

// Subtract the pooled mean. Only valid for models without lagged
// interactions; the engine refuses centered exposures otherwise.
inline ExposureMatrix center_exposure(const ExposureMatrix& m) {
  ExposureMatrix out = m;
  out.values.array() -= m.values.mean();
  out.centered = true;
  return out;
}

inline constexpr std::size_t kMaxCategoricalCandidates = 32;

inline ModifierDef modifier_split_candidates(const ModifierColumn& column, int max_splits) {
  if (max_splits < 1) throw DataError("modifier splits must be at least 1");
  ModifierDef def;
  def.name = column.name;
  def.kind = column.kind;
  def.levels = column.levels;
  if (column.kind == ModifierKind::continuous) {
    std::vector<double> sorted = column.values;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.empty()) return def;
    const double lo = sorted.front();
    const double hi = sorted.back();
    for (int k = 1; k <= max_splits; ++k) {
      const double q = stats::quantile_sorted(sorted, static_cast<double>(k) / (max_splits + 1));
      if (q > lo && q < hi && (def.thresholds.empty() || q > def.thresholds.back())) def.thresholds.push_back(q);
    }
    return def;
  }
  const std::size_t levels = column.levels.size();
  if (levels < 2) return def;
  if (levels > 63) throw DataError("modifier '" + column.name + "' has too many levels");
  const std::uint64_t full = (std::uint64_t{1} << levels) - 1;
  const std::uint64_t all_subsets = (std::uint64_t{1} << (levels - 1)) - 1;
  if (all_subsets <= kMaxCategoricalCandidates) {
    // Subsets containing level 0, excluding the full set: one per partition.
    for (std::uint64_t rest = 0; rest < (std::uint64_t{1} << (levels - 1)); ++rest) {
      const std::uint64_t s = 1 | (rest << 1);
      if (s != full) def.subsets.push_back(s);
    }
  } else {
    for (std::size_t l = 0; l < levels; ++l) def.subsets.push_back(std::uint64_t{1} << l);
  }
  return def;
}

// Stable FNV-1a digest of the numeric content, recorded in fit archives.
inline std::uint64_t data_hash(const Dataset& d) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  mix(d.outcome.data(), sizeof(double) * static_cast<std::size_t>(d.outcome.size()));
  mix(d.design.data(), sizeof(double) * static_cast<std::size_t>(d.design.size()));
  for (const auto& e : d.exposures) {
    mix(e.name.data(), e.name.size());
    mix(e.values.data(), sizeof(double) * static_cast<std::size_t>(e.values.size()));
  }
  for (const auto& m : d.modifiers) mix(m.values.data(), sizeof(double) * m.values.size());
  return h;
}

}  // namespace laggard
