#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "laggard/error.hpp"
#include "laggard/model.hpp"

// Fit archive layout:
//   8 bytes   magic "LAGGARCH"
//   4 bytes   manifest length L (u32, little-endian)
//   L bytes   JSON manifest (UTF-8)
//   blocks    IEEE-754 doubles, little-endian, in manifest "blocks" order;
//             matrices row-major, rows x cols values each

namespace laggard {

inline constexpr char kArchiveMagic[8] = {'L', 'A', 'G', 'G', 'A', 'R', 'C', 'H'};
inline constexpr const char* kFormatVersion = "1.0";

using json = nlohmann::json;

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

inline std::uint64_t parse_hex64(const std::string& s) {
  try {
    return std::stoull(s, nullptr, 16);
  } catch (const std::exception&) {
    throw IoError("bad hash '" + s + "' in archive manifest");
  }
}

// --- manifest pieces --------------------------------------------------------

inline json modifier_def_json(const ModifierDef& d) {
  json j;
  j["name"] = d.name;
  j["kind"] = d.kind == ModifierKind::continuous ? "continuous" : "categorical";
  j["thresholds"] = d.thresholds;
  j["subsets"] = d.subsets;
  j["levels"] = d.levels;
  return j;
}

inline ModifierDef modifier_def_from(const json& j) {
  ModifierDef d;
  d.name = j.at("name").get<std::string>();
  d.kind = j.at("kind").get<std::string>() == "continuous" ? ModifierKind::continuous : ModifierKind::categorical;
  d.thresholds = j.at("thresholds").get<std::vector<double>>();
  d.subsets = j.at("subsets").get<std::vector<std::uint64_t>>();
  d.levels = j.at("levels").get<std::vector<std::string>>();
  return d;
}

inline json spec_json(const ModelSpec& s) {
  json j;
  j["family"] = to_string(s.family);
  j["dlm_type"] = s.dlm_type;
  j["mixture"] = s.mixture;
  j["het"] = s.het;
  j["interaction"] = to_string(s.interaction);
  j["trees"] = s.tree_prior.num_trees;
  j["alpha"] = s.tree_prior.alpha;
  j["beta"] = s.tree_prior.beta;
  j["tau_scale"] = s.shrinkage.tau_scale;
  j["kappa"] = s.kappa;
  j["modifier_sparsity"] = s.modifier_sparsity;
  j["move_weights"] = {s.moves.grow, s.moves.prune, s.moves.change};
  j["modifiers"] = json::array();
  for (const auto& d : s.modifiers) j["modifiers"].push_back(modifier_def_json(d));
  return j;
}

inline ModelSpec spec_from(const json& j) {
  ModelSpec s;
  s.family = parse_family(j.at("family").get<std::string>());
  s.dlm_type = j.at("dlm_type").get<std::string>();
  s.mixture = j.at("mixture").get<bool>();
  s.het = j.at("het").get<bool>();
  s.interaction = parse_interaction_mode(j.at("interaction").get<std::string>());
  s.tree_prior.num_trees = j.at("trees").get<int>();
  s.tree_prior.alpha = j.at("alpha").get<double>();
  s.tree_prior.beta = j.at("beta").get<double>();
  s.shrinkage.tau_scale = j.at("tau_scale").get<double>();
  s.kappa = j.at("kappa").get<double>();
  s.modifier_sparsity = j.at("modifier_sparsity").get<double>();
  const auto w = j.at("move_weights").get<std::vector<double>>();
  if (w.size() != 3) throw IoError("archive move weights are malformed");
  s.moves.grow = w[0];
  s.moves.prune = w[1];
  s.moves.change = w[2];
  for (const auto& d : j.at("modifiers")) s.modifiers.push_back(modifier_def_from(d));
  return s;
}

inline json control_json(const McmcControl& c) {
  return {{"burn", c.n_burn}, {"iter", c.n_iter}, {"thin", c.n_thin}, {"seed", c.seed}, {"chains", c.n_chains}};
}

inline McmcControl control_from(const json& j) {
  McmcControl c;
  c.n_burn = j.at("burn").get<int>();
  c.n_iter = j.at("iter").get<int>();
  c.n_thin = j.at("thin").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.n_chains = j.at("chains").get<int>();
  return c;
}

inline json data_json(const DataSummary& d) {
  std::vector<int> centered;
  for (bool b : d.centered) centered.push_back(b ? 1 : 0);
  return {{"n", d.n},
          {"lags", d.lags},
          {"outcome", d.outcome_name},
          {"design_names", d.design_names},
          {"exposure_names", d.exposure_names},
          {"scale_factors", d.scale_factors},
          {"centered", centered},
          {"hash", hex64(d.hash)}};
}

inline DataSummary data_from(const json& j) {
  DataSummary d;
  d.n = j.at("n").get<Eigen::Index>();
  d.lags = j.at("lags").get<int>();
  d.outcome_name = j.at("outcome").get<std::string>();
  d.design_names = j.at("design_names").get<std::vector<std::string>>();
  d.exposure_names = j.at("exposure_names").get<std::vector<std::string>>();
  d.scale_factors = j.at("scale_factors").get<std::vector<double>>();
  for (int c : j.at("centered").get<std::vector<int>>()) d.centered.push_back(c != 0);
  d.hash = parse_hex64(j.at("hash").get<std::string>());
  return d;
}

// Ordered exposure pairs carrying interaction slots.
inline json pair_list(const ModelSpec& spec, const std::vector<std::string>& names) {
  json out = json::array();
  if (!spec.interactions()) return out;
  for (std::size_t a = 0; a < names.size(); ++a)
    for (std::size_t b = a; b < names.size(); ++b)
      if (a != b || spec.interaction == InteractionMode::all) out.push_back({names[a], names[b]});
  return out;
}

// --- block I/O --------------------------------------------------------------

namespace archive_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  return std::bit_cast<double>(bits);
}

struct Block {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<double> values;  // row-major
};

inline Block matrix_block(std::string name, const Eigen::MatrixXd& m) {
  Block b{std::move(name), m.rows(), m.cols(), {}};
  b.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) b.values.push_back(m(i, j));
  return b;
}

inline Block vector_block(std::string name, std::vector<double> v) {
  const auto n = static_cast<Eigen::Index>(v.size());
  return Block{std::move(name), n, 1, std::move(v)};
}

inline Eigen::MatrixXd to_matrix(const Block& b) {
  Eigen::MatrixXd m(b.rows, b.cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < b.rows; ++i)
    for (Eigen::Index j = 0; j < b.cols; ++j) m(i, j) = b.values[k++];
  return m;
}

inline Eigen::VectorXd to_vector(const Block& b) {
  return Eigen::Map<const Eigen::VectorXd>(b.values.data(), static_cast<Eigen::Index>(b.values.size()));
}

}  // namespace archive_detail

// --- archive ---------------------------------------------------------------

inline std::string encode_archive(const PosteriorFit& fit) {
  using namespace archive_detail;
  std::vector<Block> blocks;
  blocks.push_back(matrix_block("gamma", fit.gamma));
  blocks.push_back(matrix_block("sigma2", fit.sigma2));
  blocks.push_back(matrix_block("tau", fit.tau));
  for (std::size_t m = 0; m < fit.theta.size(); ++m)
    blocks.push_back(matrix_block("theta:" + fit.data.exposure_names[m], fit.theta[m]));
  blocks.push_back(matrix_block("selection_counts", fit.selection_counts));
  blocks.push_back(matrix_block("modifier_usage", fit.modifier_usage));
  blocks.push_back(matrix_block("snr", fit.snr));
  blocks.push_back(matrix_block("tree_log", fit.tree_log));
  blocks.push_back(vector_block("records", fit.records));
  blocks.push_back(vector_block("record_offsets", fit.record_offsets));
  for (std::size_t m = 0; m < fit.exposures.size(); ++m)
    blocks.push_back(matrix_block("exposure:" + fit.data.exposure_names[m], fit.exposures[m]));
  for (const auto& c : fit.modifier_columns) blocks.push_back(vector_block("modifier:" + c.name, c.values));

  json man;
  man["format_version"] = kFormatVersion;
  man["model_class"] = fit.spec.model_class();
  man["spec"] = spec_json(fit.spec);
  man["control"] = control_json(fit.control);
  man["data"] = data_json(fit.data);
  man["chain_seed"] = fit.chain_seed;
  man["retained"] = fit.retained();
  man["invariant_violations"] = fit.invariant_violations;
  man["interaction_pairs"] = pair_list(fit.spec, fit.data.exposure_names);
  man["modifier_columns"] = json::array();
  for (const auto& c : fit.modifier_columns)
    man["modifier_columns"].push_back(
        {{"name", c.name}, {"kind", c.kind == ModifierKind::continuous ? "continuous" : "categorical"}, {"levels", c.levels}});
  man["blocks"] = json::array();
  for (const auto& b : blocks) man["blocks"].push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});

  const std::string text = man.dump();
  std::string out(kArchiveMagic, sizeof(kArchiveMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& b : blocks)
    for (double v : b.values) put_f64(out, v);
  return out;
}

inline json archive_manifest(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kArchiveMagic, sizeof(kArchiveMagic)) != 0)
    throw IoError("not a fit archive (bad magic)");
  std::uint32_t len = 0;
  for (int k = 0; k < 4; ++k) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + k])) << (8 * k);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw IoError("truncated archive manifest");
  json man;
  try {
    man = json::parse(bytes.substr(12, len));
  } catch (const json::exception& e) {
    throw IoError(std::string("unreadable archive manifest: ") + e.what());
  }
  const std::string version = man.value("format_version", "");
  if (version.empty()) throw IoError("archive manifest lacks format_version");
  if (version.substr(0, version.find('.')) != "1")
    throw IoError("unsupported archive format version " + version + " (reader supports 1.x)");
  return man;
}

inline PosteriorFit decode_archive(const std::string& bytes) {
  using namespace archive_detail;
  const json man = archive_manifest(bytes);
  std::uint32_t len = 0;
  for (int k = 0; k < 4; ++k) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + k])) << (8 * k);
  std::size_t pos = 12 + static_cast<std::size_t>(len);
  std::vector<Block> blocks;
  try {
    for (const auto& jb : man.at("blocks")) {
      Block b{jb.at("name").get<std::string>(), jb.at("rows").get<Eigen::Index>(), jb.at("cols").get<Eigen::Index>(), {}};
      const auto count = static_cast<std::size_t>(b.rows) * static_cast<std::size_t>(b.cols);
      if (bytes.size() < pos + 8 * count) throw IoError("truncated archive block '" + b.name + "'");
      b.values.resize(count);
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
      for (std::size_t k = 0; k < count; ++k) b.values[k] = get_f64(p + 8 * k);
      pos += 8 * count;
      blocks.push_back(std::move(b));
    }
    if (pos != bytes.size()) throw IoError("trailing bytes after archive blocks");

    auto find = [&](const std::string& name) -> const Block& {
      for (const auto& b : blocks)
        if (b.name == name) return b;
      throw IoError("archive lacks block '" + name + "'");
    };

    PosteriorFit fit;
    fit.spec = spec_from(man.at("spec"));
    fit.control = control_from(man.at("control"));
    fit.data = data_from(man.at("data"));
    fit.chain_seed = man.at("chain_seed").get<std::uint64_t>();
    fit.invariant_violations = man.at("invariant_violations").get<std::int64_t>();
    fit.gamma = to_matrix(find("gamma"));
    fit.sigma2 = to_vector(find("sigma2"));
    fit.tau = to_vector(find("tau"));
    for (const auto& name : fit.data.exposure_names) fit.theta.push_back(to_matrix(find("theta:" + name)));
    fit.selection_counts = to_matrix(find("selection_counts"));
    fit.modifier_usage = to_matrix(find("modifier_usage"));
    fit.snr = to_vector(find("snr"));
    fit.tree_log = to_matrix(find("tree_log"));
    fit.records = find("records").values;
    fit.record_offsets = find("record_offsets").values;
    for (const auto& name : fit.data.exposure_names) fit.exposures.push_back(to_matrix(find("exposure:" + name)));
    for (const auto& jc : man.at("modifier_columns")) {
      ModifierColumn c;
      c.name = jc.at("name").get<std::string>();
      c.kind = jc.at("kind").get<std::string>() == "continuous" ? ModifierKind::continuous : ModifierKind::categorical;
      c.levels = jc.at("levels").get<std::vector<std::string>>();
      c.values = find("modifier:" + c.name).values;
      fit.modifier_columns.push_back(std::move(c));
    }
    if (fit.record_offsets.size() != fit.retained() + 1) throw IoError("archive record offsets are inconsistent");
    return fit;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed archive manifest: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ExitCode::io) throw;
    throw IoError(std::string("malformed archive: ") + e.what());
  }
}

inline void write_archive(const PosteriorFit& fit, const std::string& path) {
  const std::string bytes = encode_archive(fit);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write archive '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing archive '" + path + "'");
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline PosteriorFit read_archive(const std::string& path) { return decode_archive(read_file_bytes(path)); }

}  // namespace laggard
