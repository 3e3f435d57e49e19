#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "epfgnn/dataset.hpp"
#include "epfgnn/em.hpp"
#include "epfgnn/errors.hpp"
#include "epfgnn/mrf.hpp"

namespace epfgnn {

enum class SplitKind { planetoid, ratio, file };

/// Everything a CLI run needs. Text form is one `key = value` per line,
/// `#` starts a comment line.
struct RunConfig {
  std::string dataset;
  SplitKind split = SplitKind::planetoid;
  std::string split_file;
  std::size_t per_class = 20;
  std::size_t num_validation = 500;
  std::size_t num_test = 1000;
  double train_ratio = 0.6;
  double validation_ratio = 0.2;
  double test_ratio = 0.2;
  bool resample_split = true;  // draw a fresh split per seed; otherwise use the first seed's
  bool normalize_features = true;
  std::vector<std::uint64_t> seeds{0};
  std::string out = "runs";
  TrainConfig train;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline std::string_view to_string(SplitKind k) {
  switch (k) {
    case SplitKind::planetoid: return "planetoid";
    case SplitKind::ratio: return "ratio";
    case SplitKind::file: return "file";
  }
  return "?";
}

inline std::string_view to_string(CoefficientMode m) {
  switch (m) {
    case CoefficientMode::none: return "none";
    case CoefficientMode::layer: return "layer";
    case CoefficientMode::edge: return "edge";
  }
  return "?";
}

inline std::string_view to_string(RedistributionScheme s) {
  switch (s) {
    case RedistributionScheme::average: return "average";
    case RedistributionScheme::center: return "center";
    case RedistributionScheme::custom: return "custom";
  }
  return "?";
}

inline SplitKind parse_split_kind(std::string_view v) {
  if (v == "planetoid") return SplitKind::planetoid;
  if (v == "ratio") return SplitKind::ratio;
  if (v == "file") return SplitKind::file;
  throw ConfigError("split: expected planetoid, ratio or file, got '" + std::string(v) + "'");
}

inline CoefficientMode parse_coefficient_mode(std::string_view v) {
  if (v == "none") return CoefficientMode::none;
  if (v == "layer") return CoefficientMode::layer;
  if (v == "edge") return CoefficientMode::edge;
  throw ConfigError("coefficient: expected none, layer or edge, got '" + std::string(v) + "'");
}

inline RedistributionScheme parse_redistribution(std::string_view v) {
  if (v == "average") return RedistributionScheme::average;
  if (v == "center") return RedistributionScheme::center;
  throw ConfigError("redistribution: expected average or center, got '" + std::string(v) + "'");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline std::uint64_t config_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty())
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" +
                      std::string(v) + "'");
  return out;
}

inline double config_real(std::string_view key, std::string_view v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty())
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  return out;
}

inline bool config_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

inline std::vector<std::uint64_t> config_seeds(std::string_view key, std::string_view v) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto piece = trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
    out.push_back(config_uint(key, piece));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct ConfigKey {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::string emit_uint(std::uint64_t v) { return std::to_string(v); }
inline std::string emit_bool(bool v) { return v ? "true" : "false"; }

#define EPFGNN_UINT_KEY(name, field)                                                      \
  {name,                                                                                  \
   {[](RunConfig& c, std::string_view v) { c.field = config_uint(name, v); },           \
    [](const RunConfig& c) { return emit_uint(c.field); }}}
#define EPFGNN_REAL_KEY(name, field)                                                      \
  {name,                                                                                  \
   {[](RunConfig& c, std::string_view v) { c.field = config_real(name, v); },           \
    [](const RunConfig& c) { return format_real(c.field); }}}
#define EPFGNN_BOOL_KEY(name, field)                                                      \
  {name,                                                                                  \
   {[](RunConfig& c, std::string_view v) { c.field = config_bool(name, v); },           \
    [](const RunConfig& c) { return emit_bool(c.field); }}}

inline const std::map<std::string, ConfigKey, std::less<>>& config_keys() {
  static const std::map<std::string, ConfigKey, std::less<>> keys{
      {"dataset",
       {[](RunConfig& c, std::string_view v) { c.dataset = std::string(v); },
        [](const RunConfig& c) { return c.dataset; }}},
      {"split",
       {[](RunConfig& c, std::string_view v) { c.split = parse_split_kind(v); },
        [](const RunConfig& c) { return std::string(to_string(c.split)); }}},
      {"split_file",
       {[](RunConfig& c, std::string_view v) { c.split_file = std::string(v); },
        [](const RunConfig& c) { return c.split_file; }}},
      {"seeds",
       {[](RunConfig& c, std::string_view v) { c.seeds = config_seeds("seeds", v); },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.seeds.size(); ++i)
            s += (i ? "," : "") + std::to_string(c.seeds[i]);
          return s;
        }}},
      {"out",
       {[](RunConfig& c, std::string_view v) { c.out = std::string(v); },
        [](const RunConfig& c) { return c.out; }}},
      {"coefficient",
       {[](RunConfig& c, std::string_view v) { c.train.coefficient = parse_coefficient_mode(v); },
        [](const RunConfig& c) { return std::string(to_string(c.train.coefficient)); }}},
      {"redistribution",
       {[](RunConfig& c, std::string_view v) { c.train.redistribution = parse_redistribution(v); },
        [](const RunConfig& c) { return std::string(to_string(c.train.redistribution)); }}},
      EPFGNN_UINT_KEY("per_class", per_class),
      EPFGNN_UINT_KEY("num_validation", num_validation),
      EPFGNN_UINT_KEY("num_test", num_test),
      EPFGNN_REAL_KEY("train_ratio", train_ratio),
      EPFGNN_REAL_KEY("validation_ratio", validation_ratio),
      EPFGNN_REAL_KEY("test_ratio", test_ratio),
      EPFGNN_BOOL_KEY("resample_split", resample_split),
      EPFGNN_BOOL_KEY("normalize_features", normalize_features),
      EPFGNN_UINT_KEY("warm_start_epochs", train.warm_start_epochs),
      EPFGNN_UINT_KEY("em_rounds", train.em_rounds),
      EPFGNN_UINT_KEY("e_sweeps", train.e_sweeps),
      EPFGNN_REAL_KEY("e_tolerance", train.e_tolerance),
      EPFGNN_UINT_KEY("m_epochs", train.m_epochs),
      EPFGNN_UINT_KEY("predict_sweeps", train.predict_sweeps),
      EPFGNN_UINT_KEY("hidden", train.hidden),
      EPFGNN_REAL_KEY("keep_prob", train.keep_prob),
      EPFGNN_REAL_KEY("step_size", train.step_size),
      EPFGNN_REAL_KEY("weight_decay", train.weight_decay),
      EPFGNN_REAL_KEY("pairwise_step_size", train.pairwise_step_size),
      EPFGNN_REAL_KEY("alpha_init", train.alpha_init),
      EPFGNN_BOOL_KEY("freeze_pairwise", train.freeze_pairwise),
      EPFGNN_UINT_KEY("patience", train.patience),
  };
  return keys;
}

#undef EPFGNN_UINT_KEY
#undef EPFGNN_REAL_KEY
#undef EPFGNN_BOOL_KEY

}  // namespace detail

/// Applies one override; unknown keys are rejected.
inline void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto& keys = detail::config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second.set(cfg, detail::trim(value));
}

inline RunConfig parse_run_config(std::istream& in, RunConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      set_config_value(cfg, detail::trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path, RunConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  return parse_run_config(in, std::move(cfg));
}

/// Writes every key in sorted order.
inline void write_run_config(std::ostream& out, const RunConfig& cfg) {
  for (const auto& [key, entry] : detail::config_keys()) out << key << " = " << entry.get(cfg) << '\n';
}

/// Checks that do not need the dataset.
inline void validate_run_config(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("dataset: path is required");
  if (cfg.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (cfg.split == SplitKind::file && cfg.split_file.empty())
    throw ConfigError("split_file: required when split = file");
  if (cfg.split == SplitKind::planetoid && cfg.per_class == 0)
    throw ConfigError("per_class: must be positive");
  if (cfg.split == SplitKind::ratio) {
    for (double f : {cfg.train_ratio, cfg.validation_ratio, cfg.test_ratio})
      if (!(f >= 0 && f <= 1)) throw ConfigError("split ratios must lie in [0, 1]");
    if (cfg.train_ratio + cfg.validation_ratio + cfg.test_ratio > 1 + 1e-9)
      throw ConfigError("split ratios sum above 1");
  }
  cfg.train.validate();
}

}  // namespace epfgnn
