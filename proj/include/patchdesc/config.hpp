#pragma once

// Experiment configuration: a plain-text `key = value` file with a version
// key. Unknown keys are rejected and `dump` writes every key explicitly, so a
// dumped file re-parses to an identical configuration.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "patchdesc/error.hpp"
#include "patchdesc/network.hpp"
#include "patchdesc/trainer.hpp"

namespace patchdesc {

inline constexpr std::uint32_t kConfigVersion = 1;

struct ExperimentConfig {
  std::string arch = "CNN3";
  std::size_t descriptor_dim = 128;  // FC width for the *_NN1 architectures
  TrainConfig train;
  // Dataset: a raw file or mosaic directory, split by point into train and
  // validation unless a separate validation dataset is given.
  std::string data;
  std::string validation_data;
  std::size_t validation_points = 10000;
  std::uint64_t split_seed = 1;
  // Evaluation protocol for `eval`.
  std::size_t eval_points = 10000;
  std::size_t eval_negatives = 1000;
  std::size_t eval_folds = 10;
  std::uint64_t eval_seed = 1;

  NetworkSpec network_spec() const { return registry_spec(arch, descriptor_dim); }

  void validate() const {
    (void)network_spec();
    train.validate();
    if (validation_data.empty() && validation_points == 0)
      throw std::invalid_argument("config: validation_points must be >= 1 without validation_data");
    if (eval_points == 0 || eval_folds == 0) throw std::invalid_argument("config: eval protocol needs points and folds");
  }

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename I>
I parse_integer(const std::string& key, const std::string& v) {
  I out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw FormatError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw FormatError("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, ptr);
}

struct ConfigField {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define PATCHDESC_STR_FIELD(name, member) \
  ConfigField { name, [](const ExperimentConfig& c) { return c.member; }, [](ExperimentConfig& c, const std::string& v) { c.member = v; } }
#define PATCHDESC_UINT_FIELD(name, member)                                                     \
  ConfigField {                                                                                \
    name, [](const ExperimentConfig& c) { return std::to_string(c.member); },                  \
        [](ExperimentConfig& c, const std::string& v) {                                        \
          c.member = parse_integer<std::remove_cvref_t<decltype(c.member)>>(name, v);          \
        }                                                                                      \
  }
#define PATCHDESC_DOUBLE_FIELD(name, member)                                                                    \
  ConfigField {                                                                                                 \
    name, [](const ExperimentConfig& c) { return format_double(c.member); },                                    \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(name, v); }                     \
  }
#define PATCHDESC_BOOL_FIELD(name, member)                                                                      \
  ConfigField {                                                                                                 \
    name, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); },                   \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(name, v); }                       \
  }

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      PATCHDESC_STR_FIELD("arch", arch),
      PATCHDESC_UINT_FIELD("descriptor_dim", descriptor_dim),
      PATCHDESC_DOUBLE_FIELD("lr0", train.lr0),
      PATCHDESC_UINT_FIELD("lr_decay_every", train.lr_decay_every),
      PATCHDESC_DOUBLE_FIELD("lr_decay_factor", train.lr_decay_factor),
      PATCHDESC_DOUBLE_FIELD("momentum", train.momentum),
      PATCHDESC_DOUBLE_FIELD("margin", train.loss.margin),
      PATCHDESC_UINT_FIELD("positives", train.mining.positives),
      PATCHDESC_UINT_FIELD("negatives", train.mining.negatives),
      PATCHDESC_UINT_FIELD("kept_positives", train.mining.kept_positives),
      PATCHDESC_UINT_FIELD("kept_negatives", train.mining.kept_negatives),
      PATCHDESC_UINT_FIELD("max_iterations", train.max_iterations),
      PATCHDESC_UINT_FIELD("validation_every", train.validation_every),
      PATCHDESC_UINT_FIELD("seed", train.seed),
      PATCHDESC_STR_FIELD("init_from", train.init_from),
      PATCHDESC_UINT_FIELD("val_points", train.val_points),
      PATCHDESC_UINT_FIELD("val_negatives", train.val_negatives),
      PATCHDESC_UINT_FIELD("val_folds", train.val_folds),
      PATCHDESC_UINT_FIELD("val_seed", train.eval_seed),
      PATCHDESC_UINT_FIELD("final_points", train.final_points),
      PATCHDESC_UINT_FIELD("final_negatives", train.final_negatives),
      PATCHDESC_UINT_FIELD("final_folds", train.final_folds),
      PATCHDESC_UINT_FIELD("final_candidates", train.final_candidates),
      PATCHDESC_UINT_FIELD("threads", train.threads),
      PATCHDESC_UINT_FIELD("cache_limit_bytes", train.cache_limit_bytes),
      PATCHDESC_BOOL_FIELD("wallclock_cost", train.wallclock_cost),
      PATCHDESC_STR_FIELD("data", data),
      PATCHDESC_STR_FIELD("validation_data", validation_data),
      PATCHDESC_UINT_FIELD("validation_points", validation_points),
      PATCHDESC_UINT_FIELD("split_seed", split_seed),
      PATCHDESC_UINT_FIELD("eval_points", eval_points),
      PATCHDESC_UINT_FIELD("eval_negatives", eval_negatives),
      PATCHDESC_UINT_FIELD("eval_folds", eval_folds),
      PATCHDESC_UINT_FIELD("eval_seed", eval_seed),
  };
  return fields;
}

#undef PATCHDESC_STR_FIELD
#undef PATCHDESC_UINT_FIELD
#undef PATCHDESC_DOUBLE_FIELD
#undef PATCHDESC_BOOL_FIELD

}  // namespace detail

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  for (const auto& f : detail::config_fields())
    if (f.get(a) != f.get(b)) return false;
  return true;
}

/// Every key, one per line, preceded by the version key.
inline std::string dump_config(const ExperimentConfig& cfg) {
  std::string out = "version = " + std::to_string(kConfigVersion) + "\n";
  for (const auto& f : detail::config_fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

/// Keys not present keep the values of `base`. `#` starts a comment line.
inline ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base = {}) {
  ExperimentConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_version = false;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (!seen.insert(key).second) throw FormatError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    if (key == "version") {
      if (detail::parse_integer<std::uint32_t>(key, value) != kConfigVersion)
        throw FormatError("config: unsupported version " + value);
      have_version = true;
      continue;
    }
    const auto& fields = detail::config_fields();
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.key; });
    if (it == fields.end()) throw FormatError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->set(cfg, value);
  }
  if (!have_version) throw FormatError("config: missing version key");
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, const ExperimentConfig& base = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

inline void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write config '" + path + "'");
  out << dump_config(cfg);
  if (!out) throw std::runtime_error("error writing config '" + path + "'");
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

// Desk-scale synthetic benchmark: 64 classes x 6 patches, 16 held-out classes.
inline constexpr std::size_t kDeskClasses = 64;
inline constexpr std::size_t kDeskPerClass = 6;
inline constexpr std::uint64_t kDeskDataSeed = 7;
inline constexpr std::size_t kDeskValidationPoints = 16;
inline constexpr std::size_t kDeskKept = 8;

// Mining with R_P = R_N = r on the desk-scale benchmark.
inline ExperimentConfig desk_preset(std::size_t r) {
  ExperimentConfig c;
  c.arch = "CNN3";
  c.train.mining = MiningConfig::ratios(r, r, kDeskKept);
  c.train.lr0 = 0.03;
  c.train.max_iterations = 2000;
  c.train.validation_every = 250;
  c.train.val_points = kDeskValidationPoints;
  c.train.val_negatives = 50;
  c.train.val_folds = 1;
  c.train.final_points = kDeskValidationPoints;
  c.train.final_negatives = 80;
  c.train.final_folds = 5;
  c.validation_points = kDeskValidationPoints;
  c.split_seed = 11;
  c.eval_points = kDeskValidationPoints;
  c.eval_negatives = 80;
  c.eval_folds = 5;
  return c;
}

inline std::vector<std::string> preset_names() {
  return {"default", "full-cnn3-1x2", "cnn3-mine-1x1", "cnn3-mine-2x2", "cnn3-mine-4x4", "cnn3-mine-8x8"};
}

/// "default" is the plain library default (CNN3, B_P=B_P^M=128, B_N=256,
/// B_N^M=128); "full-cnn3-1x2" adds an iteration budget; the cnn3-mine-RxR
/// presets are the desk-scale synthetic runs.
inline ExperimentConfig preset(const std::string& name) {
  if (name == "default") return ExperimentConfig{};
  if (name == "full-cnn3-1x2") {
    ExperimentConfig c;
    c.train.max_iterations = 100000;
    c.train.validation_every = 5000;
    return c;
  }
  if (name == "cnn3-mine-1x1") return desk_preset(1);
  if (name == "cnn3-mine-2x2") return desk_preset(2);
  if (name == "cnn3-mine-4x4") return desk_preset(4);
  if (name == "cnn3-mine-8x8") return desk_preset(8);
  throw std::invalid_argument("unknown preset '" + name + "'");
}

}  // namespace patchdesc
