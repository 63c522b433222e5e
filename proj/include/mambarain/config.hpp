#pragma once

// Run configuration: `key = value` text files with `#` comments, validated
// against a fixed schema, plus command-line overrides.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mambarain/model.hpp"
#include "mambarain/synthdata.hpp"
#include "mambarain/train.hpp"

namespace mambarain {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string checkpoint;  // empty: <out>/model.mrck
  std::string data = "data/manifest.tsv";
  std::string input;       // predict: single sequence file; empty uses the test split

  std::size_t n_train = 500;
  std::size_t n_val = 50;
  std::size_t n_test = 100;

  ModelConfig model;
  SynthConfig synth;
  TrainOptions train;

  std::vector<std::size_t> bench_lengths = {256, 512, 1024, 2048};
  std::size_t bench_repeats = 5;
  std::size_t bench_forward_repeats = 20;

  std::string checkpoint_path() const { return checkpoint.empty() ? out + "/model.mrck" : checkpoint; }

  // Keeps the shared grid geometry consistent between data and model.
  void sync() {
    synth.height = model.height;
    synth.width = model.width;
    synth.input_frames = model.input_frames;
    synth.output_frames = model.output_frames;
    model.seed = seed;
    train.seed = seed;
  }

  void validate() const {
    model.validate();
    synth.validate();
    if (train.epochs == 0 || train.batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
    if (!(train.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (!(train.lr_min_ratio >= 0 && train.lr_min_ratio <= 1)) throw ConfigError("lr_min_ratio must lie in [0, 1]");
    if (bench_lengths.empty() || bench_repeats == 0) throw ConfigError("bench needs lengths and repeats");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  if constexpr (std::is_unsigned_v<T>) {
    if (!v.empty() && v[0] == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) throw ConfigError(key + ": cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& config_schema() {
  static const std::map<std::string, Setter> schema = [] {
    std::map<std::string, Setter> s;
    auto sz = [&](const std::string& k, auto member) {
      s[k] = [k, member](RunConfig& c, const std::string& v) { member(c) = parse_number<std::size_t>(k, v); };
    };
    auto real = [&](const std::string& k, auto member) {
      s[k] = [k, member](RunConfig& c, const std::string& v) { member(c) = parse_number<double>(k, v); };
    };
    auto str = [&](const std::string& k, auto member) {
      s[k] = [member](RunConfig& c, const std::string& v) { member(c) = v; };
    };

    s["seed"] = [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); };
    str("out", [](RunConfig& c) -> std::string& { return c.out; });
    str("checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; });
    str("data", [](RunConfig& c) -> std::string& { return c.data; });
    str("input", [](RunConfig& c) -> std::string& { return c.input; });
    sz("n_train", [](RunConfig& c) -> std::size_t& { return c.n_train; });
    sz("n_val", [](RunConfig& c) -> std::size_t& { return c.n_val; });
    sz("n_test", [](RunConfig& c) -> std::size_t& { return c.n_test; });

    sz("input_frames", [](RunConfig& c) -> std::size_t& { return c.model.input_frames; });
    sz("output_frames", [](RunConfig& c) -> std::size_t& { return c.model.output_frames; });
    sz("height", [](RunConfig& c) -> std::size_t& { return c.model.height; });
    sz("width", [](RunConfig& c) -> std::size_t& { return c.model.width; });
    sz("model.base_channels", [](RunConfig& c) -> std::size_t& { return c.model.base_channels; });
    s["model.multipliers"] = [](RunConfig& c, const std::string& v) {
      c.model.multipliers = parse_size_list("model.multipliers", v);
    };
    sz("model.time_tokens", [](RunConfig& c) -> std::size_t& { return c.model.time_tokens; });
    sz("model.d_feat", [](RunConfig& c) -> std::size_t& { return c.model.d_feat; });
    sz("model.state_size", [](RunConfig& c) -> std::size_t& { return c.model.state_size; });
    sz("model.heads", [](RunConfig& c) -> std::size_t& { return c.model.heads; });
    sz("model.expand", [](RunConfig& c) -> std::size_t& { return c.model.expand; });
    sz("model.mlp_ratio", [](RunConfig& c) -> std::size_t& { return c.model.mlp_ratio; });
    s["model.zero_init_residual"] = [](RunConfig& c, const std::string& v) {
      c.model.zero_init_residual = parse_bool("model.zero_init_residual", v);
    };

    s["synth.interval_minutes"] = [](RunConfig& c, const std::string& v) {
      c.synth.interval_minutes = unsigned(parse_number<std::uint32_t>("synth.interval_minutes", v));
    };
    sz("synth.spinup_frames", [](RunConfig& c) -> std::size_t& { return c.synth.spinup_frames; });
    real("synth.speed_min", [](RunConfig& c) -> double& { return c.synth.speed_min; });
    real("synth.speed_max", [](RunConfig& c) -> double& { return c.synth.speed_max; });
    real("synth.direction_deg", [](RunConfig& c) -> double& { return c.synth.direction_deg; });
    real("synth.swirl", [](RunConfig& c) -> double& { return c.synth.swirl; });
    real("synth.diffusion", [](RunConfig& c) -> double& { return c.synth.diffusion; });
    sz("synth.initial_cells", [](RunConfig& c) -> std::size_t& { return c.synth.initial_cells; });
    real("synth.birth_rate", [](RunConfig& c) -> double& { return c.synth.birth_rate; });
    real("synth.cell_radius_min", [](RunConfig& c) -> double& { return c.synth.cell_radius_min; });
    real("synth.cell_radius_max", [](RunConfig& c) -> double& { return c.synth.cell_radius_max; });
    real("synth.cell_amplitude_min", [](RunConfig& c) -> double& { return c.synth.cell_amplitude_min; });
    real("synth.cell_amplitude_max", [](RunConfig& c) -> double& { return c.synth.cell_amplitude_max; });
    real("synth.birth_amplitude", [](RunConfig& c) -> double& { return c.synth.birth_amplitude; });
    real("synth.growth_tau", [](RunConfig& c) -> double& { return c.synth.growth_tau; });
    real("synth.decay_tau", [](RunConfig& c) -> double& { return c.synth.decay_tau; });
    real("synth.maturation_frames", [](RunConfig& c) -> double& { return c.synth.maturation_frames; });
    real("synth.orographic_gain", [](RunConfig& c) -> double& { return c.synth.orographic_gain; });
    real("synth.dem_base", [](RunConfig& c) -> double& { return c.synth.dem_base; });
    real("synth.dem_ridge_amplitude", [](RunConfig& c) -> double& { return c.synth.dem_ridge_amplitude; });
    real("synth.dem_noise_amplitude", [](RunConfig& c) -> double& { return c.synth.dem_noise_amplitude; });
    real("synth.dem_max_gradient", [](RunConfig& c) -> double& { return c.synth.dem_max_gradient; });

    sz("train.epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    sz("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    sz("train.max_steps", [](RunConfig& c) -> std::size_t& { return c.train.max_steps; });
    real("train.learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
    real("train.lr_min_ratio", [](RunConfig& c) -> double& { return c.train.lr_min_ratio; });
    real("train.beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; });
    real("train.beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; });
    real("train.eps", [](RunConfig& c) -> double& { return c.train.adam.eps; });
    s["train.augment"] = [](RunConfig& c, const std::string& v) { c.train.augment = parse_bool("train.augment", v); };
    s["train.loss"] = [](RunConfig& c, const std::string& v) { c.train.loss = parse_loss_kind(v); };
    real("train.lambda_spec", [](RunConfig& c) -> double& { return c.train.lambda_spec; });
    real("train.lambda_mse", [](RunConfig& c) -> double& { return c.train.lambda_mse; });

    s["bench.lengths"] = [](RunConfig& c, const std::string& v) { c.bench_lengths = parse_size_list("bench.lengths", v); };
    sz("bench.repeats", [](RunConfig& c) -> std::size_t& { return c.bench_repeats; });
    sz("bench.forward_repeats", [](RunConfig& c) -> std::size_t& { return c.bench_forward_repeats; });
    return s;
  }();
  return schema;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::config_schema()) keys.push_back(k);
  return keys;
}

// Applies one key. Unknown keys and unparsable values raise ConfigError.
inline void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& schema = detail::config_schema();
  auto it = schema.find(key);
  if (it == schema.end()) throw ConfigError("unknown key '" + key + "'");
  it->second(cfg, value);
}

// Parses `key = value` lines into cfg. `source` names the input in errors.
inline void parse_config_text(RunConfig& cfg, std::istream& in, const std::string& source = "config") {
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh)
      throw ConfigError(where + ": duplicate key '" + key + "' (first on line " + std::to_string(it->second) + ")");
    try {
      apply_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  parse_config_text(base, in, path);
  return base;
}

inline RunConfig parse_config_string(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  parse_config_text(base, in, "config");
  return base;
}

}  // namespace mambarain
