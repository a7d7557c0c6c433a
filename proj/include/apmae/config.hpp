#pragma once

// Pipeline configuration: plain-text `key = value` lines under `[section]`
// headers, `#` comments. Presets (`[general] preset = desk | full`)
// supply defaults; every other key overrides one field. Unknown sections or
// keys are errors.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "apmae/binary_io.hpp"
#include "apmae/errors.hpp"
#include "apmae/gbdt.hpp"
#include "apmae/lm.hpp"
#include "apmae/mae.hpp"
#include "apmae/tasks.hpp"

namespace apmae {

struct CorpusSettings {
  std::uint64_t files = 400;
  std::uint64_t seed = 1;
  bool operator==(const CorpusSettings&) const = default;
};

struct HarvestSettings {
  std::string model_id = "mini-lm";
  double subsample_ratio = 1.0;
  bool correct_only = false;
  bool balance = false;  // the feature table is balanced later
  std::uint64_t seed = 1;
  bool operator==(const HarvestSettings&) const = default;
};

struct ClusterSettings {
  std::uint32_t out_dim = 8;
  std::uint32_t min_cluster_size = 0;  // 0: 1% of samples, at least 25
  bool operator==(const ClusterSettings&) const = default;
};

struct InterveneSettings {
  std::uint64_t pool_size = 200;
  std::uint32_t random_seeds = 3;
  std::uint32_t max_count = 800;
  std::uint64_t seed = 1;
  bool operator==(const InterveneSettings&) const = default;
};

struct PipelineConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  CorpusSettings corpus;
  MineOptions mine;
  LMConfig lm = LMConfig::desk();
  HarvestSettings harvest;
  MAEConfig mae = MAEConfig::desk();
  ClusterSettings cluster;
  GBDTConfig classify;
  InterveneSettings intervene;

  static PipelineConfig for_preset(const std::string& name) {
    PipelineConfig c;
    c.preset = name;
    if (name == "desk") {
      c.mine.context_len = 64;
      c.mine.per_kind_per_file = 8;
    } else if (name == "full") {
      c.lm = LMConfig{};
      c.mae = MAEConfig::full();
      c.mine.context_len = c.lm.context_len;
      c.harvest.subsample_ratio = 0.25;
      c.harvest.balance = true;
      c.intervene.pool_size = 1000;
    } else {
      throw ConfigError("unknown preset '" + name + "' (expected desk or full)");
    }
    return c;
  }
};

namespace detail {

template <typename T>
T parse_config_value(const std::string& v, const std::string& where) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(where + ": expected true or false, got '" + v + "'");
  } else if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
      return static_cast<T>(d);
    } catch (const std::exception&) {
      throw ConfigError(where + ": expected a number, got '" + v + "'");
    }
  } else {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(where + ": expected an integer, got '" + v + "'");
    return out;
  }
}

template <typename T>
std::string format_config_value(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
    return buf;
  } else {
    return std::to_string(v);
  }
}

struct Binding {
  std::function<void(const std::string&, const std::string&)> set;
  std::function<std::string()> get;
};

using Bindings = std::vector<std::pair<std::string, std::vector<std::pair<std::string, Binding>>>>;

template <typename T>
std::pair<std::string, Binding> bind_key(const std::string& key, T& field) {
  return {key, Binding{[&field](const std::string& v, const std::string& where) { field = parse_config_value<T>(v, where); },
                       [&field] { return format_config_value(field); }}};
}

inline Bindings bindings(PipelineConfig& c) {
  auto& m = c.mae;
  return {
      {"general", {bind_key("preset", c.preset), bind_key("seed", c.seed)}},
      {"corpus", {bind_key("files", c.corpus.files), bind_key("seed", c.corpus.seed)}},
      {"mine",
       {bind_key("context_len", c.mine.context_len), bind_key("per_kind_per_file", c.mine.per_kind_per_file),
        bind_key("noise_count", c.mine.noise_count), bind_key("seed", c.mine.seed)}},
      {"lm",
       {bind_key("layers", c.lm.layers), bind_key("heads", c.lm.heads), bind_key("width", c.lm.width), bind_key("mlp", c.lm.mlp),
        bind_key("context_len", c.lm.context_len), bind_key("max_middle", c.lm.max_middle), bind_key("batch_size", c.lm.batch_size),
        bind_key("steps", c.lm.steps), bind_key("lr", c.lm.lr), bind_key("min_lr", c.lm.min_lr),
        bind_key("weight_decay", c.lm.weight_decay), bind_key("warmup_fraction", c.lm.warmup_fraction),
        bind_key("grad_clip", c.lm.grad_clip), bind_key("holdout_fraction", c.lm.holdout_fraction), bind_key("seed", c.lm.seed)}},
      {"harvest",
       {bind_key("model_id", c.harvest.model_id), bind_key("subsample_ratio", c.harvest.subsample_ratio),
        bind_key("correct_only", c.harvest.correct_only), bind_key("balance", c.harvest.balance), bind_key("seed", c.harvest.seed)}},
      {"mae",
       {bind_key("pattern_size", m.pattern_size), bind_key("patch_size", m.patch_size), bind_key("mask_ratio", m.mask_ratio),
        bind_key("encoder_layers", m.encoder.layers), bind_key("encoder_width", m.encoder.width),
        bind_key("encoder_heads", m.encoder.heads), bind_key("encoder_mlp", m.encoder.mlp),
        bind_key("decoder_layers", m.decoder.layers), bind_key("decoder_width", m.decoder.width),
        bind_key("decoder_heads", m.decoder.heads), bind_key("decoder_mlp", m.decoder.mlp), bind_key("batch_size", m.batch_size),
        bind_key("base_lr", m.base_lr), bind_key("global_lr", m.global_lr), bind_key("weight_decay", m.weight_decay),
        bind_key("warmup_fraction", m.warmup_fraction), bind_key("min_lr", m.min_lr), bind_key("grad_clip", m.grad_clip),
        bind_key("total_batches", m.total_batches), bind_key("seed", m.seed), bind_key("scale_eps", m.scale_eps),
        bind_key("log_scaling", m.log_scaling), bind_key("correct_only", m.correct_only), bind_key("eval_seed", m.eval_seed)}},
      {"cluster", {bind_key("out_dim", c.cluster.out_dim), bind_key("min_cluster_size", c.cluster.min_cluster_size)}},
      {"classify",
       {bind_key("trees", c.classify.trees), bind_key("depth", c.classify.depth), bind_key("shrinkage", c.classify.shrinkage),
        bind_key("l2", c.classify.l2), bind_key("patience", c.classify.patience), bind_key("borders", c.classify.borders),
        bind_key("folds", c.classify.folds), bind_key("min_child_hessian", c.classify.min_child_hessian),
        bind_key("seed", c.classify.seed)}},
      {"intervene",
       {bind_key("pool_size", c.intervene.pool_size), bind_key("random_seeds", c.intervene.random_seeds),
        bind_key("max_count", c.intervene.max_count), bind_key("seed", c.intervene.seed)}},
  };
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct RawEntry {
  std::string section, key, value;
  std::size_t line;
};

inline std::vector<RawEntry> parse_config_lines(std::string_view text) {
  std::vector<RawEntry> out;
  std::string section;
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto t = trim(line);
    if (t.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
    out.push_back({section, trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)), line_no});
    if (end == text.size()) break;
  }
  return out;
}

}  // namespace detail

inline PipelineConfig parse_pipeline_config(std::string_view text) {
  const auto entries = detail::parse_config_lines(text);
  std::string preset = "desk";
  for (const auto& e : entries)
    if (e.section == "general" && e.key == "preset") preset = e.value;
  PipelineConfig cfg = PipelineConfig::for_preset(preset);
  auto b = detail::bindings(cfg);
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  for (const auto& e : entries) {
    const std::string where = "line " + std::to_string(e.line) + " [" + e.section + "] " + e.key;
    if (!seen.emplace(std::pair{e.section, e.key}, e.line).second) throw ConfigError(where + ": duplicate key");
    auto sec = std::find_if(b.begin(), b.end(), [&](const auto& s) { return s.first == e.section; });
    if (sec == b.end()) throw ConfigError("line " + std::to_string(e.line) + ": unknown section [" + e.section + "]");
    auto key = std::find_if(sec->second.begin(), sec->second.end(), [&](const auto& k) { return k.first == e.key; });
    if (key == sec->second.end()) throw ConfigError(where + ": unknown key");
    key->second.set(e.value, where);
  }
  cfg.lm.validate();
  cfg.mae.validate();
  cfg.classify.validate();
  if (cfg.mine.context_len != cfg.lm.context_len)
    throw ConfigError("[mine] context_len must equal [lm] context_len");
  if (!(cfg.harvest.subsample_ratio > 0 && cfg.harvest.subsample_ratio <= 1))
    throw ConfigError("[harvest] subsample_ratio must lie in (0,1]");
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  return parse_pipeline_config(io::read_text(path));
}

/// Fully resolved configuration in the same text format.
inline std::string render_pipeline_config(PipelineConfig cfg) {
  std::string out;
  for (const auto& [section, keys] : detail::bindings(cfg)) {
    out += "[" + section + "]\n";
    for (const auto& [k, b] : keys) out += k + " = " + b.get() + "\n";
    out += "\n";
  }
  return out;
}

}  // namespace apmae
