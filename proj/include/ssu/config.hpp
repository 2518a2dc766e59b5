/*
 * Copyright (c) 2026 The SSU Lab Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Run configuration files. INI syntax:
//
//   # comment
//   [section]
//   key = value
//
// Sections are model, data, scoring, masking, training and eval. Every key
// is optional; a missing key keeps the default shown by `ssu validate` on
// an empty file. Unknown sections and keys are errors.

#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ssu/data.hpp"
#include "ssu/eval.hpp"
#include "ssu/masking.hpp"
#include "ssu/model.hpp"
#include "ssu/trainer.hpp"

namespace ssu {

struct PretrainSettings {
  std::size_t steps = 2000;
  double lr = 2e-3;

  friend bool operator==(const PretrainSettings&, const PretrainSettings&) = default;
};

struct DataSettings {
  SyntheticLangSpec source;
  SyntheticLangSpec target = [] {
    SyntheticLangSpec s;
    s.exclusive_begin = 64;
    s.exclusive_end = 128;
    s.seed = 2;
    return s;
  }();
  std::size_t train_tokens = 2000000;
  std::size_t eval_tokens = 100000;

  friend bool operator==(const DataSettings&, const DataSettings&) = default;
};

struct ScoringSettings {
  ScoringMethod method;
  std::size_t calib_n = 64;
  std::size_t calib_seq_len = 128;
  std::uint64_t calib_seed = 0;

  friend bool operator==(const ScoringSettings&, const ScoringSettings&) = default;
};

struct MaskingSettings {
  double ratio = 0.5;
  Granularity granularity = Granularity::column;
  std::uint64_t hft_seed = 0;

  friend bool operator==(const MaskingSettings&, const MaskingSettings&) = default;
};

struct EvalConfig {
  std::size_t seq_len = 64;
  std::size_t max_tokens = 100000;
  std::size_t interval = 0;
  std::vector<double> sweep_ratios = default_sweep_ratios();

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct RunConfig {
  ModelConfig model;
  PretrainSettings pretrain;
  DataSettings data;
  ScoringSettings scoring;
  MaskingSettings masking;
  TrainConfig training;
  EvalConfig eval;

  /// Training settings with the eval section folded in.
  TrainConfig train_config() const {
    TrainConfig t = training;
    t.eval_seq_len = eval.seq_len;
    t.eval_max_tokens = eval.max_tokens;
    t.eval_interval = eval.interval;
    return t;
  }

  /// Source-only pre-training of the base model.
  TrainConfig pretrain_config() const {
    TrainConfig t = train_config();
    t.method = TrainMethod::fft;
    t.optimizer = OptimizerKind::adamw;
    t.peak_lr = pretrain.lr;
    t.total_steps = pretrain.steps;
    t.seed = mix_seed(model.init_seed, 0x707265ULL);
    t.pin_embeddings_and_head = false;
    t.verify_frozen = false;
    return t;
  }

  MaskSpec mask_spec() const {
    MaskSpec s;
    s.ratio = masking.ratio;
    s.granularity = masking.granularity;
    s.method = scoring.method;
    return s;
  }

  EvalSettings eval_settings(std::size_t workers) const { return {eval.seq_len, eval.max_tokens, workers}; }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// --seed N: every run-level seed follows N; the synthetic languages do not.
inline void apply_seed_override(RunConfig& c, std::uint64_t seed) {
  c.model.init_seed = seed;
  c.scoring.calib_seed = seed;
  if (c.scoring.method.seed) c.scoring.method.seed = seed;
  c.masking.hft_seed = seed;
  c.training.seed = seed;
}

struct ConfigParse {
  RunConfig config;
  std::vector<std::string> errors;
  std::vector<std::string> notices;

  bool ok() const { return errors.empty(); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& v) {
  N out{};
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("'" + v + "' is not a valid number");
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + v + "' is not a boolean");
}

inline std::pair<std::size_t, std::size_t> parse_range(const std::string& v) {
  const auto colon = v.find(':');
  if (colon == std::string::npos) throw ConfigError("'" + v + "' is not a range begin:end");
  return {parse_number<std::size_t>(trim(v.substr(0, colon))), parse_number<std::size_t>(trim(v.substr(colon + 1)))};
}

inline std::vector<double> parse_list(const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(trim(item)));
  return out;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

using FieldTable = std::vector<std::pair<std::string, std::vector<std::pair<std::string, Field>>>>;

#define SSU_SIZE(path) \
  Field { [](RunConfig& c, const std::string& v) { c.path = parse_number<std::size_t>(v); }, \
          [](const RunConfig& c) { return std::to_string(c.path); } }
#define SSU_U64(path) \
  Field { [](RunConfig& c, const std::string& v) { c.path = parse_number<std::uint64_t>(v); }, \
          [](const RunConfig& c) { return std::to_string(c.path); } }
#define SSU_DOUBLE(path) \
  Field { [](RunConfig& c, const std::string& v) { c.path = parse_number<double>(v); }, \
          [](const RunConfig& c) { return fmt(c.path); } }
#define SSU_BOOL(path) \
  Field { [](RunConfig& c, const std::string& v) { c.path = parse_bool(v); }, \
          [](const RunConfig& c) { return std::string(c.path ? "true" : "false"); } }
#define SSU_RANGE(lang, field) \
  Field { [](RunConfig& c, const std::string& v) { \
            std::tie(c.data.lang.field##_begin, c.data.lang.field##_end) = parse_range(v); }, \
          [](const RunConfig& c) { \
            return std::to_string(c.data.lang.field##_begin) + ":" + std::to_string(c.data.lang.field##_end); } }

inline const FieldTable& field_table() {
  static const FieldTable table = {
      {"model",
       {{"n_layers", SSU_SIZE(model.n_layers)},
        {"d_model", SSU_SIZE(model.d_model)},
        {"n_heads", SSU_SIZE(model.n_heads)},
        {"d_ff", SSU_SIZE(model.d_ff)},
        {"vocab_size", SSU_SIZE(model.vocab_size)},
        {"max_seq_len", SSU_SIZE(model.max_seq_len)},
        {"precision",
         {[](RunConfig& c, const std::string& v) { c.model.precision = parse_precision(v); },
          [](const RunConfig& c) { return std::string(to_string(c.model.precision)); }}},
        {"init_seed", SSU_U64(model.init_seed)},
        {"pretrain_steps", SSU_SIZE(pretrain.steps)},
        {"pretrain_lr", SSU_DOUBLE(pretrain.lr)}}},
      {"data",
       {{"source_seed", SSU_U64(data.source.seed)},
        {"target_seed", SSU_U64(data.target.seed)},
        {"source_exclusive", SSU_RANGE(source, exclusive)},
        {"target_exclusive", SSU_RANGE(target, exclusive)},
        {"shared",
         {[](RunConfig& c, const std::string& v) {
            std::tie(c.data.source.shared_begin, c.data.source.shared_end) = parse_range(v);
            c.data.target.shared_begin = c.data.source.shared_begin;
            c.data.target.shared_end = c.data.source.shared_end;
          },
          [](const RunConfig& c) {
            return std::to_string(c.data.source.shared_begin) + ":" + std::to_string(c.data.source.shared_end);
          }}},
        {"branching",
         {[](RunConfig& c, const std::string& v) {
            c.data.source.branching = c.data.target.branching = parse_number<std::size_t>(v);
          },
          [](const RunConfig& c) { return std::to_string(c.data.source.branching); }}},
        {"shared_mass",
         {[](RunConfig& c, const std::string& v) {
            c.data.source.shared_mass = c.data.target.shared_mass = parse_number<double>(v);
          },
          [](const RunConfig& c) { return fmt(c.data.source.shared_mass); }}},
        {"smoothing",
         {[](RunConfig& c, const std::string& v) {
            c.data.source.smoothing = c.data.target.smoothing = parse_number<double>(v);
          },
          [](const RunConfig& c) { return fmt(c.data.source.smoothing); }}},
        {"train_tokens", SSU_SIZE(data.train_tokens)},
        {"eval_tokens", SSU_SIZE(data.eval_tokens)}}},
      {"scoring",
       {{"method",
         {[](RunConfig& c, const std::string& v) { c.scoring.method.variant = parse_scoring_variant(v); },
          [](const RunConfig& c) { return std::string(to_string(c.scoring.method.variant)); }}},
        {"seed",
         {[](RunConfig& c, const std::string& v) { c.scoring.method.seed = parse_number<std::uint64_t>(v); },
          [](const RunConfig& c) {
            return c.scoring.method.seed ? std::to_string(*c.scoring.method.seed) : std::string();
          }}},
        {"calib_n", SSU_SIZE(scoring.calib_n)},
        {"calib_seq_len", SSU_SIZE(scoring.calib_seq_len)},
        {"calib_seed", SSU_U64(scoring.calib_seed)}}},
      {"masking",
       {{"ratio", SSU_DOUBLE(masking.ratio)},
        {"granularity",
         {[](RunConfig& c, const std::string& v) { c.masking.granularity = parse_granularity(v); },
          [](const RunConfig& c) { return std::string(to_string(c.masking.granularity)); }}},
        {"hft_seed", SSU_U64(masking.hft_seed)}}},
      {"training",
       {{"method",
         {[](RunConfig& c, const std::string& v) { c.training.method = parse_train_method(v); },
          [](const RunConfig& c) { return std::string(to_string(c.training.method)); }}},
        {"optimizer",
         {[](RunConfig& c, const std::string& v) { c.training.optimizer = parse_optimizer(v); },
          [](const RunConfig& c) { return std::string(to_string(c.training.optimizer)); }}},
        {"peak_lr", SSU_DOUBLE(training.peak_lr)},
        {"total_steps", SSU_SIZE(training.total_steps)},
        {"warmup_fraction", SSU_DOUBLE(training.warmup_fraction)},
        {"batch", SSU_SIZE(training.batch)},
        {"seq_len", SSU_SIZE(training.seq_len)},
        {"weight_decay", SSU_DOUBLE(training.weight_decay)},
        {"beta1", SSU_DOUBLE(training.beta1)},
        {"beta2", SSU_DOUBLE(training.beta2)},
        {"epsilon", SSU_DOUBLE(training.epsilon)},
        {"grad_clip_norm", SSU_DOUBLE(training.grad_clip_norm)},
        {"seed", SSU_U64(training.seed)},
        {"gmt_drop_ratio", SSU_DOUBLE(training.gmt_drop_ratio)},
        {"gmt_interval", SSU_SIZE(training.gmt_interval)},
        {"pin_embeddings_and_head", SSU_BOOL(training.pin_embeddings_and_head)},
        {"verify_frozen", SSU_BOOL(training.verify_frozen)}}},
      {"eval",
       {{"seq_len", SSU_SIZE(eval.seq_len)},
        {"max_tokens", SSU_SIZE(eval.max_tokens)},
        {"interval", SSU_SIZE(eval.interval)},
        {"sweep_ratios",
         {[](RunConfig& c, const std::string& v) { c.eval.sweep_ratios = parse_list(v); },
          [](const RunConfig& c) { return fmt_list(c.eval.sweep_ratios); }}}}},
  };
  return table;
}

#undef SSU_SIZE
#undef SSU_U64
#undef SSU_DOUBLE
#undef SSU_BOOL
#undef SSU_RANGE

inline const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& [s, fields] : field_table()) {
    if (s != section) continue;
    for (const auto& [k, f] : fields) {
      if (k == key) return &f;
    }
  }
  return nullptr;
}

inline bool known_section(const std::string& section) {
  for (const auto& [s, fields] : field_table()) {
    if (s == section) return true;
  }
  return false;
}

}  // namespace detail

/// Cross-field checks on an assembled config. Returns every violation.
inline std::vector<std::string> config_violations(const RunConfig& c) {
  std::vector<std::string> v;
  auto add = [&](const std::string& section, const std::vector<std::string>& items) {
    for (const auto& i : items) v.push_back("[" + section + "] " + i);
  };
  add("model", c.model.violations());
  if (c.pretrain.steps < 1) v.emplace_back("[model] pretrain_steps must be >= 1");
  if (!(c.pretrain.lr > 0)) v.emplace_back("[model] pretrain_lr must be > 0");

  for (const auto* lang : {&c.data.source, &c.data.target}) {
    const std::string name = lang == &c.data.source ? "source" : "target";
    if (lang->exclusive_begin >= lang->exclusive_end || lang->exclusive_end > c.model.vocab_size) {
      v.push_back("[data] " + name + "_exclusive must be a non-empty range within vocab_size");
    }
    if (lang->shared_begin > lang->shared_end || lang->shared_end > c.model.vocab_size) {
      v.push_back("[data] shared must be a range within vocab_size");
    }
    if (lang->exclusive_begin < lang->shared_end && lang->shared_begin < lang->exclusive_end &&
        lang->shared_begin < lang->shared_end) {
      v.push_back("[data] " + name + "_exclusive overlaps shared");
    }
  }
  if (c.data.source.branching < 1) v.emplace_back("[data] branching must be >= 1");
  if (!(c.data.source.shared_mass >= 0 && c.data.source.shared_mass <= 1)) {
    v.emplace_back("[data] shared_mass must be in [0,1]");
  }
  if (!(c.data.source.smoothing >= 0 && c.data.source.smoothing < 1)) v.emplace_back("[data] smoothing must be in [0,1)");
  if (c.data.train_tokens < 10000) v.emplace_back("[data] train_tokens must be >= 10000");
  if (c.data.eval_tokens < 10000) v.emplace_back("[data] eval_tokens must be >= 10000");
  if (c.data.train_tokens < c.training.batch * c.training.seq_len) {
    v.emplace_back("[data] train_tokens must hold at least one training batch");
  }
  if (c.data.train_tokens < c.scoring.calib_n * c.scoring.calib_seq_len) {
    v.emplace_back("[scoring] calib_n * calib_seq_len exceeds the source corpus");
  }

  if (c.scoring.method.variant == ScoringVariant::random && !c.scoring.method.seed) {
    v.emplace_back("[scoring] random scoring requires a seed");
  }
  if (c.scoring.method.variant != ScoringVariant::random && c.scoring.method.seed) {
    v.emplace_back("[scoring] seed is only used by method = random");
  }
  if (c.scoring.calib_n < 1) v.emplace_back("[scoring] calib_n must be >= 1");
  if (c.scoring.calib_seq_len < 2 || c.scoring.calib_seq_len > c.model.max_seq_len) {
    v.emplace_back("[scoring] calib_seq_len must be in [2, max_seq_len]");
  }

  if (!(c.masking.ratio >= 0.0 && c.masking.ratio <= 1.0)) v.emplace_back("[masking] ratio out of [0,1]");

  add("training", c.training.violations());
  if (c.training.seq_len > c.model.max_seq_len) v.emplace_back("[training] seq_len exceeds max_seq_len");

  if (c.eval.seq_len < 2 || c.eval.seq_len > c.model.max_seq_len) {
    v.emplace_back("[eval] seq_len must be in [2, max_seq_len]");
  }
  if (c.eval.max_tokens < c.eval.seq_len) v.emplace_back("[eval] max_tokens must cover one window");
  if (c.data.eval_tokens < c.eval.seq_len) v.emplace_back("[eval] eval_tokens must cover one window");
  if (c.eval.sweep_ratios.empty()) v.emplace_back("[eval] sweep_ratios must not be empty");
  for (const double k : c.eval.sweep_ratios) {
    if (!(k >= 0.0 && k <= 1.0)) v.emplace_back("[eval] sweep ratio " + detail::fmt(k) + " out of [0,1]");
  }
  return v;
}

/// Parses config text, collecting every syntax, key and range error.
inline ConfigParse parse_config(std::string_view text, const std::string& origin = "<config>") {
  ConfigParse out;
  std::string section;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    const auto hash = raw.find_first_of("#;");
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        out.errors.push_back(where + "malformed section header");
        continue;
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      if (!detail::known_section(section)) out.errors.push_back(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      out.errors.push_back(where + "expected key = value");
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (section.empty()) {
      out.errors.push_back(where + "key '" + key + "' outside of any section");
      continue;
    }
    if (!detail::known_section(section)) continue;
    const auto* field = detail::find_field(section, key);
    if (!field) {
      out.errors.push_back(where + "unknown key '" + key + "' in [" + section + "]");
      continue;
    }
    const std::string full = section + "." + key;
    if (seen.count(full)) {
      out.errors.push_back(where + "duplicate key '" + key + "' (first set on line " + std::to_string(seen[full]) + ")");
      continue;
    }
    seen[full] = line_no;
    try {
      field->set(out.config, value);
    } catch (const std::exception& e) {
      out.errors.push_back(where + section + "." + key + ": " + e.what());
    }
  }

  if (out.config.training.method == TrainMethod::gmt) {
    if (!seen.count("training.gmt_interval")) {
      out.notices.push_back("training.gmt_interval not set; using the default of " +
                            std::to_string(out.config.training.gmt_interval));
    }
    if (!seen.count("training.gmt_drop_ratio")) {
      out.notices.push_back("training.gmt_drop_ratio not set; using the default of " +
                            detail::fmt(out.config.training.gmt_drop_ratio));
    }
  }
  for (auto& v : config_violations(out.config)) out.errors.push_back(std::move(v));
  return out;
}

inline std::string serialize_config(const RunConfig& c) {
  std::string out;
  for (const auto& [section, fields] : detail::field_table()) {
    out += (out.empty() ? "[" : "\n[") + section + "]\n";
    for (const auto& [key, field] : fields) {
      const std::string value = field.get(c);
      if (section == "scoring" && key == "seed" && value.empty()) continue;
      out += key + " = " + value + "\n";
    }
  }
  return out;
}

inline ConfigParse parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

/// Parses and throws ConfigError listing every error.
inline RunConfig load_config(const std::filesystem::path& path) {
  ConfigParse p = parse_config_file(path);
  if (!p.ok()) {
    std::string msg = "invalid config:";
    for (const auto& e : p.errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return p.config;
}

}  // namespace ssu
