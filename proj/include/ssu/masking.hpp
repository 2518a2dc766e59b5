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

// Static freeze masks. Bit 0 = frozen, 1 = trainable. Every shieldable
// parameter gets an entry; embeddings and the LM head never do.
//
// Budgets are per parameter: a matrix with d_in columns freezes exactly
// frozen_count(k, d_in) columns, the ones with the highest aggregated
// score S_j = sum_i s_ij; ties go to the lower index. 1-D parameters treat
// every element as its own column.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "ssu/container.hpp"
#include "ssu/importance.hpp"
#include "ssu/model.hpp"
#include "ssu/rng.hpp"

namespace ssu {

enum class Granularity { column, row, element };

inline std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::column: return "column";
    case Granularity::row: return "row";
    case Granularity::element: return "element";
  }
  return "?";
}

inline Granularity parse_granularity(std::string_view s) {
  if (s == "column") return Granularity::column;
  if (s == "row") return Granularity::row;
  if (s == "element") return Granularity::element;
  throw ConfigError("unknown granularity '" + std::string(s) + "' (expected column|row|element)");
}

struct MaskSpec {
  double ratio = 0.5;
  Granularity granularity = Granularity::column;
  ScoringMethod method;

  void validate() const {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("ratio out of [0,1]");
    method.validate();
  }

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

/// round(k * units) with exact halves rounded down.
inline std::size_t frozen_count(double k, std::size_t units) {
  const double x = k * static_cast<double>(units);
  const double whole = std::floor(x);
  const auto n = static_cast<std::size_t>(whole) + (x - whole > 0.5 ? 1 : 0);
  return std::min(n, units);
}

/// Indices of the `count` largest values; ties resolved toward the lower index.
inline std::vector<std::size_t> top_indices(std::span<const double> values, std::size_t count) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto better = [&](std::size_t a, std::size_t b) {
    return values[a] > values[b] || (values[a] == values[b] && a < b);
  };
  count = std::min(count, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), better);
  idx.resize(count);
  return idx;
}

struct ColumnScoreEntry {
  std::size_t param_index = 0;
  std::string name;
  ParamKind kind = ParamKind::matrix2d;
  Shape shape;
  std::vector<double> sums;  // S_j per input column (or per element for 1-D)
};

struct ColumnScores {
  ScoringMethod method;
  std::vector<ColumnScoreEntry> entries;
};

inline ColumnScores aggregate_columns(const ImportanceScores& scores) {
  ColumnScores out{scores.method, {}};
  for (const auto& e : scores.entries) {
    require_finite(e.score, "importance scores of " + e.name);
    ColumnScoreEntry c{e.param_index, e.name, e.kind, e.score.shape(), {}};
    if (e.score.rank() == 2) {
      c.sums.assign(e.score.dim(1), 0.0);
      for (std::size_t i = 0; i < e.score.dim(0); ++i) {
        for (std::size_t j = 0; j < e.score.dim(1); ++j) c.sums[j] += e.score.at(i, j);
      }
    } else {
      c.sums.assign(e.score.data().begin(), e.score.data().end());
    }
    out.entries.push_back(std::move(c));
  }
  return out;
}

struct MaskEntry {
  std::size_t param_index = 0;
  std::string name;
  ParamKind kind = ParamKind::matrix2d;
  Tensor<std::uint8_t> bits;
};

struct FreezeMask {
  std::string strategy = "ssu";  // ssu | hft
  MaskSpec spec;
  std::uint64_t seed = 0;  // hft only
  std::vector<MaskEntry> entries;

  const MaskEntry& at(std::string_view name) const {
    for (const auto& e : entries) {
      if (e.name == name) return e;
    }
    throw std::out_of_range("mask has no entry for '" + std::string(name) + "'");
  }

  /// Bits aligned with registry indices; null where the parameter is unmasked.
  std::vector<const Tensor<std::uint8_t>*> by_param(std::size_t registry_size) const {
    std::vector<const Tensor<std::uint8_t>*> out(registry_size, nullptr);
    for (const auto& e : entries) out.at(e.param_index) = &e.bits;
    return out;
  }
};

namespace detail {

inline MaskEntry ones_like(const ColumnScoreEntry& c) {
  return {c.param_index, c.name, c.kind, Tensor<std::uint8_t>(c.shape, std::uint8_t{1})};
}

inline MaskEntry ones_like(const ScoreEntry& e) {
  return {e.param_index, e.name, e.kind, Tensor<std::uint8_t>(e.score.shape(), std::uint8_t{1})};
}

inline void freeze_units_1d(MaskEntry& m, std::span<const double> scores, double k) {
  for (const std::size_t i : top_indices(scores, frozen_count(k, scores.size()))) m.bits[i] = 0;
}

}  // namespace detail

/// Column-granular mask from aggregated column scores.
inline FreezeMask build_mask(const ColumnScores& cols, const MaskSpec& spec) {
  spec.validate();
  if (spec.granularity != Granularity::column) throw ConfigError("build_mask expects column granularity");
  FreezeMask mask{"ssu", spec, 0, {}};
  for (const auto& c : cols.entries) {
    MaskEntry m = detail::ones_like(c);
    if (c.shape.size() == 2) {
      const std::size_t rows = c.shape[0];
      for (const std::size_t j : top_indices(c.sums, frozen_count(spec.ratio, c.shape[1]))) {
        for (std::size_t i = 0; i < rows; ++i) m.bits.at(i, j) = 0;
      }
    } else {
      detail::freeze_units_1d(m, c.sums, spec.ratio);
    }
    mask.entries.push_back(std::move(m));
  }
  return mask;
}

/// Row-granular mask: R_i = sum_j s_ij, top frozen_count(k, d_out) rows frozen.
inline FreezeMask build_row_mask(const ImportanceScores& scores, const MaskSpec& spec) {
  spec.validate();
  FreezeMask mask{"ssu", spec, 0, {}};
  mask.spec.granularity = Granularity::row;
  for (const auto& e : scores.entries) {
    require_finite(e.score, "importance scores of " + e.name);
    MaskEntry m = detail::ones_like(e);
    if (e.score.rank() == 2) {
      const std::size_t rows = e.score.dim(0), cols = e.score.dim(1);
      std::vector<double> sums(rows, 0.0);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) sums[i] += e.score.at(i, j);
      }
      for (const std::size_t i : top_indices(sums, frozen_count(spec.ratio, rows))) {
        for (std::size_t j = 0; j < cols; ++j) m.bits.at(i, j) = 0;
      }
    } else {
      detail::freeze_units_1d(m, e.score.data(), spec.ratio);
    }
    mask.entries.push_back(std::move(m));
  }
  return mask;
}

/// Element-granular mask: top frozen_count(k, numel) scores per parameter, ties by flat index.
inline FreezeMask build_element_mask(const ImportanceScores& scores, const MaskSpec& spec) {
  spec.validate();
  FreezeMask mask{"ssu", spec, 0, {}};
  mask.spec.granularity = Granularity::element;
  for (const auto& e : scores.entries) {
    require_finite(e.score, "importance scores of " + e.name);
    MaskEntry m = detail::ones_like(e);
    detail::freeze_units_1d(m, e.score.data(), spec.ratio);
    mask.entries.push_back(std::move(m));
  }
  return mask;
}

inline FreezeMask build_freeze_mask(const ImportanceScores& scores, const MaskSpec& spec) {
  switch (spec.granularity) {
    case Granularity::column: return build_mask(aggregate_columns(scores), spec);
    case Granularity::row: return build_row_mask(scores, spec);
    case Granularity::element: return build_element_mask(scores, spec);
  }
  throw ConfigError("unknown granularity");
}

/// Half fine-tuning baseline: a random half of the layers (rounded up)
/// freezes two of {W_Q, W_K, W_V, W_O} and two of {W_gate, W_up, W_down};
/// the other layers freeze one of each. Whole matrices only; norm gains
/// stay trainable.
template <typename T>
FreezeMask hft_mask(const ParameterRegistry<T>& registry, std::uint64_t seed) {
  static constexpr std::string_view kAttn[] = {"attn.wq", "attn.wk", "attn.wv", "attn.wo"};
  static constexpr std::string_view kFfn[] = {"ffn.w_gate", "ffn.w_up", "ffn.w_down"};
  std::size_t n_layers = 0;
  while (registry.find("layers." + std::to_string(n_layers) + ".attn.wq")) ++n_layers;
  if (n_layers == 0) throw std::invalid_argument("hft: registry has no layers.<l>.attn.* parameters");

  FreezeMask mask;
  mask.strategy = "hft";
  mask.spec.ratio = 0.5;
  mask.spec.granularity = Granularity::column;
  mask.seed = seed;
  for (std::size_t p = 0; p < registry.size(); ++p) {
    const auto& param = registry[p];
    if (!param.shieldable()) continue;
    mask.entries.push_back({p, param.name, param.kind, Tensor<std::uint8_t>(param.value.shape(), std::uint8_t{1})});
  }
  auto freeze_whole = [&](const std::string& name) {
    const std::size_t idx = registry.index_of(name);
    for (auto& e : mask.entries) {
      if (e.param_index == idx) e.bits.fill(0);
    }
  };

  Rng rng(mix_seed(seed, 0x686674ULL));
  std::vector<std::size_t> layers(n_layers);
  std::iota(layers.begin(), layers.end(), std::size_t{0});
  rng.shuffle(layers);
  const std::size_t heavy = (n_layers + 1) / 2;
  for (std::size_t r = 0; r < n_layers; ++r) {
    const std::size_t l = layers[r];
    const std::size_t per_group = r < heavy ? 2 : 1;
    const std::string prefix = "layers." + std::to_string(l) + ".";
    for (const auto& n : kAttn) {
      if (!registry.find(prefix + std::string(n))) throw std::invalid_argument("hft: missing " + prefix + std::string(n));
    }
    for (const auto& n : kFfn) {
      if (!registry.find(prefix + std::string(n))) throw std::invalid_argument("hft: missing " + prefix + std::string(n));
    }
    std::vector<std::size_t> attn{0, 1, 2, 3}, ffn{0, 1, 2};
    rng.shuffle(attn);
    rng.shuffle(ffn);
    for (std::size_t i = 0; i < per_group; ++i) {
      freeze_whole(prefix + std::string(kAttn[attn[i]]));
      freeze_whole(prefix + std::string(kFfn[ffn[i]]));
    }
  }
  return mask;
}

struct MaskReport {
  struct Row {
    std::string name;
    std::size_t numel = 0;
    std::size_t frozen = 0;
    std::size_t units = 0;         // columns, rows or elements, per granularity
    std::size_t frozen_units = 0;  // units whose every entry is frozen
    double fraction = 0.0;
  };
  std::string granularity;
  std::vector<Row> rows;
  std::size_t total_numel = 0;
  std::size_t total_frozen = 0;
  double global_fraction = 0.0;
};

inline MaskReport mask_stats(const FreezeMask& mask) {
  MaskReport r;
  r.granularity = std::string(to_string(mask.spec.granularity));
  for (const auto& e : mask.entries) {
    MaskReport::Row row;
    row.name = e.name;
    row.numel = e.bits.numel();
    for (const auto b : e.bits.data()) row.frozen += b == 0 ? 1 : 0;
    if (e.bits.rank() == 2 && mask.spec.granularity != Granularity::element) {
      const bool by_column = mask.spec.granularity == Granularity::column;
      const std::size_t rows = e.bits.dim(0), cols = e.bits.dim(1);
      row.units = by_column ? cols : rows;
      for (std::size_t u = 0; u < row.units; ++u) {
        bool all_frozen = true;
        const std::size_t len = by_column ? rows : cols;
        for (std::size_t v = 0; v < len && all_frozen; ++v) {
          all_frozen = (by_column ? e.bits.at(v, u) : e.bits.at(u, v)) == 0;
        }
        row.frozen_units += all_frozen ? 1 : 0;
      }
    } else {
      row.units = row.numel;
      row.frozen_units = row.frozen;
    }
    row.fraction = row.numel ? static_cast<double>(row.frozen) / static_cast<double>(row.numel) : 0.0;
    r.total_numel += row.numel;
    r.total_frozen += row.frozen;
    r.rows.push_back(std::move(row));
  }
  r.global_fraction = r.total_numel ? static_cast<double>(r.total_frozen) / static_cast<double>(r.total_numel) : 0.0;
  return r;
}

inline json mask_report_json(const MaskReport& r) {
  json j;
  j["granularity"] = r.granularity;
  j["total_numel"] = r.total_numel;
  j["total_frozen"] = r.total_frozen;
  j["global_frozen_fraction"] = r.global_fraction;
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"name", row.name},
                    {"numel", row.numel},
                    {"frozen", row.frozen},
                    {"units", row.units},
                    {"frozen_units", row.frozen_units},
                    {"frozen_fraction", row.fraction}});
  }
  j["parameters"] = std::move(rows);
  return j;
}

inline json mask_spec_json(const FreezeMask& mask) {
  json j{{"strategy", mask.strategy},
         {"ratio", mask.spec.ratio},
         {"granularity", to_string(mask.spec.granularity)},
         {"method", to_string(mask.spec.method.variant)}};
  if (mask.spec.method.seed) j["method_seed"] = *mask.spec.method.seed;
  if (mask.strategy == "hft") j["hft_seed"] = mask.seed;
  return j;
}

inline void save_mask(const std::filesystem::path& path, const FreezeMask& mask, const json& extra = {}) {
  Container c;
  c.kind = "mask";
  c.meta["spec"] = mask_spec_json(mask);
  if (extra.is_object()) {
    for (auto it = extra.begin(); it != extra.end(); ++it) c.meta[it.key()] = it.value();
  }
  for (const auto& e : mask.entries) c.blobs.push_back(Blob::from_tensor(e.name, std::string(to_string(e.kind)), e.bits));
  write_container(path, c);
}

template <typename T>
FreezeMask load_mask(const std::filesystem::path& path, const ParameterRegistry<T>& registry) {
  const Container c = read_container(path, "mask");
  const auto& spec = c.meta.at("spec");
  FreezeMask mask;
  mask.strategy = spec.at("strategy").get<std::string>();
  mask.spec.ratio = spec.at("ratio").get<double>();
  mask.spec.granularity = parse_granularity(spec.at("granularity").get<std::string>());
  mask.spec.method.variant = parse_scoring_variant(spec.at("method").get<std::string>());
  if (spec.contains("method_seed")) mask.spec.method.seed = spec.at("method_seed").get<std::uint64_t>();
  if (spec.contains("hft_seed")) mask.seed = spec.at("hft_seed").get<std::uint64_t>();
  for (const auto& b : c.blobs) {
    const std::size_t idx = registry.index_of(b.name);
    if (!registry[idx].shieldable()) throw ArtifactError("mask covers non-shieldable parameter '" + b.name + "'");
    if (registry[idx].value.shape() != b.shape) throw ArtifactError("mask shape mismatch for '" + b.name + "'");
    auto bits = b.to_tensor<std::uint8_t>();
    for (const auto v : bits.data()) {
      if (v > 1) throw ArtifactError("mask entry '" + b.name + "' holds a non-binary value");
    }
    mask.entries.push_back({idx, b.name, parse_param_kind(b.kind), std::move(bits)});
  }
  return mask;
}

}  // namespace ssu
