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

// Per-weight importance scores computed from the model and source-language
// calibration windows. Only shieldable parameters (matrix2d, vector1d) are
// scored; embeddings and the LM head are never candidates.
//
//   wanda      s_ij = |θ_ij| * ||X_j||_2
//   magnitude  s_ij = |θ_ij|
//   random     s_ij ~ U[0, 1), seeded
//   sparsegpt  s_ij = E[x_j^2]
//   fim        s_ij = E_window[(dL/dθ_ij)^2]
//
// Activation-based scorers have no input activation for 1-D gains, so
// those fall back to magnitude.

#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ssu/container.hpp"
#include "ssu/data.hpp"
#include "ssu/model.hpp"
#include "ssu/parallel.hpp"

namespace ssu {

enum class ScoringVariant { wanda, magnitude, random, sparsegpt, fim };

inline std::string_view to_string(ScoringVariant v) {
  switch (v) {
    case ScoringVariant::wanda: return "wanda";
    case ScoringVariant::magnitude: return "magnitude";
    case ScoringVariant::random: return "random";
    case ScoringVariant::sparsegpt: return "sparsegpt";
    case ScoringVariant::fim: return "fim";
  }
  return "?";
}

inline ScoringVariant parse_scoring_variant(std::string_view s) {
  if (s == "wanda") return ScoringVariant::wanda;
  if (s == "magnitude" || s == "mag") return ScoringVariant::magnitude;
  if (s == "random" || s == "rand") return ScoringVariant::random;
  if (s == "sparsegpt") return ScoringVariant::sparsegpt;
  if (s == "fim") return ScoringVariant::fim;
  throw ConfigError("unknown scoring method '" + std::string(s) + "' (expected wanda|magnitude|random|sparsegpt|fim)");
}

struct ScoringMethod {
  ScoringVariant variant = ScoringVariant::wanda;
  std::optional<std::uint64_t> seed;  // required iff variant == random

  void validate() const {
    if (variant == ScoringVariant::random && !seed) throw ConfigError("random scoring requires a seed");
    if (variant != ScoringVariant::random && seed) throw ConfigError("only random scoring takes a seed");
  }

  bool needs_calibration() const {
    return variant == ScoringVariant::wanda || variant == ScoringVariant::sparsegpt || variant == ScoringVariant::fim;
  }

  friend bool operator==(const ScoringMethod&, const ScoringMethod&) = default;
};

struct ScoreEntry {
  std::size_t param_index = 0;
  std::string name;
  ParamKind kind = ParamKind::matrix2d;
  Tensor<double> score;
};

struct ImportanceScores {
  ScoringMethod method;
  std::vector<ScoreEntry> entries;

  const ScoreEntry& at(std::string_view name) const {
    for (const auto& e : entries) {
      if (e.name == name) return e;
    }
    throw std::out_of_range("no scores for parameter '" + std::string(name) + "'");
  }
};

/// Forward passes with capture over every calibration window. The reduction
/// runs in window order within a chunk and chunk order across workers.
template <typename T>
ActivationStats capture_activation_stats(const Model<T>& model, const CalibrationSet& calib, std::size_t workers = 1) {
  if (calib.n_samples() == 0) throw std::invalid_argument("calibration set is empty");
  std::vector<ActivationStats> partial(std::max<std::size_t>(1, std::min(workers, calib.n_samples())));
  for_each_chunk(calib.n_samples(), workers, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) model.capture_stats(calib.windows[i], 1, calib.seq_len, partial[chunk]);
  });
  ActivationStats total;
  for (const auto& p : partial) total.merge(p);
  return total;
}

template <typename T>
Tensor<double> score_magnitude(const Tensor<T>& theta) {
  Tensor<double> s(theta.shape());
  for (std::size_t i = 0; i < theta.numel(); ++i) s[i] = std::abs(static_cast<double>(theta[i]));
  return s;
}

/// |θ_ij| * sqrt(sq_sum_j), with sq_sum the accumulated squared inputs of column j.
template <typename T>
Tensor<double> score_wanda(const Tensor<T>& theta, std::span<const double> sq_sum) {
  require_rank(theta, 2, "score_wanda");
  if (sq_sum.size() != theta.dim(1)) throw DimensionError("wanda: activation stats do not cover every input column");
  Tensor<double> s(theta.shape());
  const std::size_t rows = theta.dim(0), cols = theta.dim(1);
  for (std::size_t j = 0; j < cols; ++j) {
    const double norm = std::sqrt(sq_sum[j]);
    for (std::size_t i = 0; i < rows; ++i) s.at(i, j) = std::abs(static_cast<double>(theta.at(i, j))) * norm;
  }
  return s;
}

/// E[x_j^2] broadcast over every row of column j.
template <typename T>
Tensor<double> score_sparsegpt(const Tensor<T>& theta, std::span<const double> sq_sum, std::size_t token_count) {
  require_rank(theta, 2, "score_sparsegpt");
  if (sq_sum.size() != theta.dim(1)) throw DimensionError("sparsegpt: activation stats do not cover every input column");
  if (token_count == 0) throw std::invalid_argument("sparsegpt: token_count must be >= 1");
  Tensor<double> s(theta.shape());
  for (std::size_t i = 0; i < theta.dim(0); ++i) {
    for (std::size_t j = 0; j < theta.dim(1); ++j) s.at(i, j) = sq_sum[j] / static_cast<double>(token_count);
  }
  return s;
}

inline Tensor<double> score_random(const Shape& shape, std::uint64_t seed) {
  Tensor<double> s(shape);
  Rng rng(seed);
  for (auto& v : s.data()) v = rng.uniform();
  return s;
}

/// Mean over calibration windows of the squared per-window gradient, for
/// every registry entry (including embeddings and head).
template <typename T>
std::vector<Tensor<double>> fisher_diagonal(const Model<T>& model, const CalibrationSet& calib, std::size_t workers = 1) {
  if (calib.n_samples() == 0) throw std::invalid_argument("calibration set is empty");
  const std::size_t n_chunks = std::max<std::size_t>(1, std::min(workers, calib.n_samples()));
  std::vector<std::vector<Tensor<double>>> partial(n_chunks);
  for_each_chunk(calib.n_samples(), workers, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    auto& acc = partial[chunk];
    for (const auto& p : model.params()) acc.emplace_back(p.value.shape());
    for (std::size_t w = begin; w < end; ++w) {
      const auto out = model.loss_and_grads(calib.windows[w], 1, calib.seq_len);
      for (std::size_t p = 0; p < acc.size(); ++p) {
        const auto& g = out.grads[p];
        if (!g.all_finite()) throw NonFiniteError("fim: non-finite gradient for " + model.params()[p].name);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double v = static_cast<double>(g[i]);
          acc[p][i] += v * v;
        }
      }
    }
  });
  std::vector<Tensor<double>> total = std::move(partial[0]);
  for (std::size_t c = 1; c < n_chunks; ++c) {
    for (std::size_t p = 0; p < total.size(); ++p) {
      for (std::size_t i = 0; i < total[p].numel(); ++i) total[p][i] += partial[c][p][i];
    }
  }
  const double inv = 1.0 / static_cast<double>(calib.n_samples());
  for (auto& t : total) {
    for (auto& v : t.data()) v *= inv;
  }
  return total;
}

template <typename T>
ImportanceScores score_fim(const Model<T>& model, const CalibrationSet& calib, std::size_t workers = 1) {
  auto fisher = fisher_diagonal(model, calib, workers);
  ImportanceScores out{{ScoringVariant::fim, std::nullopt}, {}};
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    const auto& param = model.params()[p];
    if (!param.shieldable()) continue;
    out.entries.push_back({p, param.name, param.kind, std::move(fisher[p])});
  }
  return out;
}

/// Scores every shieldable parameter with `method`. `calib` is required for
/// the calibration-driven variants and ignored otherwise.
template <typename T>
ImportanceScores compute_importance(const Model<T>& model, const CalibrationSet* calib, const ScoringMethod& method,
                                    std::size_t workers = 1) {
  method.validate();
  if (method.needs_calibration() && (calib == nullptr || calib->n_samples() == 0)) {
    throw std::invalid_argument(std::string(to_string(method.variant)) + " scoring needs calibration data");
  }
  if (method.variant == ScoringVariant::fim) return score_fim(model, *calib, workers);

  std::optional<ActivationStats> stats;
  if (method.needs_calibration()) stats = capture_activation_stats(model, *calib, workers);

  ImportanceScores out{method, {}};
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    const auto& param = model.params()[p];
    if (!param.shieldable()) continue;
    Tensor<double> s;
    if (method.variant == ScoringVariant::random) {
      s = score_random(param.value.shape(), mix_seed(*method.seed, p));
    } else if (param.kind == ParamKind::vector1d || method.variant == ScoringVariant::magnitude) {
      s = score_magnitude(param.value);
    } else if (!stats->covers(p)) {
      throw std::out_of_range("activation stats missing for '" + param.name + "'");
    } else if (method.variant == ScoringVariant::wanda) {
      s = score_wanda(param.value, stats->at(p));
    } else {
      s = score_sparsegpt(param.value, stats->at(p), stats->token_count);
    }
    out.entries.push_back({p, param.name, param.kind, std::move(s)});
  }
  return out;
}

inline void save_scores(const std::filesystem::path& path, const ImportanceScores& scores, const json& extra = {}) {
  Container c;
  c.kind = "scores";
  c.meta["method"] = to_string(scores.method.variant);
  if (scores.method.seed) c.meta["seed"] = *scores.method.seed;
  if (extra.is_object()) {
    for (auto it = extra.begin(); it != extra.end(); ++it) c.meta[it.key()] = it.value();
  }
  for (const auto& e : scores.entries) c.blobs.push_back(Blob::from_tensor(e.name, std::string(to_string(e.kind)), e.score));
  write_container(path, c);
}

/// Loads a score file; parameter indices are resolved against `registry`.
template <typename T>
ImportanceScores load_scores(const std::filesystem::path& path, const ParameterRegistry<T>& registry,
                             json* meta_out = nullptr) {
  const Container c = read_container(path, "scores");
  ImportanceScores s;
  s.method.variant = parse_scoring_variant(c.meta.at("method").get<std::string>());
  if (c.meta.contains("seed")) s.method.seed = c.meta.at("seed").get<std::uint64_t>();
  for (const auto& b : c.blobs) {
    const std::size_t idx = registry.index_of(b.name);
    if (registry[idx].value.shape() != b.shape) throw ArtifactError("score shape mismatch for '" + b.name + "'");
    s.entries.push_back({idx, b.name, parse_param_kind(b.kind), b.to_tensor<double>()});
  }
  if (meta_out) *meta_out = c.meta;
  return s;
}

}  // namespace ssu
