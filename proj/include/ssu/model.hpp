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

// Tiny decoder-only transformer: pre-norm blocks of
//   rmsnorm -> causal multi-head attention (W_Q, W_K, W_V, W_O)
//   rmsnorm -> gated feed-forward (W_gate, W_up, W_down)
// with learned token/position embeddings, a final rmsnorm and an untied
// language-modeling head. Linear layers have no biases and compute
// y = W x with W in R^{d_out x d_in}; column j of W is input feature j.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssu/ops.hpp"
#include "ssu/rng.hpp"
#include "ssu/tensor.hpp"

namespace ssu {

enum class ParamKind { embedding, head, matrix2d, vector1d };

inline std::string_view to_string(ParamKind k) {
  switch (k) {
    case ParamKind::embedding: return "embedding";
    case ParamKind::head: return "head";
    case ParamKind::matrix2d: return "matrix2d";
    case ParamKind::vector1d: return "vector1d";
  }
  return "?";
}

inline ParamKind parse_param_kind(std::string_view s) {
  if (s == "embedding") return ParamKind::embedding;
  if (s == "head") return ParamKind::head;
  if (s == "matrix2d") return ParamKind::matrix2d;
  if (s == "vector1d") return ParamKind::vector1d;
  throw std::invalid_argument("unknown parameter kind '" + std::string(s) + "'");
}

/// Embeddings and the LM head are never shielding candidates.
inline bool is_shieldable(ParamKind k) { return k == ParamKind::matrix2d || k == ParamKind::vector1d; }

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 256;
  std::size_t max_seq_len = 128;
  Precision precision = Precision::single;
  std::uint64_t init_seed = 0;

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (n_layers < 1) out.emplace_back("n_layers must be >= 1");
    if (d_model < 1) out.emplace_back("d_model must be >= 1");
    if (n_heads < 1) out.emplace_back("n_heads must be >= 1");
    if (d_ff < 1) out.emplace_back("d_ff must be >= 1");
    if (max_seq_len < 1) out.emplace_back("max_seq_len must be >= 1");
    if (vocab_size < 2) out.emplace_back("vocab_size must be >= 2");
    if (vocab_size > 65536) out.emplace_back("vocab_size must fit 16-bit token ids (<= 65536)");
    if (n_heads >= 1 && d_model % n_heads != 0) out.emplace_back("d_model must be divisible by n_heads");
    return out;
  }

  void validate() const {
    const auto v = violations();
    if (!v.empty()) throw ConfigError("invalid model config: " + v.front());
  }

  std::size_t head_dim() const { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::ordered_json& j, const ModelConfig& c) {
  j = nlohmann::ordered_json{{"n_layers", c.n_layers},       {"d_model", c.d_model},
                             {"n_heads", c.n_heads},         {"d_ff", c.d_ff},
                             {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
                             {"precision", to_string(c.precision)}, {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::ordered_json& j, ModelConfig& c) {
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.precision = parse_precision(j.at("precision").get<std::string>());
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
}

template <typename T>
struct Parameter {
  std::string name;
  ParamKind kind;
  Tensor<T> value;

  bool shieldable() const { return is_shieldable(kind); }
  // matrix2d orientation: shape is (d_out, d_in); axis 1 is the input-feature axis.
  std::size_t d_out() const { return value.dim(0); }
  std::size_t d_in() const { return value.dim(1); }
};

template <typename T>
class ParameterRegistry {
 public:
  std::size_t add(std::string name, ParamKind kind, Tensor<T> value) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    if (kind == ParamKind::vector1d ? value.rank() != 1 : value.rank() != 2) {
      throw DimensionError("parameter '" + name + "' has rank inconsistent with kind " + std::string(to_string(kind)));
    }
    entries_.push_back({std::move(name), kind, std::move(value)});
    return entries_.size() - 1;
  }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::size_t index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  }

  std::size_t size() const { return entries_.size(); }
  Parameter<T>& operator[](std::size_t i) { return entries_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p.value.numel();
    return n;
  }

  friend bool operator==(const ParameterRegistry& a, const ParameterRegistry& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.kind != y.kind || !(x.value == y.value)) return false;
    }
    return true;
  }

 private:
  std::vector<Parameter<T>> entries_;
};

/// Per-matrix2d accumulated squared inputs. `sq_sum[i]` is empty for
/// parameters that are not matrix2d; otherwise it has d_in entries.
struct ActivationStats {
  std::vector<std::vector<double>> sq_sum;
  std::size_t token_count = 0;

  bool covers(std::size_t param_index) const {
    return param_index < sq_sum.size() && !sq_sum[param_index].empty();
  }

  const std::vector<double>& at(std::size_t param_index) const {
    if (!covers(param_index)) {
      throw std::out_of_range("activation stats missing for parameter " + std::to_string(param_index));
    }
    return sq_sum[param_index];
  }

  /// Adds another accumulation of the same layout.
  void merge(const ActivationStats& other) {
    if (sq_sum.empty()) {
      *this = other;
      return;
    }
    if (other.sq_sum.size() != sq_sum.size()) throw DimensionError("activation stats layouts differ");
    for (std::size_t p = 0; p < sq_sum.size(); ++p) {
      for (std::size_t j = 0; j < sq_sum[p].size(); ++j) sq_sum[p][j] += other.sq_sum[p][j];
    }
    token_count += other.token_count;
  }
};

template <typename T>
class Model {
 public:
  struct LayerIndex {
    std::size_t attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down;
  };

  struct Output {
    Tensor<T> logits;
    std::optional<ActivationStats> stats;
  };

  struct LossAndGrads {
    double loss = 0.0;
    std::vector<Tensor<T>> grads;
  };

  static constexpr T kNormEps = T(1e-5);

  /// Deterministic initialization from config.init_seed.
  explicit Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    if (config_.precision != precision_of<T>()) {
      throw ConfigError("model precision does not match the instantiated scalar type");
    }
    build_layout();
    initialize();
  }

  /// Adopts an existing registry (e.g. loaded from a checkpoint); names,
  /// kinds and shapes must match the layout implied by `config`.
  Model(ModelConfig config, ParameterRegistry<T> registry) : config_(std::move(config)) {
    config_.validate();
    build_layout();
    if (registry.size() != params_.size()) throw DimensionError("registry does not match model layout");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& want = params_[i];
      const auto& got = registry[i];
      if (want.name != got.name || want.kind != got.kind || want.value.shape() != got.value.shape()) {
        throw DimensionError("registry entry " + std::to_string(i) + " ('" + got.name +
                             "') does not match model layout entry '" + want.name + "'");
      }
    }
    params_ = std::move(registry);
  }

  const ModelConfig& config() const { return config_; }
  ParameterRegistry<T>& params() { return params_; }
  const ParameterRegistry<T>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.numel(); }
  const std::vector<LayerIndex>& layers() const { return layers_; }
  std::size_t token_embedding_index() const { return tok_emb_; }
  std::size_t position_embedding_index() const { return pos_emb_; }
  std::size_t final_norm_index() const { return final_norm_; }
  std::size_t head_index() const { return head_; }

  /// Logits [T x vocab] for one sequence, optionally capturing per-layer input stats.
  Output forward(std::span<const Token> tokens, bool capture) const {
    Output out;
    ActivationStats stats;
    Cache cache;
    Mat<T> logits = run_forward(tokens, 1, tokens.size(), cache, capture ? &stats : nullptr);
    require_all_finite(logits, "forward logits");
    out.logits = to_tensor(logits);
    if (capture) out.stats = std::move(stats);
    return out;
  }

  /// Accumulates input statistics for `batch` sequences of `seq_len` tokens into `stats`.
  void capture_stats(std::span<const Token> tokens, std::size_t batch, std::size_t seq_len,
                     ActivationStats& stats) const {
    Cache cache;
    ActivationStats local;
    run_forward(tokens, batch, seq_len, cache, &local);
    stats.merge(local);
  }

  /// Mean next-token cross-entropy over `batch` rows of `seq_len` tokens.
  double loss(std::span<const Token> tokens, std::size_t batch, std::size_t seq_len) const {
    Cache cache;
    Mat<T> logits = run_forward(tokens, batch, seq_len, cache, nullptr);
    const auto targets = next_token_targets(tokens, batch, seq_len);
    return kernel::cross_entropy_rows<T>(logits, targets, nullptr);
  }

  /// Loss and dL/dθ for every registry entry (shapes match the registry).
  LossAndGrads loss_and_grads(std::span<const Token> tokens, std::size_t batch, std::size_t seq_len) const {
    Cache cache;
    Mat<T> logits = run_forward(tokens, batch, seq_len, cache, nullptr);
    const auto targets = next_token_targets(tokens, batch, seq_len);
    Mat<T> dlogits;
    LossAndGrads out;
    out.loss = kernel::cross_entropy_rows<T>(logits, targets, &dlogits);
    out.grads.reserve(params_.size());
    for (const auto& p : params_) out.grads.emplace_back(p.value.shape());
    run_backward(tokens, batch, seq_len, cache, dlogits, out.grads);
    return out;
  }

 private:
  struct LayerCache {
    Mat<T> x_in, a, q, k, v, probs, o, x_mid, c, gate, up, hidden;
    std::vector<T> inv_attn, inv_ffn;
  };

  struct Cache {
    std::vector<LayerCache> layers;
    Mat<T> x_final, normed;
    std::vector<T> inv_final;
  };

  static void require_all_finite(const Mat<T>& m, const char* what) {
    if (!m.allFinite()) throw NonFiniteError(std::string("non-finite values in ") + what);
  }

  void build_layout() {
    const std::size_t d = config_.d_model;
    const std::size_t f = config_.d_ff;
    params_ = ParameterRegistry<T>();
    layers_.clear();
    tok_emb_ = params_.add("embed.tokens", ParamKind::embedding, Tensor<T>({config_.vocab_size, d}));
    pos_emb_ = params_.add("embed.positions", ParamKind::embedding, Tensor<T>({config_.max_seq_len, d}));
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      LayerIndex li{};
      li.attn_norm = params_.add(p + "attn_norm", ParamKind::vector1d, Tensor<T>({d}));
      li.wq = params_.add(p + "attn.wq", ParamKind::matrix2d, Tensor<T>({d, d}));
      li.wk = params_.add(p + "attn.wk", ParamKind::matrix2d, Tensor<T>({d, d}));
      li.wv = params_.add(p + "attn.wv", ParamKind::matrix2d, Tensor<T>({d, d}));
      li.wo = params_.add(p + "attn.wo", ParamKind::matrix2d, Tensor<T>({d, d}));
      li.ffn_norm = params_.add(p + "ffn_norm", ParamKind::vector1d, Tensor<T>({d}));
      li.w_gate = params_.add(p + "ffn.w_gate", ParamKind::matrix2d, Tensor<T>({f, d}));
      li.w_up = params_.add(p + "ffn.w_up", ParamKind::matrix2d, Tensor<T>({f, d}));
      li.w_down = params_.add(p + "ffn.w_down", ParamKind::matrix2d, Tensor<T>({d, f}));
      layers_.push_back(li);
    }
    final_norm_ = params_.add("final_norm", ParamKind::vector1d, Tensor<T>({d}));
    head_ = params_.add("lm_head", ParamKind::head, Tensor<T>({config_.vocab_size, d}));
  }

  void initialize() {
    Rng rng(config_.init_seed);
    const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
    for (auto& p : params_) {
      double stddev = 0.0;
      switch (p.kind) {
        case ParamKind::vector1d: p.value.fill(T(1)); continue;
        case ParamKind::embedding: stddev = 0.02; break;
        case ParamKind::head: stddev = 1.0 / std::sqrt(static_cast<double>(p.d_in())); break;
        case ParamKind::matrix2d: {
          stddev = 1.0 / std::sqrt(static_cast<double>(p.d_in()));
          if (p.name.ends_with("attn.wo") || p.name.ends_with("ffn.w_down")) stddev *= residual_scale;
          break;
        }
      }
      for (auto& v : p.value.data()) v = static_cast<T>(stddev * rng.normal());
    }
  }

  void check_tokens(std::span<const Token> tokens, std::size_t batch, std::size_t seq_len) const {
    if (tokens.size() != batch * seq_len) throw DimensionError("token buffer does not hold batch x seq_len ids");
    if (seq_len == 0 || seq_len > config_.max_seq_len) {
      throw DimensionError("sequence length " + std::to_string(seq_len) + " outside [1, " +
                           std::to_string(config_.max_seq_len) + "]");
    }
    for (const Token t : tokens) {
      if (t >= config_.vocab_size) {
        throw DimensionError("token id " + std::to_string(t) + " >= vocab_size " + std::to_string(config_.vocab_size));
      }
    }
  }

  static std::vector<std::int64_t> next_token_targets(std::span<const Token> tokens, std::size_t batch,
                                                      std::size_t seq_len) {
    if (seq_len < 2) throw DimensionError("next-token loss needs sequences of at least 2 tokens");
    std::vector<std::int64_t> targets(batch * seq_len, -1);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t + 1 < seq_len; ++t) targets[b * seq_len + t] = tokens[b * seq_len + t + 1];
    }
    return targets;
  }

  static void accumulate_sq(const Mat<T>& x, std::vector<double>& sq) {
    if (sq.empty()) sq.assign(static_cast<std::size_t>(x.cols()), 0.0);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double v = static_cast<double>(x(r, j));
        sq[static_cast<std::size_t>(j)] += v * v;
      }
    }
  }

  ConstMatMap<T> weight(std::size_t i) const { return as_matrix(params_[i].value); }

  Mat<T> run_forward(std::span<const Token> tokens, std::size_t batch, std::size_t seq_len, Cache& cache,
                     ActivationStats* stats) const {
    check_tokens(tokens, batch, seq_len);
    const auto d = static_cast<Eigen::Index>(config_.d_model);
    const auto n_rows = static_cast<Eigen::Index>(batch * seq_len);
    const auto T_ = static_cast<Eigen::Index>(seq_len);
    const auto H = static_cast<Eigen::Index>(config_.n_heads);
    const auto hd = static_cast<Eigen::Index>(config_.head_dim());
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    if (stats) {
      stats->sq_sum.assign(params_.size(), {});
      stats->token_count = static_cast<std::size_t>(n_rows);
    }

    const auto emb = weight(tok_emb_);
    const auto pos = weight(pos_emb_);
    Mat<T> x(n_rows, d);
    for (Eigen::Index r = 0; r < n_rows; ++r) {
      x.row(r) = emb.row(tokens[static_cast<std::size_t>(r)]) + pos.row(r % T_);
    }

    cache.layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const LayerIndex& li = layers_[l];
      LayerCache& lc = cache.layers[l];
      lc.x_in = x;
      kernel::rmsnorm_rows<T>(x, params_[li.attn_norm].value.data(), kNormEps, lc.a, lc.inv_attn);
      if (stats) {
        accumulate_sq(lc.a, stats->sq_sum[li.wq]);
        stats->sq_sum[li.wk] = stats->sq_sum[li.wq];
        stats->sq_sum[li.wv] = stats->sq_sum[li.wq];
      }
      lc.q.noalias() = lc.a * weight(li.wq).transpose();
      lc.k.noalias() = lc.a * weight(li.wk).transpose();
      lc.v.noalias() = lc.a * weight(li.wv).transpose();

      lc.probs.resize(static_cast<Eigen::Index>(batch) * H * T_, T_);
      lc.o.setZero(n_rows, d);
      for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b) {
        for (Eigen::Index h = 0; h < H; ++h) {
          auto p = lc.probs.middleRows((b * H + h) * T_, T_);
          p.noalias() = lc.q.block(b * T_, h * hd, T_, hd) * lc.k.block(b * T_, h * hd, T_, hd).transpose();
          p *= scale;
          kernel::softmax_rows_prefix<T>(p, [](Eigen::Index r) { return r + 1; });
          lc.o.block(b * T_, h * hd, T_, hd).noalias() = p * lc.v.block(b * T_, h * hd, T_, hd);
        }
      }
      if (stats) accumulate_sq(lc.o, stats->sq_sum[li.wo]);
      x.noalias() += lc.o * weight(li.wo).transpose();
      lc.x_mid = x;

      kernel::rmsnorm_rows<T>(x, params_[li.ffn_norm].value.data(), kNormEps, lc.c, lc.inv_ffn);
      if (stats) {
        accumulate_sq(lc.c, stats->sq_sum[li.w_gate]);
        stats->sq_sum[li.w_up] = stats->sq_sum[li.w_gate];
      }
      lc.gate.noalias() = lc.c * weight(li.w_gate).transpose();
      lc.up.noalias() = lc.c * weight(li.w_up).transpose();
      lc.hidden = lc.gate.unaryExpr([](T v) { return kernel::silu(v); }).cwiseProduct(lc.up);
      if (stats) accumulate_sq(lc.hidden, stats->sq_sum[li.w_down]);
      x.noalias() += lc.hidden * weight(li.w_down).transpose();
    }

    cache.x_final = x;
    kernel::rmsnorm_rows<T>(x, params_[final_norm_].value.data(), kNormEps, cache.normed, cache.inv_final);
    Mat<T> logits = cache.normed * weight(head_).transpose();
    return logits;
  }

  void run_backward(std::span<const Token> tokens, std::size_t batch, std::size_t seq_len, Cache& cache,
                    const Mat<T>& dlogits, std::vector<Tensor<T>>& grads) const {
    const auto T_ = static_cast<Eigen::Index>(seq_len);
    const auto H = static_cast<Eigen::Index>(config_.n_heads);
    const auto hd = static_cast<Eigen::Index>(config_.head_dim());
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    auto g = [&](std::size_t i) { return as_matrix(grads[i]); };

    g(head_).noalias() += dlogits.transpose() * cache.normed;
    Mat<T> dnormed = dlogits * weight(head_);
    Mat<T> dx;
    kernel::rmsnorm_rows_backward<T>(cache.x_final, params_[final_norm_].value.data(), cache.inv_final, dnormed, dx,
                                     grads[final_norm_].data());

    Mat<T> dtmp, dgate, dup, dc, dproj, dq, dk, dv, da, dp;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const LayerIndex& li = layers_[l];
      LayerCache& lc = cache.layers[l];

      // Feed-forward residual branch.
      g(li.w_down).noalias() += dx.transpose() * lc.hidden;
      dtmp.noalias() = dx * weight(li.w_down);
      dgate.resize(dtmp.rows(), dtmp.cols());
      dup.resize(dtmp.rows(), dtmp.cols());
      for (Eigen::Index i = 0; i < dtmp.size(); ++i) {
        const T gv = lc.gate.data()[i];
        dup.data()[i] = dtmp.data()[i] * kernel::silu(gv);
        dgate.data()[i] = dtmp.data()[i] * lc.up.data()[i] * kernel::silu_grad(gv);
      }
      g(li.w_gate).noalias() += dgate.transpose() * lc.c;
      g(li.w_up).noalias() += dup.transpose() * lc.c;
      dc.noalias() = dgate * weight(li.w_gate);
      dc.noalias() += dup * weight(li.w_up);
      kernel::rmsnorm_rows_backward<T>(lc.x_mid, params_[li.ffn_norm].value.data(), lc.inv_ffn, dc, dproj,
                                       grads[li.ffn_norm].data());
      dx += dproj;

      // Attention residual branch.
      g(li.wo).noalias() += dx.transpose() * lc.o;
      Mat<T> dout = dx * weight(li.wo);
      dq.setZero(dx.rows(), dx.cols());
      dk.setZero(dx.rows(), dx.cols());
      dv.setZero(dx.rows(), dx.cols());
      for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b) {
        for (Eigen::Index h = 0; h < H; ++h) {
          const auto p = lc.probs.middleRows((b * H + h) * T_, T_);
          const auto dob = dout.block(b * T_, h * hd, T_, hd);
          dv.block(b * T_, h * hd, T_, hd).noalias() += p.transpose() * dob;
          dp.noalias() = dob * lc.v.block(b * T_, h * hd, T_, hd).transpose();
          kernel::softmax_rows_backward<T>(p, dp);
          dp *= scale;
          dq.block(b * T_, h * hd, T_, hd).noalias() += dp * lc.k.block(b * T_, h * hd, T_, hd);
          dk.block(b * T_, h * hd, T_, hd).noalias() += dp.transpose() * lc.q.block(b * T_, h * hd, T_, hd);
        }
      }
      g(li.wq).noalias() += dq.transpose() * lc.a;
      g(li.wk).noalias() += dk.transpose() * lc.a;
      g(li.wv).noalias() += dv.transpose() * lc.a;
      da.noalias() = dq * weight(li.wq);
      da.noalias() += dk * weight(li.wk);
      da.noalias() += dv * weight(li.wv);
      kernel::rmsnorm_rows_backward<T>(lc.x_in, params_[li.attn_norm].value.data(), lc.inv_attn, da, dproj,
                                       grads[li.attn_norm].data());
      dx += dproj;
    }

    auto demb = g(tok_emb_);
    auto dpos = g(pos_emb_);
    for (Eigen::Index r = 0; r < dx.rows(); ++r) {
      demb.row(tokens[static_cast<std::size_t>(r)]) += dx.row(r);
      dpos.row(r % T_) += dx.row(r);
    }
  }

  ModelConfig config_;
  ParameterRegistry<T> params_;
  std::vector<LayerIndex> layers_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, final_norm_ = 0, head_ = 0;
};

}  // namespace ssu
