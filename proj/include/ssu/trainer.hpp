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

// Continual pre-training with a static freeze mask (fft / ssu / hft) or
// with dynamic gradient-magnitude filtering (gmt).
//
// With a mask b, one step is
//   g     <- b .* g                       (masked gradient)
//   g     <- clip(g, grad_clip_norm)      (global norm, after masking)
//   m, v  <- Adam moments of g
//   theta <- theta - lr * b .* (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// so an entry with b = 0 keeps its exact bytes and zero moments forever.
// Embeddings and the LM head are never masked.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ssu/checkpoint.hpp"
#include "ssu/data.hpp"
#include "ssu/masking.hpp"
#include "ssu/metrics.hpp"
#include "ssu/model.hpp"

namespace ssu {

enum class TrainMethod { fft, ssu, hft, gmt };
enum class OptimizerKind { adamw, sgd };

inline std::string_view to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::fft: return "fft";
    case TrainMethod::ssu: return "ssu";
    case TrainMethod::hft: return "hft";
    case TrainMethod::gmt: return "gmt";
  }
  return "?";
}

inline TrainMethod parse_train_method(std::string_view s) {
  if (s == "fft") return TrainMethod::fft;
  if (s == "ssu") return TrainMethod::ssu;
  if (s == "hft") return TrainMethod::hft;
  if (s == "gmt") return TrainMethod::gmt;
  throw ConfigError("unknown training method '" + std::string(s) + "' (expected fft|ssu|hft|gmt)");
}

inline std::string_view to_string(OptimizerKind o) { return o == OptimizerKind::adamw ? "adamw" : "sgd"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adamw") return OptimizerKind::adamw;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected adamw|sgd)");
}

struct TrainConfig {
  TrainMethod method = TrainMethod::fft;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double peak_lr = 5e-4;
  std::size_t total_steps = 2000;
  double warmup_fraction = 0.05;
  std::size_t batch = 16;
  std::size_t seq_len = 64;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  double gmt_drop_ratio = 0.5;
  std::size_t gmt_interval = 4;
  std::size_t eval_interval = 0;  // 0: evaluate only before and after training
  std::size_t eval_seq_len = 64;
  std::size_t eval_max_tokens = 100000;
  // Diagnostic: also freeze embeddings and the LM head.
  bool pin_embeddings_and_head = false;
  // Diagnostic: after every step assert that frozen entries kept their bytes.
  bool verify_frozen = false;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(peak_lr > 0)) v.emplace_back("peak_lr must be > 0");
    if (!(warmup_fraction >= 0 && warmup_fraction < 1)) v.emplace_back("warmup_fraction must be in [0,1)");
    if (total_steps < 1) v.emplace_back("total_steps must be >= 1");
    if (batch < 1) v.emplace_back("batch must be >= 1");
    if (seq_len < 2) v.emplace_back("seq_len must be >= 2");
    if (eval_seq_len < 2) v.emplace_back("eval_seq_len must be >= 2");
    if (!(weight_decay >= 0)) v.emplace_back("weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) v.emplace_back("adam betas must be in [0,1)");
    if (!(epsilon >= 0)) v.emplace_back("epsilon must be >= 0");
    if (!(grad_clip_norm >= 0)) v.emplace_back("grad_clip_norm must be >= 0");
    if (method == TrainMethod::gmt) {
      if (!(gmt_drop_ratio >= 0 && gmt_drop_ratio < 1)) v.emplace_back("gmt_drop_ratio must be in [0,1)");
      if (gmt_interval < 1) v.emplace_back("gmt_interval must be >= 1");
      else if (batch % gmt_interval != 0) v.emplace_back("batch must be divisible by gmt_interval");
    }
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (!v.empty()) throw ConfigError("invalid training config: " + v.front());
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline std::size_t warmup_steps(const TrainConfig& cfg) {
  return static_cast<std::size_t>(std::floor(cfg.warmup_fraction * static_cast<double>(cfg.total_steps)));
}

/// Linear warmup from 0 to peak_lr, then cosine decay reaching 0 at total_steps.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps) throw std::out_of_range("step beyond total_steps");
  const std::size_t warm = warmup_steps(cfg);
  if (step < warm) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  const double progress = static_cast<double>(step - warm) / static_cast<double>(cfg.total_steps - warm);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> m, v;
  std::size_t step = 0;

  explicit OptimizerState(const ParameterRegistry<T>& registry) {
    for (const auto& p : registry) {
      m.emplace_back(p.value.shape());
      v.emplace_back(p.value.shape());
    }
  }
};

/// Zeroes all but the ceil((1 - drop_ratio) * numel) largest-|g| entries of
/// one tensor; among equal magnitudes the lower flat index is kept.
template <typename T>
void gmt_filter(Tensor<T>& grad, double drop_ratio) {
  if (!(drop_ratio >= 0 && drop_ratio < 1)) throw std::invalid_argument("gmt drop_ratio must be in [0,1)");
  const std::size_t n = grad.numel();
  const auto dropped = static_cast<std::size_t>(std::floor(drop_ratio * static_cast<double>(n) + 1e-9));
  if (dropped == 0) return;
  const std::size_t keep = n - dropped;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto better = [&](std::size_t a, std::size_t b) {
    const T x = std::abs(grad[a]), y = std::abs(grad[b]);
    return x > y || (x == y && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), better);
  for (std::size_t i = keep; i < n; ++i) grad[idx[i]] = T(0);
}

/// Applies one optimizer step in place. `grads` is consumed (masked and
/// clipped in place). A null mask means every entry is trainable.
template <typename T>
void masked_update_step(Model<T>& model, std::vector<Tensor<T>>& grads, const FreezeMask* mask,
                        OptimizerState<T>& opt, double lr, const TrainConfig& cfg) {
  auto& params = model.params();
  if (grads.size() != params.size()) throw DimensionError("one gradient per parameter required");
  const auto bits = mask ? mask->by_param(params.size()) : std::vector<const Tensor<std::uint8_t>*>(params.size());
  std::vector<bool> pinned(params.size(), false);

  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& g = grads[p];
    if (g.shape() != params[p].value.shape()) throw DimensionError("gradient shape mismatch for " + params[p].name);
    if (!g.all_finite()) {
      throw NonFiniteError("non-finite gradient in '" + params[p].name + "' at optimizer step " +
                           std::to_string(opt.step + 1));
    }
    if (cfg.pin_embeddings_and_head && !params[p].shieldable()) {
      pinned[p] = true;
      g.fill(T(0));
      continue;
    }
    if (const auto* b = bits[p]) {
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= static_cast<T>((*b)[i]);
    }
  }

  if (cfg.grad_clip_norm > 0) {
    double sq = 0.0;
    for (const auto& g : grads) {
      for (const T v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip_norm) {
      const T scale = static_cast<T>(cfg.grad_clip_norm / norm);
      for (auto& g : grads) {
        for (T& v : g.data()) v *= scale;
      }
    }
  }

  ++opt.step;
  const T lr_t = static_cast<T>(lr);
  const T wd = static_cast<T>(cfg.weight_decay);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T eps = static_cast<T>(cfg.epsilon);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step)));

  for (std::size_t p = 0; p < params.size(); ++p) {
    if (pinned[p]) continue;
    auto& theta = params[p].value;
    const auto& g = grads[p];
    const Tensor<std::uint8_t>* b = bits[p];
    auto& m = opt.m[p];
    auto& v = opt.v[p];
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      if (b && (*b)[i] == 0) continue;
      if (cfg.optimizer == OptimizerKind::sgd) {
        theta[i] -= lr_t * (g[i] + wd * theta[i]);
        continue;
      }
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / c1;
      const T v_hat = v[i] / c2;
      theta[i] -= lr_t * (m_hat / (std::sqrt(v_hat) + eps) + wd * theta[i]);
    }
  }
}

/// Training loss blew up; the model was left at its last finite state.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct RunRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<double> src_ppl;
  std::optional<double> tgt_ppl;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

inline json to_json_line(const RunRecord& r) {
  json j{{"step", r.step}, {"loss", r.loss}};
  j["src_ppl"] = r.src_ppl ? json(*r.src_ppl) : json(nullptr);
  j["tgt_ppl"] = r.tgt_ppl ? json(*r.tgt_ppl) : json(nullptr);
  return j;
}

struct RunLog {
  std::vector<RunRecord> records;
  std::string final_checkpoint;

  friend bool operator==(const RunLog&, const RunLog&) = default;
};

inline void write_run_log(const std::filesystem::path& path, const RunLog& log) {
  std::string text;
  for (const auto& r : log.records) text += to_json_line(r).dump() + "\n";
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

struct RunHooks {
  std::filesystem::path checkpoint_path;  // written at the end, or on divergence
  std::function<void(const RunRecord&)> on_record;
  std::size_t workers = 1;
};

namespace detail {

template <typename T>
std::vector<Tensor<T>> gmt_accumulated_grads(const Model<T>& model, std::span<const Token> batch,
                                             const TrainConfig& cfg, double& loss) {
  const std::size_t micro = cfg.batch / cfg.gmt_interval;
  std::vector<Tensor<T>> acc;
  loss = 0.0;
  const T inv = T(1) / static_cast<T>(cfg.gmt_interval);
  for (std::size_t k = 0; k < cfg.gmt_interval; ++k) {
    auto out = model.loss_and_grads(batch.subspan(k * micro * cfg.seq_len, micro * cfg.seq_len), micro, cfg.seq_len);
    loss += out.loss / static_cast<double>(cfg.gmt_interval);
    if (acc.empty()) {
      acc = std::move(out.grads);
      for (auto& g : acc) {
        for (T& v : g.data()) v *= inv;
      }
    } else {
      for (std::size_t p = 0; p < acc.size(); ++p) {
        for (std::size_t i = 0; i < acc[p].numel(); ++i) acc[p][i] += out.grads[p][i] * inv;
      }
    }
  }
  for (auto& g : acc) gmt_filter(g, cfg.gmt_drop_ratio);
  return acc;
}

template <typename T>
void check_frozen_unchanged(const Model<T>& before, const Model<T>& after, const FreezeMask* mask,
                            const TrainConfig& cfg) {
  const auto bits = mask ? mask->by_param(before.params().size())
                         : std::vector<const Tensor<std::uint8_t>*>(before.params().size());
  for (std::size_t p = 0; p < before.params().size(); ++p) {
    const auto& x = before.params()[p];
    const auto& y = after.params()[p].value;
    const bool pinned = cfg.pin_embeddings_and_head && !x.shieldable();
    for (std::size_t i = 0; i < y.numel(); ++i) {
      const bool frozen = pinned || (bits[p] && (*bits[p])[i] == 0);
      if (frozen && std::memcmp(&x.value[i], &y[i], sizeof(T)) != 0) {
        throw std::logic_error("frozen entry " + x.name + "[" + std::to_string(i) + "] changed");
      }
    }
  }
}

}  // namespace detail

/// Continual pre-training of `model` on `train` for cfg.total_steps steps.
/// Source/target perplexities are measured before training, every
/// eval_interval steps, and after the last step.
template <typename T>
RunLog cpt_run(Model<T>& model, const Corpus& train, const Corpus* source_eval, const Corpus* target_eval,
               const TrainConfig& cfg, const FreezeMask* mask, const RunHooks& hooks = {}) {
  cfg.validate();
  const bool static_mask = cfg.method == TrainMethod::ssu || cfg.method == TrainMethod::hft;
  if (static_mask && mask == nullptr) {
    throw std::invalid_argument(std::string(to_string(cfg.method)) + " training requires a freeze mask");
  }
  if (!static_mask && mask != nullptr) {
    throw std::invalid_argument(std::string(to_string(cfg.method)) + " training does not take a freeze mask");
  }
  if (mask) {
    for (const auto& e : mask->entries) {
      if (e.param_index >= model.params().size() || model.params()[e.param_index].value.shape() != e.bits.shape()) {
        throw DimensionError("mask entry '" + e.name + "' does not match the model");
      }
    }
  }

  auto evaluate = [&](RunRecord& r) {
    if (source_eval) r.src_ppl = perplexity(model, *source_eval, cfg.eval_seq_len, cfg.eval_max_tokens, hooks.workers);
    if (target_eval) r.tgt_ppl = perplexity(model, *target_eval, cfg.eval_seq_len, cfg.eval_max_tokens, hooks.workers);
  };
  auto emit = [&](RunLog& log, RunRecord r) {
    if (hooks.on_record) hooks.on_record(r);
    log.records.push_back(std::move(r));
  };
  auto abort_run = [&](std::size_t step, const std::string& why) {
    if (!hooks.checkpoint_path.empty()) save_checkpoint(hooks.checkpoint_path, model);
    throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + why +
                              (hooks.checkpoint_path.empty() ? "" : " (last good model saved)"),
                          step);
  };

  RunLog log;
  RunRecord initial;
  evaluate(initial);
  OptimizerState<T> opt(model.params());
  BatchStream stream(train, cfg.batch, cfg.seq_len, mix_seed(cfg.seed, 0x62617463ULL));
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    const auto batch = stream.next();
    double loss = 0.0;
    std::vector<Tensor<T>> grads;
    try {
      if (cfg.method == TrainMethod::gmt) {
        grads = detail::gmt_accumulated_grads(model, batch, cfg, loss);
      } else {
        auto out = model.loss_and_grads(batch, cfg.batch, cfg.seq_len);
        loss = out.loss;
        grads = std::move(out.grads);
      }
    } catch (const NonFiniteError& e) {
      abort_run(step, e.what());
    }
    if (!std::isfinite(loss)) abort_run(step, "non-finite loss");
    if (step == 0) {
      initial.loss = loss;
      emit(log, initial);
    }

    std::optional<Model<T>> before;
    if (cfg.verify_frozen) before.emplace(model);
    try {
      masked_update_step(model, grads, mask, opt, lr_at(step, cfg), cfg);
    } catch (const NonFiniteError& e) {
      abort_run(step, e.what());
    }
    if (before) detail::check_frozen_unchanged(*before, model, mask, cfg);

    loss_sum += loss;
    ++loss_count;
    const std::size_t done = step + 1;
    if (done == cfg.total_steps || (cfg.eval_interval > 0 && done % cfg.eval_interval == 0)) {
      RunRecord r;
      r.step = done;
      r.loss = loss_sum / static_cast<double>(loss_count);
      evaluate(r);
      emit(log, r);
      loss_sum = 0.0;
      loss_count = 0;
    }
  }

  if (!hooks.checkpoint_path.empty()) {
    save_checkpoint(hooks.checkpoint_path, model);
    log.final_checkpoint = hooks.checkpoint_path.string();
  }
  return log;
}

}  // namespace ssu
