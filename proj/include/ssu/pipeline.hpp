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

// Stage-file pipeline. Each stage reads the artifacts of earlier stages
// from the run directory and writes its own:
//
//   gen-data  data/{source,target}.{train,eval}.tok, base.ckpt, pretrain.log.jsonl
//   score     scores.bin
//   mask      mask.bin, mask.report.json
//   train     adapted.ckpt, train.log.jsonl
//   eval      report.json, report.tsv
//   sweep     sweep.jsonl, sweep.tsv

#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <string>

#include "ssu/checkpoint.hpp"
#include "ssu/config.hpp"
#include "ssu/data.hpp"
#include "ssu/eval.hpp"
#include "ssu/importance.hpp"
#include "ssu/masking.hpp"
#include "ssu/trainer.hpp"

namespace ssu {

/// A required input artifact is missing.
class MissingArtifactError : public std::runtime_error {
 public:
  MissingArtifactError(const std::filesystem::path& path, const std::string& stage)
      : std::runtime_error("missing " + path.string() + ": run stage " + stage + " first") {}
};

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path source_train() const { return root / "data" / "source.train.tok"; }
  std::filesystem::path source_eval() const { return root / "data" / "source.eval.tok"; }
  std::filesystem::path target_train() const { return root / "data" / "target.train.tok"; }
  std::filesystem::path target_eval() const { return root / "data" / "target.eval.tok"; }
  std::filesystem::path base() const { return root / "base.ckpt"; }
  std::filesystem::path pretrain_log() const { return root / "pretrain.log.jsonl"; }
  std::filesystem::path scores() const { return root / "scores.bin"; }
  std::filesystem::path mask() const { return root / "mask.bin"; }
  std::filesystem::path mask_report() const { return root / "mask.report.json"; }
  std::filesystem::path adapted() const { return root / "adapted.ckpt"; }
  std::filesystem::path train_log() const { return root / "train.log.jsonl"; }
  std::filesystem::path report_json() const { return root / "report.json"; }
  std::filesystem::path report_tsv() const { return root / "report.tsv"; }
  std::filesystem::path sweep_jsonl() const { return root / "sweep.jsonl"; }
  std::filesystem::path sweep_tsv() const { return root / "sweep.tsv"; }
};

inline void require_artifact(const std::filesystem::path& path, const std::string& stage) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError(path, stage);
}

struct Corpora {
  Corpus source_train, source_eval, target_train, target_eval;
};

inline Corpora make_corpora(const RunConfig& c) {
  SyntheticLangSpec s = c.data.source, t = c.data.target;
  s.vocab_size = t.vocab_size = c.model.vocab_size;
  auto [src_train, tgt_train] = gen_synthetic_bilingual(s, t, c.data.train_tokens, 0);
  auto [src_eval, tgt_eval] = gen_synthetic_bilingual(s, t, c.data.eval_tokens, 1);
  return {std::move(src_train), std::move(src_eval), std::move(tgt_train), std::move(tgt_eval)};
}

inline Corpora load_corpora(const RunPaths& p) {
  for (const auto& f : {p.source_train(), p.source_eval(), p.target_train(), p.target_eval()}) {
    require_artifact(f, "gen-data");
  }
  return {load_corpus(p.source_train()), load_corpus(p.source_eval()), load_corpus(p.target_train()),
          load_corpus(p.target_eval())};
}

using Logger = std::function<void(const std::string&)>;

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Base model: deterministic init, then source-only pre-training.
template <typename T>
Model<T> pretrain_base(const RunConfig& c, const Corpora& data, std::size_t workers, RunLog* log_out = nullptr,
                       const Logger& log = {}) {
  Model<T> model(c.model);
  RunHooks hooks;
  hooks.workers = workers;
  if (log) {
    hooks.on_record = [&](const RunRecord& r) { log("pretrain " + to_json_line(r).dump()); };
  }
  RunLog run = cpt_run(model, data.source_train, &data.source_eval, &data.target_eval, c.pretrain_config(), nullptr,
                       hooks);
  if (log_out) *log_out = std::move(run);
  return model;
}

inline CalibrationSet calibration_for(const RunConfig& c, const Corpora& data) {
  return sample_calibration(data.source_train, c.scoring.calib_n, c.scoring.calib_seq_len, c.scoring.calib_seed);
}

template <typename T>
FreezeMask mask_for(const RunConfig& c, const Model<T>& base, const ImportanceScores* scores) {
  if (c.training.method == TrainMethod::hft) return hft_mask(base.params(), c.masking.hft_seed);
  if (!scores) throw std::invalid_argument("ssu masks need importance scores");
  MaskSpec spec = c.mask_spec();
  spec.method = scores->method;
  return build_freeze_mask(*scores, spec);
}

namespace stages {

template <typename T>
Model<T> load_base(const RunPaths& p, const RunConfig& c) {
  require_artifact(p.base(), "gen-data");
  Model<T> base = load_checkpoint<T>(p.base());
  if (!(base.config() == c.model)) {
    throw ConfigError("base.ckpt was built from a different [model] section; rerun gen-data");
  }
  return base;
}

template <typename T>
void gen_data(const RunPaths& p, const RunConfig& c, std::size_t workers, const Logger& log) {
  const Corpora data = make_corpora(c);
  save_corpus(p.source_train(), data.source_train);
  save_corpus(p.source_eval(), data.source_eval);
  save_corpus(p.target_train(), data.target_train);
  save_corpus(p.target_eval(), data.target_eval);
  log("corpora written (source/target unigram TV distance " +
      detail::fmt(unigram_tv_distance(data.source_train, data.target_train)) + ")");
  RunLog run;
  const Model<T> base = pretrain_base<T>(c, data, workers, &run, log);
  save_checkpoint(p.base(), base);
  write_run_log(p.pretrain_log(), run);
  log("wrote " + p.base().string());
}

template <typename T>
void score(const RunPaths& p, const RunConfig& c, std::size_t workers, const Logger& log) {
  const Model<T> base = load_base<T>(p, c);
  require_artifact(p.source_train(), "gen-data");
  const Corpus source = load_corpus(p.source_train());
  std::optional<CalibrationSet> cal;
  if (c.scoring.method.needs_calibration()) {
    cal = sample_calibration(source, c.scoring.calib_n, c.scoring.calib_seq_len, c.scoring.calib_seed);
  }
  const auto scores = compute_importance(base, cal ? &*cal : nullptr, c.scoring.method, workers);
  json meta{{"calib_n", c.scoring.calib_n}, {"calib_seq_len", c.scoring.calib_seq_len},
            {"calib_seed", c.scoring.calib_seed}};
  save_scores(p.scores(), scores, meta);
  log("wrote " + p.scores().string() + " (" + std::string(to_string(c.scoring.method.variant)) + ", " +
      std::to_string(scores.entries.size()) + " parameters)");
}

template <typename T>
void mask(const RunPaths& p, const RunConfig& c, const Logger& log) {
  const Model<T> base = load_base<T>(p, c);
  std::optional<ImportanceScores> scores;
  if (c.training.method != TrainMethod::hft) {
    require_artifact(p.scores(), "score");
    scores = load_scores(p.scores(), base.params());
  }
  const FreezeMask m = mask_for(c, base, scores ? &*scores : nullptr);
  save_mask(p.mask(), m);
  const auto report = mask_stats(m);
  write_text(p.mask_report(), mask_report_json(report).dump(2) + "\n");
  log("wrote " + p.mask().string() + " (" + m.strategy + ", frozen fraction " + detail::fmt(report.global_fraction) +
      ")");
}

template <typename T>
void train(const RunPaths& p, const RunConfig& c, std::size_t workers, const Logger& log) {
  Model<T> model = load_base<T>(p, c);
  const Corpora data = load_corpora(p);
  std::optional<FreezeMask> m;
  if (c.training.method == TrainMethod::ssu || c.training.method == TrainMethod::hft) {
    require_artifact(p.mask(), "mask");
    m = load_mask(p.mask(), model.params());
    const std::string want(to_string(c.training.method));
    if (m->strategy != want) {
      throw ConfigError("mask.bin holds a " + m->strategy + " mask but training.method = " + want + "; rerun mask");
    }
  }
  RunHooks hooks;
  hooks.workers = workers;
  hooks.checkpoint_path = p.adapted();
  hooks.on_record = [&](const RunRecord& r) { log("train " + to_json_line(r).dump()); };
  const RunLog run =
      cpt_run(model, data.target_train, &data.source_eval, &data.target_eval, c.train_config(), m ? &*m : nullptr, hooks);
  write_run_log(p.train_log(), run);
  log("wrote " + p.adapted().string());
}

template <typename T>
EvalReport evaluate(const RunPaths& p, const RunConfig& c, std::size_t workers, const Logger& log) {
  const Model<T> base = load_base<T>(p, c);
  require_artifact(p.adapted(), "train");
  const Model<T> adapted = load_checkpoint<T>(p.adapted());
  const Corpora data = load_corpora(p);
  const EvalReport r = retention_report(base, adapted, data.source_eval, data.target_eval, c.eval_settings(workers));
  json j = report_json(r);
  j["method"] = to_string(c.training.method);
  write_text(p.report_json(), j.dump(2) + "\n");
  write_text(p.report_tsv(), report_tsv(r));
  log("forgetting " + fmt_double(r.forgetting) + "%  acquisition " + fmt_double(r.acquisition) + "%");
  return r;
}

template <typename T>
std::vector<SweepRow> sweep(const RunPaths& p, const RunConfig& c, std::size_t workers, const Logger& log) {
  const Model<T> base = load_base<T>(p, c);
  require_artifact(p.scores(), "score");
  const auto scores = load_scores(p.scores(), base.params());
  const Corpora data = load_corpora(p);
  MaskSpec spec = c.mask_spec();
  spec.method = scores.method;
  const auto rows = ratio_sweep(
      base, {&data.target_train, &data.source_eval, &data.target_eval}, scores, spec, c.eval.sweep_ratios,
      c.train_config(), c.eval_settings(workers), [&](const SweepRow& r) {
        log("k=" + fmt_double(r.ratio) + " forgetting " + fmt_double(r.report.forgetting) + "% acquisition " +
            fmt_double(r.report.acquisition) + "%");
      });
  write_text(p.sweep_jsonl(), sweep_jsonl(rows));
  write_text(p.sweep_tsv(), sweep_tsv(rows));
  return rows;
}

}  // namespace stages
}  // namespace ssu
