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

// Retention reports and the freezing-ratio sweep.
//
//   forgetting  = relative increase of source perplexity, in percent
//   acquisition = relative decrease of target perplexity, in percent

#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "ssu/masking.hpp"
#include "ssu/metrics.hpp"
#include "ssu/trainer.hpp"

namespace ssu {

struct EvalSettings {
  std::size_t seq_len = 64;
  std::size_t max_tokens = 100000;
  std::size_t workers = 1;

  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

struct EvalReport {
  double source_before = 0, source_after = 0;
  double target_before = 0, target_after = 0;
  double source_change = 0;  // percent
  double target_change = 0;  // percent
  double forgetting = 0;     // = source_change
  double acquisition = 0;    // = -target_change

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct BasePerplexity {
  double source = 0, target = 0;
};

inline EvalReport make_report(const BasePerplexity& before, double source_after, double target_after) {
  EvalReport r;
  r.source_before = before.source;
  r.target_before = before.target;
  r.source_after = source_after;
  r.target_after = target_after;
  r.source_change = relative_change(before.source, source_after);
  r.target_change = relative_change(before.target, target_after);
  r.forgetting = r.source_change;
  r.acquisition = -r.target_change;
  return r;
}

template <typename T>
BasePerplexity measure_base(const Model<T>& model, const Corpus& source_eval, const Corpus& target_eval,
                            const EvalSettings& s) {
  return {perplexity(model, source_eval, s.seq_len, s.max_tokens, s.workers),
          perplexity(model, target_eval, s.seq_len, s.max_tokens, s.workers)};
}

template <typename T>
EvalReport retention_report(const BasePerplexity& before, const Model<T>& adapted, const Corpus& source_eval,
                            const Corpus& target_eval, const EvalSettings& s) {
  return make_report(before, perplexity(adapted, source_eval, s.seq_len, s.max_tokens, s.workers),
                     perplexity(adapted, target_eval, s.seq_len, s.max_tokens, s.workers));
}

template <typename T>
EvalReport retention_report(const Model<T>& base, const Model<T>& adapted, const Corpus& source_eval,
                            const Corpus& target_eval, const EvalSettings& s) {
  if (!(base.config() == adapted.config())) throw ConfigError("base and adapted models have different configs");
  return retention_report(measure_base(base, source_eval, target_eval, s), adapted, source_eval, target_eval, s);
}

inline json report_json(const EvalReport& r) {
  return json{{"source_ppl_before", r.source_before}, {"source_ppl_after", r.source_after},
              {"source_change_pct", r.source_change}, {"target_ppl_before", r.target_before},
              {"target_ppl_after", r.target_after},   {"target_change_pct", r.target_change},
              {"forgetting_pct", r.forgetting},       {"acquisition_pct", r.acquisition}};
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string report_tsv(const EvalReport& r) {
  std::string out = "metric\tbefore\tafter\tchange_pct\n";
  out += "source_ppl\t" + fmt_double(r.source_before) + "\t" + fmt_double(r.source_after) + "\t" +
         fmt_double(r.source_change) + "\n";
  out += "target_ppl\t" + fmt_double(r.target_before) + "\t" + fmt_double(r.target_after) + "\t" +
         fmt_double(r.target_change) + "\n";
  return out;
}

inline std::vector<double> default_sweep_ratios() { return {0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875}; }

struct SweepRow {
  double ratio = 0;
  EvalReport report;
  RunLog log;
};

struct SweepInputs {
  const Corpus* target_train = nullptr;
  const Corpus* source_eval = nullptr;
  const Corpus* target_eval = nullptr;
};

/// One masked continual pre-training run per ratio, each starting from `base`
/// with the same training seed. Masks come from `scores` at
/// `spec.granularity`; k = 0 gives the all-ones mask and so reproduces full
/// fine-tuning exactly.
template <typename T>
std::vector<SweepRow> ratio_sweep(const Model<T>& base, const SweepInputs& in, const ImportanceScores& scores,
                                  MaskSpec spec, const std::vector<double>& ratios, TrainConfig train,
                                  const EvalSettings& eval, const std::function<void(const SweepRow&)>& on_row = {}) {
  if (!in.target_train || !in.source_eval || !in.target_eval) throw std::invalid_argument("sweep needs all corpora");
  if (ratios.empty()) throw ConfigError("sweep needs at least one ratio");
  for (const double k : ratios) {
    if (!(k >= 0.0 && k <= 1.0)) throw ConfigError("ratio out of [0,1]");
  }
  train.method = TrainMethod::ssu;
  const BasePerplexity before = measure_base(base, *in.source_eval, *in.target_eval, eval);
  std::vector<SweepRow> rows;
  for (const double k : ratios) {
    spec.ratio = k;
    const FreezeMask mask = build_freeze_mask(scores, spec);
    Model<T> model = base;
    SweepRow row;
    row.ratio = k;
    RunHooks hooks;
    hooks.workers = eval.workers;
    row.log = cpt_run(model, *in.target_train, nullptr, nullptr, train, &mask, hooks);
    row.report = retention_report(before, model, *in.source_eval, *in.target_eval, eval);
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string sweep_jsonl(const std::vector<SweepRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    json j{{"ratio", r.ratio}};
    const json report = report_json(r.report);
    for (auto it = report.begin(); it != report.end(); ++it) j[it.key()] = it.value();
    out += j.dump() + "\n";
  }
  return out;
}

inline std::string sweep_tsv(const std::vector<SweepRow>& rows) {
  std::string out = "ratio\tforgetting_pct\tacquisition_pct\tsource_ppl\ttarget_ppl\n";
  for (const auto& r : rows) {
    out += fmt_double(r.ratio) + "\t" + fmt_double(r.report.forgetting) + "\t" + fmt_double(r.report.acquisition) +
           "\t" + fmt_double(r.report.source_after) + "\t" + fmt_double(r.report.target_after) + "\n";
  }
  return out;
}

}  // namespace ssu
