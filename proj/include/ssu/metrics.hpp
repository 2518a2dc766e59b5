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

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ssu/data.hpp"
#include "ssu/model.hpp"
#include "ssu/parallel.hpp"

namespace ssu {

/// Number of non-overlapping evaluation windows perplexity() will use.
inline std::size_t eval_window_count(const Corpus& corpus, std::size_t seq_len, std::size_t max_tokens) {
  if (seq_len < 2) throw std::invalid_argument("evaluation seq_len must be >= 2");
  const std::size_t available = corpus.size() / seq_len;
  if (available == 0) throw std::invalid_argument("corpus shorter than one evaluation window");
  return std::max<std::size_t>(1, std::min(available, max_tokens / seq_len));
}

/// exp(mean next-token cross-entropy) over non-overlapping windows of
/// `seq_len` tokens taken from the start of `corpus`, up to `max_tokens`.
/// Windows are evaluated in groups of `group` rows; every window has the
/// same number of scored positions, so the result equals the exp of the
/// mean of per-window losses.
template <typename T>
double perplexity(const Model<T>& model, const Corpus& corpus, std::size_t seq_len, std::size_t max_tokens,
                  std::size_t workers = 1, std::size_t group = 16) {
  const std::size_t n = eval_window_count(corpus, seq_len, max_tokens);
  std::vector<double> partial(std::max<std::size_t>(1, std::min(workers, n)), 0.0);
  for_each_chunk(n, workers, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    double acc = 0.0;
    for (std::size_t w = begin; w < end; w += group) {
      const std::size_t rows = std::min(group, end - w);
      const std::span<const Token> tokens(corpus.tokens.data() + w * seq_len, rows * seq_len);
      acc += model.loss(tokens, rows, seq_len) * static_cast<double>(rows);
    }
    partial[chunk] = acc;
  });
  double total = 0.0;
  for (const double p : partial) total += p;
  const double ppl = std::exp(total / static_cast<double>(n));
  if (!std::isfinite(ppl)) throw NonFiniteError("perplexity is not finite");
  return ppl;
}

/// 100 * (after - before) / before.
inline double relative_change(double before, double after) {
  if (before == 0.0) throw std::invalid_argument("relative change against a zero baseline");
  return 100.0 * (after - before) / before;
}

}  // namespace ssu
