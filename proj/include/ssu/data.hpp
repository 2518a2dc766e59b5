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

// Byte-level corpora, synthetic order-2 Markov "languages", calibration
// sampling and the training batch stream.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssu/container.hpp"
#include "ssu/ops.hpp"
#include "ssu/rng.hpp"

namespace ssu {

enum class Language { source, target };
enum class Provenance { synthetic, file };

inline std::string_view to_string(Language l) { return l == Language::source ? "source" : "target"; }
inline std::string_view to_string(Provenance p) { return p == Provenance::synthetic ? "synthetic" : "file"; }

inline Language parse_language(std::string_view s) {
  if (s == "source") return Language::source;
  if (s == "target") return Language::target;
  throw ArtifactError("unknown language tag '" + std::string(s) + "'");
}

/// The generated language pair is too similar to produce measurable interference.
class DistinguishabilityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A synthetic language specification that cannot produce a usable stream.
class DegenerateSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Corpus {
  std::vector<Token> tokens;
  Language language = Language::source;
  Provenance provenance = Provenance::synthetic;
  std::size_t vocab_size = 256;
  std::uint64_t seed = 0;

  std::size_t size() const { return tokens.size(); }
};

/// Order-2 Markov language over the half-open symbol ranges
/// [exclusive_begin, exclusive_end) and [shared_begin, shared_end).
/// Every context (a, b) gets `branching` preferred successors (drawn from
/// the shared range with probability `shared_mass`), weighted by
/// exponential draws; `smoothing` mass is spread uniformly over the
/// whole active alphabet.
struct SyntheticLangSpec {
  std::size_t vocab_size = 256;
  std::size_t exclusive_begin = 0;
  std::size_t exclusive_end = 64;
  std::size_t shared_begin = 128;
  std::size_t shared_end = 160;
  std::size_t branching = 3;
  double shared_mass = 0.25;
  double smoothing = 0.02;
  std::uint64_t seed = 1;

  friend bool operator==(const SyntheticLangSpec&, const SyntheticLangSpec&) = default;
};

class MarkovTable {
 public:
  explicit MarkovTable(const SyntheticLangSpec& spec) {
    validate(spec);
    for (std::size_t s = spec.exclusive_begin; s < spec.exclusive_end; ++s) alphabet_.push_back(static_cast<Token>(s));
    for (std::size_t s = spec.shared_begin; s < spec.shared_end; ++s) alphabet_.push_back(static_cast<Token>(s));
    const std::size_t a = alphabet_.size();
    const std::size_t n_excl = spec.exclusive_end - spec.exclusive_begin;
    const std::size_t n_shared = spec.shared_end - spec.shared_begin;
    slot_.assign(spec.vocab_size, kAbsent);
    for (std::size_t i = 0; i < a; ++i) slot_[alphabet_[i]] = i;

    probs_.assign(a * a * a, spec.smoothing / static_cast<double>(a));
    Rng rng(mix_seed(spec.seed, 0x7461626c65ULL));
    std::vector<double> weights(spec.branching);
    std::vector<std::size_t> picks(spec.branching);
    for (std::size_t ctx = 0; ctx < a * a; ++ctx) {
      double total = 0;
      for (std::size_t k = 0; k < spec.branching; ++k) {
        const bool shared = n_shared > 0 && (n_excl == 0 || rng.uniform() < spec.shared_mass);
        picks[k] = shared ? n_excl + rng.below(n_shared) : rng.below(n_excl);
        weights[k] = rng.exponential();
        total += weights[k];
      }
      double* row = &probs_[ctx * a];
      for (std::size_t k = 0; k < spec.branching; ++k) row[picks[k]] += (1.0 - spec.smoothing) * weights[k] / total;
    }
    check_rows();
    check_absorbing();
  }

  const std::vector<Token>& alphabet() const { return alphabet_; }

  /// P(next | prev2, prev1) over alphabet indices.
  std::span<const double> row(std::size_t prev2, std::size_t prev1) const {
    const std::size_t a = alphabet_.size();
    return {probs_.data() + (prev2 * a + prev1) * a, a};
  }

  std::size_t index_of(Token t) const {
    if (t >= slot_.size() || slot_[t] == kAbsent) throw std::out_of_range("symbol not in alphabet");
    return slot_[t];
  }

  /// Draws `n` tokens; the initial context is seeded from `seed`.
  std::vector<Token> sample(std::size_t n, std::uint64_t seed) const {
    const std::size_t a = alphabet_.size();
    std::vector<double> cdf(probs_.size());
    for (std::size_t ctx = 0; ctx < a * a; ++ctx) {
      double acc = 0;
      for (std::size_t c = 0; c < a; ++c) {
        acc += probs_[ctx * a + c];
        cdf[ctx * a + c] = acc;
      }
    }
    Rng rng(seed);
    std::size_t p2 = rng.below(a), p1 = rng.below(a);
    std::vector<Token> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = &cdf[(p2 * a + p1) * a];
      const double u = rng.uniform() * row[a - 1];
      const std::size_t next = std::min<std::size_t>(
          static_cast<std::size_t>(std::upper_bound(row, row + a, u) - row), a - 1);
      out[i] = alphabet_[next];
      p2 = p1;
      p1 = next;
    }
    return out;
  }

 private:
  static constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);

  static void validate(const SyntheticLangSpec& s) {
    if (s.vocab_size < 2 || s.vocab_size > 65536) throw DegenerateSpecError("vocab_size must be in [2, 65536]");
    if (s.exclusive_begin > s.exclusive_end || s.exclusive_end > s.vocab_size || s.shared_begin > s.shared_end ||
        s.shared_end > s.vocab_size) {
      throw DegenerateSpecError("symbol ranges must lie inside the vocabulary");
    }
    if (s.exclusive_begin < s.shared_end && s.shared_begin < s.exclusive_end) {
      throw DegenerateSpecError("exclusive and shared symbol ranges overlap");
    }
    if ((s.exclusive_end - s.exclusive_begin) + (s.shared_end - s.shared_begin) < 2) {
      throw DegenerateSpecError("a language needs at least two symbols");
    }
    if (s.branching < 1) throw DegenerateSpecError("branching must be >= 1");
    if (!(s.smoothing >= 0.0 && s.smoothing <= 1.0)) throw DegenerateSpecError("smoothing must be in [0, 1]");
    if (!(s.shared_mass >= 0.0 && s.shared_mass <= 1.0)) throw DegenerateSpecError("shared_mass must be in [0, 1]");
  }

  void check_rows() const {
    const std::size_t a = alphabet_.size();
    for (std::size_t ctx = 0; ctx < a * a; ++ctx) {
      double s = 0;
      for (std::size_t c = 0; c < a; ++c) s += probs_[ctx * a + c];
      if (std::abs(s - 1.0) > 1e-9) throw DegenerateSpecError("transition row does not sum to 1");
    }
  }

  // A state (x, x) that emits x with probability 1 never leaves itself.
  void check_absorbing() const {
    const std::size_t a = alphabet_.size();
    for (std::size_t x = 0; x < a; ++x) {
      if (row(x, x)[x] >= 1.0 - 1e-12) {
        throw DegenerateSpecError("absorbing state at symbol " + std::to_string(alphabet_[x]));
      }
    }
  }

  std::vector<Token> alphabet_;
  std::vector<std::size_t> slot_;
  std::vector<double> probs_;
};

inline std::vector<double> unigram_distribution(const std::vector<Token>& tokens, std::size_t vocab_size) {
  std::vector<double> p(vocab_size, 0.0);
  for (const Token t : tokens) p.at(t) += 1.0;
  const double n = static_cast<double>(std::max<std::size_t>(tokens.size(), 1));
  for (auto& v : p) v /= n;
  return p;
}

/// Total-variation distance between the unigram distributions of two corpora.
inline double unigram_tv_distance(const Corpus& a, const Corpus& b) {
  if (a.vocab_size != b.vocab_size) throw DimensionError("corpora have different vocab sizes");
  const auto p = unigram_distribution(a.tokens, a.vocab_size);
  const auto q = unigram_distribution(b.tokens, b.vocab_size);
  double tv = 0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

inline constexpr double kMinLanguageTvDistance = 0.3;

/// Samples one stream per language. `stream` selects an independent draw
/// from the same languages (e.g. 0 = training, 1 = held-out evaluation).
inline std::pair<Corpus, Corpus> gen_synthetic_bilingual(const SyntheticLangSpec& source_spec,
                                                         const SyntheticLangSpec& target_spec, std::size_t n_tokens,
                                                         std::uint64_t stream = 0) {
  if (source_spec.vocab_size != target_spec.vocab_size) throw DegenerateSpecError("language specs must share vocab_size");
  if (n_tokens < 10000) throw std::invalid_argument("n_tokens must be >= 10^4");
  const MarkovTable src_table(source_spec);
  const MarkovTable tgt_table(target_spec);
  Corpus src{src_table.sample(n_tokens, mix_seed(source_spec.seed, 2 * stream + 1)), Language::source,
             Provenance::synthetic, source_spec.vocab_size, source_spec.seed};
  Corpus tgt{tgt_table.sample(n_tokens, mix_seed(target_spec.seed, 2 * stream + 1)), Language::target,
             Provenance::synthetic, target_spec.vocab_size, target_spec.seed};
  const double tv = unigram_tv_distance(src, tgt);
  if (tv < kMinLanguageTvDistance) {
    throw DistinguishabilityError("source/target unigram TV distance " + std::to_string(tv) + " is below " +
                                  std::to_string(kMinLanguageTvDistance));
  }
  return {std::move(src), std::move(tgt)};
}

struct CalibrationSet {
  std::vector<std::vector<Token>> windows;
  std::vector<std::size_t> offsets;
  std::size_t seq_len = 0;
  std::uint64_t seed = 0;

  std::size_t n_samples() const { return windows.size(); }
};

/// Draws `n` windows of `seq_len` tokens at distinct start offsets.
inline CalibrationSet sample_calibration(const Corpus& source, std::size_t n, std::size_t seq_len, std::uint64_t seed) {
  if (source.language != Language::source) {
    throw std::invalid_argument("calibration windows must come from the source corpus");
  }
  if (n == 0 || seq_len == 0) throw std::invalid_argument("calibration needs n >= 1 and seq_len >= 1");
  if (source.size() < n * seq_len) {
    throw std::invalid_argument("corpus of " + std::to_string(source.size()) + " tokens is too small for " +
                                std::to_string(n) + " x " + std::to_string(seq_len) + " calibration windows");
  }
  const std::size_t n_offsets = source.size() - seq_len + 1;
  // Floyd's algorithm: n distinct draws from [0, n_offsets).
  Rng rng(mix_seed(seed, 0x63616c6962ULL));
  std::set<std::size_t> chosen;
  for (std::size_t j = n_offsets - n; j < n_offsets; ++j) {
    const auto t = static_cast<std::size_t>(rng.below(j + 1));
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  CalibrationSet cal;
  cal.seq_len = seq_len;
  cal.seed = seed;
  cal.offsets.assign(chosen.begin(), chosen.end());
  rng.shuffle(cal.offsets);
  for (const std::size_t off : cal.offsets) {
    cal.windows.emplace_back(source.tokens.begin() + static_cast<std::ptrdiff_t>(off),
                             source.tokens.begin() + static_cast<std::ptrdiff_t>(off + seq_len));
  }
  return cal;
}

/// Endless stream of [batch x seq_len] token blocks cut from contiguous,
/// non-overlapping windows. Window order is reshuffled every epoch.
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, std::size_t batch, std::size_t seq_len, std::uint64_t seed, bool shuffle = true)
      : corpus_(&corpus), batch_(batch), seq_len_(seq_len), seed_(seed), shuffle_(shuffle) {
    if (batch == 0 || seq_len == 0) throw std::invalid_argument("batch and seq_len must be >= 1");
    if (corpus.size() < batch * seq_len) throw std::invalid_argument("corpus shorter than one batch");
    order_.resize(corpus.size() / seq_len);
    start_epoch();
  }

  std::size_t windows_per_epoch() const { return order_.size(); }
  std::size_t epoch() const { return epoch_; }

  std::vector<Token> next() {
    std::vector<Token> out;
    out.reserve(batch_ * seq_len_);
    for (std::size_t b = 0; b < batch_; ++b) {
      if (cursor_ == order_.size()) {
        ++epoch_;
        start_epoch();
      }
      const auto begin = corpus_->tokens.begin() + static_cast<std::ptrdiff_t>(order_[cursor_++] * seq_len_);
      out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(seq_len_));
    }
    return out;
  }

 private:
  void start_epoch() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (shuffle_) {
      Rng rng(mix_seed(seed_, epoch_));
      rng.shuffle(order_);
    }
    cursor_ = 0;
  }

  const Corpus* corpus_;
  std::size_t batch_, seq_len_;
  std::uint64_t seed_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

/// Reads a file as bytes; each byte becomes one token id.
inline Corpus load_text_corpus(const std::filesystem::path& path, std::size_t vocab_size,
                               Language language = Language::target) {
  if (vocab_size < 256) throw std::invalid_argument("byte-level corpora need vocab_size >= 256");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read corpus file '" + path.string() + "'");
  std::vector<Token> tokens;
  for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) {
    tokens.push_back(static_cast<Token>(static_cast<unsigned char>(*it)));
  }
  if (tokens.empty()) throw ArtifactError("corpus file '" + path.string() + "' is empty");
  return Corpus{std::move(tokens), language, Provenance::file, vocab_size, 0};
}

inline std::string detokenize(std::span<const Token> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (const Token t : tokens) {
    if (t > 255) throw std::invalid_argument("token id " + std::to_string(t) + " is not a byte");
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& tokens_path) {
  return std::filesystem::path(tokens_path.string() + ".json");
}

/// Writes the token array (little-endian u16) and its one-line JSON sidecar.
inline void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::vector<std::uint8_t> bytes;
  append_le<std::uint16_t>(bytes, std::span<const std::uint16_t>(corpus.tokens));
  write_file_bytes(path, bytes);
  const nlohmann::ordered_json side{{"vocab_size", corpus.vocab_size},
                                    {"language", to_string(corpus.language)},
                                    {"seed", corpus.seed},
                                    {"provenance", to_string(corpus.provenance)},
                                    {"n_tokens", corpus.tokens.size()}};
  const std::string text = side.dump() + "\n";
  write_file_bytes(sidecar_path(path), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline Corpus load_corpus(const std::filesystem::path& path) {
  const auto side_bytes = read_file_bytes(sidecar_path(path));
  const auto side = nlohmann::ordered_json::parse(side_bytes.begin(), side_bytes.end());
  const auto bytes = read_file_bytes(path);
  if (bytes.size() % 2 != 0) throw ArtifactError("corpus file '" + path.string() + "' has odd length");
  Corpus c;
  c.tokens = decode_le<std::uint16_t>(bytes.data(), bytes.size() / 2);
  c.vocab_size = side.at("vocab_size").get<std::size_t>();
  c.language = parse_language(side.at("language").get<std::string>());
  c.seed = side.at("seed").get<std::uint64_t>();
  c.provenance = side.value("provenance", "synthetic") == "file" ? Provenance::file : Provenance::synthetic;
  for (const Token t : c.tokens) {
    if (t >= c.vocab_size) throw ArtifactError("corpus '" + path.string() + "' holds an id >= vocab_size");
  }
  return c;
}

}  // namespace ssu
