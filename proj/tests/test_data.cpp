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

#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "ssu/checkpoint.hpp"
#include "ssu/data.hpp"
#include "test_util.hpp"

namespace ssu {
namespace {

SyntheticLangSpec target_spec() {
  SyntheticLangSpec s;
  s.exclusive_begin = 64;
  s.exclusive_end = 128;
  s.seed = 2;
  return s;
}

TEST(Synthetic, SamplesStayInAlphabet) {
  const MarkovTable table(SyntheticLangSpec{});
  const std::set<Token> alphabet(table.alphabet().begin(), table.alphabet().end());
  for (const Token t : table.sample(20000, 3)) ASSERT_TRUE(alphabet.count(t)) << t;
}

TEST(Synthetic, TransitionRowsAreDistributions) {
  const MarkovTable table(SyntheticLangSpec{});
  const std::size_t a = table.alphabet().size();
  for (std::size_t i = 0; i < a; i += 7) {
    for (std::size_t j = 0; j < a; j += 5) {
      double sum = 0;
      for (const double p : table.row(i, j)) {
        ASSERT_GE(p, 0.0);
        sum += p;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(Synthetic, BilingualStreamsAreDistinguishable) {
  const auto [src, tgt] = gen_synthetic_bilingual(SyntheticLangSpec{}, target_spec(), 50000);
  EXPECT_EQ(src.size(), 50000u);
  EXPECT_EQ(tgt.size(), 50000u);
  EXPECT_EQ(src.language, Language::source);
  EXPECT_EQ(tgt.language, Language::target);
  EXPECT_GE(unigram_tv_distance(src, tgt), kMinLanguageTvDistance);
}

TEST(Synthetic, IdenticalLanguagesAreRejected) {
  EXPECT_THROW(gen_synthetic_bilingual(SyntheticLangSpec{}, SyntheticLangSpec{}, 20000), DistinguishabilityError);
}

TEST(Synthetic, TooFewTokensRejected) {
  EXPECT_THROW(gen_synthetic_bilingual(SyntheticLangSpec{}, target_spec(), 9999), std::invalid_argument);
}

TEST(Synthetic, DeterministicPerSeedAndStream) {
  const auto a = gen_synthetic_bilingual(SyntheticLangSpec{}, target_spec(), 10000);
  const auto b = gen_synthetic_bilingual(SyntheticLangSpec{}, target_spec(), 10000);
  const auto c = gen_synthetic_bilingual(SyntheticLangSpec{}, target_spec(), 10000, 1);
  EXPECT_EQ(a.first.tokens, b.first.tokens);
  EXPECT_EQ(a.second.tokens, b.second.tokens);
  EXPECT_NE(a.first.tokens, c.first.tokens);
}

TEST(Synthetic, OverlappingExclusiveRangesRejected) {
  SyntheticLangSpec s;
  s.shared_begin = 32;
  s.shared_end = 96;
  EXPECT_THROW(MarkovTable{s}, DegenerateSpecError);
}

Corpus counting_corpus(std::size_t n) {
  Corpus c;
  c.vocab_size = 65536;
  for (std::size_t i = 0; i < n; ++i) c.tokens.push_back(static_cast<Token>(i));
  return c;
}

TEST(Calibration, WindowsAreDistinctCorpusSlices) {
  const Corpus c = counting_corpus(1000);
  const auto cal = sample_calibration(c, 50, 16, 9);
  ASSERT_EQ(cal.n_samples(), 50u);
  EXPECT_EQ(std::set<std::size_t>(cal.offsets.begin(), cal.offsets.end()).size(), 50u);
  for (std::size_t i = 0; i < cal.n_samples(); ++i) {
    ASSERT_EQ(cal.windows[i].size(), 16u);
    EXPECT_EQ(cal.windows[i].front(), static_cast<Token>(cal.offsets[i]));
    EXPECT_LE(cal.offsets[i] + 16, c.size());
  }
  EXPECT_EQ(sample_calibration(c, 50, 16, 9).offsets, cal.offsets);
}

TEST(Calibration, SingleWindowCoveringCorpus) {
  const Corpus c = counting_corpus(64);
  const auto cal = sample_calibration(c, 1, 64, 0);
  ASSERT_EQ(cal.n_samples(), 1u);
  EXPECT_EQ(cal.windows[0], c.tokens);
}

TEST(Calibration, RejectsSmallOrTargetCorpus) {
  Corpus c = counting_corpus(100);
  EXPECT_THROW(sample_calibration(c, 10, 11, 0), std::invalid_argument);
  c.language = Language::target;
  EXPECT_THROW(sample_calibration(c, 1, 10, 0), std::invalid_argument);
}

TEST(BatchStream, EpochVisitsEveryWindowOnce) {
  const Corpus c = counting_corpus(10 * 8 + 3);
  BatchStream stream(c, 2, 8, 5);
  EXPECT_EQ(stream.windows_per_epoch(), 10u);
  std::multiset<Token> starts;
  for (int i = 0; i < 5; ++i) {
    const auto batch = stream.next();
    ASSERT_EQ(batch.size(), 16u);
    for (std::size_t r = 0; r < 2; ++r) {
      EXPECT_EQ(batch[r * 8] % 8, 0);
      for (std::size_t t = 1; t < 8; ++t) EXPECT_EQ(batch[r * 8 + t], batch[r * 8] + t);
      starts.insert(batch[r * 8]);
    }
  }
  EXPECT_EQ(starts.size(), 10u);
  EXPECT_EQ(std::set<Token>(starts.begin(), starts.end()).size(), 10u);
  stream.next();
  EXPECT_EQ(stream.epoch(), 1u);
}

TEST(BatchStream, DeterministicForSeed) {
  const Corpus c = counting_corpus(4096);
  BatchStream a(c, 4, 16, 1), b(c, 4, 16, 1), d(c, 4, 16, 2);
  const auto x = a.next();
  EXPECT_EQ(x, b.next());
  EXPECT_NE(x, d.next());
}

TEST(TextCorpus, BytesBecomeTokenIds) {
  const auto dir = testing::scratch_dir("text");
  std::ofstream(dir / "abc.txt", std::ios::binary) << "abc";
  const Corpus c = load_text_corpus(dir / "abc.txt", 256);
  EXPECT_EQ(c.tokens, (std::vector<Token>{97, 98, 99}));
  EXPECT_EQ(detokenize(c.tokens), "abc");
  std::ofstream(dir / "empty.txt", std::ios::binary).flush();
  EXPECT_THROW(load_text_corpus(dir / "empty.txt", 256), ArtifactError);
  EXPECT_THROW(load_text_corpus(dir / "missing.txt", 256), ArtifactError);
}

TEST(CorpusFile, RoundTrip) {
  const auto dir = testing::scratch_dir("corpus");
  const auto [src, tgt] = gen_synthetic_bilingual(SyntheticLangSpec{}, target_spec(), 12345);
  save_corpus(dir / "tgt.tok", tgt);
  const Corpus back = load_corpus(dir / "tgt.tok");
  EXPECT_EQ(back.tokens, tgt.tokens);
  EXPECT_EQ(back.language, Language::target);
  EXPECT_EQ(back.vocab_size, tgt.vocab_size);
  EXPECT_EQ(back.seed, tgt.seed);
}

TEST(Container, RandomRoundTripsAreBitExact) {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    Container c;
    c.kind = "thing";
    c.meta["trial"] = trial;
    c.meta["note"] = "x\ty";
    const std::size_t n_blobs = rng.below(5);
    for (std::size_t b = 0; b < n_blobs; ++b) {
      Shape shape;
      for (std::size_t d = 0, r = 1 + rng.below(3); d < r; ++d) shape.push_back(rng.below(5));
      const std::string name = "blob" + std::to_string(b);
      switch (rng.below(3)) {
        case 0: {
          Tensor<float> t(shape);
          for (auto& v : t.data()) v = static_cast<float>(rng.normal());
          c.blobs.push_back(Blob::from_tensor(name, "matrix2d", t));
          break;
        }
        case 1: {
          Tensor<double> t(shape);
          for (auto& v : t.data()) v = rng.normal() * 1e300;
          c.blobs.push_back(Blob::from_tensor(name, "vector1d", t));
          break;
        }
        default: {
          Tensor<std::uint8_t> t(shape);
          for (auto& v : t.data()) v = static_cast<std::uint8_t>(rng.below(256));
          c.blobs.push_back(Blob::from_tensor(name, "mask", t));
        }
      }
    }
    const auto bytes = encode_container(c);
    const Container back = decode_container(bytes);
    EXPECT_EQ(back.kind, c.kind);
    EXPECT_EQ(back.meta, c.meta);
    ASSERT_EQ(back.blobs.size(), c.blobs.size());
    for (std::size_t b = 0; b < c.blobs.size(); ++b) {
      EXPECT_EQ(back.blobs[b].name, c.blobs[b].name);
      EXPECT_EQ(back.blobs[b].dtype, c.blobs[b].dtype);
      EXPECT_EQ(back.blobs[b].shape, c.blobs[b].shape);
      EXPECT_EQ(back.blobs[b].bytes, c.blobs[b].bytes);
    }
    EXPECT_EQ(encode_container(back), bytes);
  }
}

TEST(Container, HeaderIsOneJsonLine) {
  Container c;
  c.kind = "thing";
  c.blobs.push_back(Blob::from_tensor("v", "vector1d", Tensor<float>::vector({1.0f, 2.0f})));
  const auto bytes = encode_container(c);
  const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  ASSERT_NE(nl, bytes.end());
  const auto header = json::parse(bytes.begin(), nl);
  EXPECT_EQ(header.at("kind"), "thing");
  EXPECT_EQ(header.at("manifest").at("v").at("nbytes"), 8);
  EXPECT_EQ(static_cast<std::size_t>(bytes.end() - nl - 1), 8u);
}

TEST(Container, CorruptInputRejected) {
  Container c;
  c.kind = "thing";
  c.blobs.push_back(Blob::from_tensor("v", "vector1d", Tensor<double>::vector({1.0, 2.0})));
  auto bytes = encode_container(c);
  bytes.pop_back();
  EXPECT_THROW(decode_container(bytes), ArtifactError);
  EXPECT_THROW(decode_container(std::vector<std::uint8_t>{'{', '}'}), ArtifactError);
  const auto dir = testing::scratch_dir("container");
  write_container(dir / "c.bin", c);
  EXPECT_THROW(read_container(dir / "c.bin", "checkpoint"), ArtifactError);
  EXPECT_THROW(read_container(dir / "nope.bin", "thing"), ArtifactError);
}

TEST(Checkpoint, RoundTripPreservesLogits) {
  const auto dir = testing::scratch_dir("ckpt");
  for (const Precision p : {Precision::single, Precision::double_}) {
    auto check = [&]<typename T>(T) {
      const Model<T> m(testing::tiny_config(p));
      save_checkpoint(dir / "m.ckpt", m);
      EXPECT_EQ(peek_checkpoint_config(dir / "m.ckpt"), m.config());
      const Model<T> back = load_checkpoint<T>(dir / "m.ckpt");
      EXPECT_TRUE(back.params() == m.params());
      const auto tokens = testing::random_tokens(8, 16, 1);
      EXPECT_EQ(back.forward(tokens, false).logits, m.forward(tokens, false).logits);
    };
    if (p == Precision::single) check(float{});
    else check(double{});
  }
  EXPECT_THROW(load_checkpoint<float>(dir / "m.ckpt"), ArtifactError);
}

}  // namespace
}  // namespace ssu
