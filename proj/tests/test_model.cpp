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

#include <cstring>
#include <vector>

#include "ssu/gradcheck.hpp"
#include "ssu/model.hpp"

namespace ssu {
namespace {

ModelConfig tiny_config(Precision p = Precision::double_) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = 16;
  c.max_seq_len = 8;
  c.precision = p;
  c.init_seed = 7;
  return c;
}

std::vector<Token> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Token> t(n);
  for (auto& v : t) v = static_cast<Token>(rng.below(vocab));
  return t;
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  c.n_heads = 3;  // 64 % 3 != 0
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.vocab_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig{}.validate());
}

TEST(Model, PrecisionMustMatchScalarType) {
  EXPECT_THROW(Model<float>(tiny_config(Precision::double_)), ConfigError);
}

TEST(Model, InitIsDeterministic) {
  const Model<float> a(tiny_config(Precision::single));
  const Model<float> b(tiny_config(Precision::single));
  ASSERT_EQ(a.params().size(), b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& x = a.params()[i].value;
    const auto& y = b.params()[i].value;
    EXPECT_EQ(std::memcmp(x.raw(), y.raw(), x.numel() * sizeof(float)), 0) << a.params()[i].name;
  }
  auto other = tiny_config(Precision::single);
  other.init_seed = 8;
  EXPECT_FALSE(Model<float>(other).params() == a.params());
}

TEST(Model, ParameterCountMatchesShapeEnumeration) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 64;
  c.vocab_size = 256;
  c.d_ff = 128;
  c.max_seq_len = 128;
  const Model<float> m(c);
  // Independent enumeration: token + position embeddings, per layer two gains,
  // four d x d attention matrices and three d x d_ff feed-forward matrices,
  // final gain, head.
  const std::size_t d = 64, f = 128, v = 256, s = 128, L = 2;
  const std::size_t expected = v * d + s * d + L * (2 * d + 4 * d * d + 3 * d * f) + d + v * d;
  EXPECT_EQ(m.parameter_count(), expected);
}

TEST(Model, RegistryKindsAndOrientation) {
  const Model<double> m(tiny_config());
  const auto& reg = m.params();
  EXPECT_EQ(reg[reg.index_of("embed.tokens")].kind, ParamKind::embedding);
  EXPECT_EQ(reg[reg.index_of("lm_head")].kind, ParamKind::head);
  const auto& down = reg[reg.index_of("layers.1.ffn.w_down")];
  EXPECT_EQ(down.kind, ParamKind::matrix2d);
  EXPECT_EQ(down.d_out(), 8u);
  EXPECT_EQ(down.d_in(), 16u);
  EXPECT_EQ(reg[reg.index_of("layers.0.attn_norm")].kind, ParamKind::vector1d);
  EXPECT_THROW(reg.index_of("layers.9.attn.wq"), std::out_of_range);
}

TEST(Model, NormGainsStartAtOne) {
  const Model<float> m(tiny_config(Precision::single));
  for (const auto& p : m.params()) {
    if (p.kind != ParamKind::vector1d) continue;
    for (float v : p.value.data()) EXPECT_EQ(v, 1.0f);
  }
}

TEST(Model, CaptureDoesNotChangeLogits) {
  const Model<float> m(tiny_config(Precision::single));
  const auto tokens = random_tokens(8, 16, 1);
  const auto plain = m.forward(tokens, false);
  const auto captured = m.forward(tokens, true);
  EXPECT_FALSE(plain.stats.has_value());
  ASSERT_TRUE(captured.stats.has_value());
  EXPECT_EQ(plain.logits, captured.logits);
  EXPECT_EQ(plain.logits.shape(), (Shape{8, 16}));
}

TEST(Model, CausalPrefixInvariance) {
  const Model<double> m(tiny_config());
  auto tokens = random_tokens(8, 16, 2);
  const auto base = m.forward(tokens, false).logits;
  for (std::size_t t = 3; t < 8; ++t) tokens[t] = static_cast<Token>((tokens[t] + 5) % 16);
  const auto changed = m.forward(tokens, false).logits;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(base.at(r, c), changed.at(r, c));
  }
  bool later_differs = false;
  for (std::size_t c = 0; c < 16; ++c) later_differs |= base.at(5, c) != changed.at(5, c);
  EXPECT_TRUE(later_differs);
}

TEST(Model, RepeatedTokenStatsAccumulateTimesT) {
  // One layer; position embeddings zeroed so every position sees the same
  // block input x = rmsnorm(E[tok]).
  auto c = tiny_config();
  c.n_layers = 1;
  Model<double> m(c);
  m.params()[m.position_embedding_index()].value.fill(0.0);
  const Token tok = 5;
  const std::vector<Token> tokens(6, tok);
  const auto stats = *m.forward(tokens, true).stats;
  EXPECT_EQ(stats.token_count, 6u);

  const auto& emb = m.params()[m.token_embedding_index()].value;
  const auto& gain = m.params()[m.layers()[0].attn_norm].value;
  double ms = 0;
  for (std::size_t j = 0; j < c.d_model; ++j) ms += emb.at(tok, j) * emb.at(tok, j);
  ms /= static_cast<double>(c.d_model);
  const double inv = 1.0 / std::sqrt(ms + 1e-5);
  const auto& sq = stats.at(m.layers()[0].wq);
  for (std::size_t j = 0; j < c.d_model; ++j) {
    const double x = gain[j] * emb.at(tok, j) * inv;
    EXPECT_NEAR(sq[j], 6.0 * x * x, 1e-12 * (1 + 6 * x * x));
  }
  EXPECT_EQ(stats.at(m.layers()[0].wk), sq);
  EXPECT_EQ(stats.at(m.layers()[0].wv), sq);
  EXPECT_FALSE(stats.covers(m.token_embedding_index()));
  EXPECT_FALSE(stats.covers(m.head_index()));
}

TEST(Model, RejectsBadTokensAndLengths) {
  const Model<double> m(tiny_config());
  EXPECT_THROW(m.forward(std::vector<Token>{1, 16}, false), DimensionError);
  EXPECT_THROW(m.forward(std::vector<Token>(9, 1), false), DimensionError);
}

TEST(Model, GradsAreShapeCongruent) {
  const Model<float> m(tiny_config(Precision::single));
  const auto batch = random_tokens(3 * 8, 16, 4);
  const auto out = m.loss_and_grads(batch, 3, 8);
  ASSERT_EQ(out.grads.size(), m.params().size());
  for (std::size_t i = 0; i < out.grads.size(); ++i) {
    EXPECT_EQ(out.grads[i].shape(), m.params()[i].value.shape()) << m.params()[i].name;
  }
  EXPECT_NEAR(out.loss, m.loss(batch, 3, 8), 1e-6);
}

TEST(Model, DuplicateRowsLeaveLossUnchanged) {
  const Model<double> m(tiny_config());
  const auto row = random_tokens(8, 16, 6);
  std::vector<Token> twice(row);
  twice.insert(twice.end(), row.begin(), row.end());
  EXPECT_NEAR(m.loss(row, 1, 8), m.loss(twice, 2, 8), 1e-14);
}

TEST(Model, FullLossGradientMatchesFiniteDifferences) {
  Model<double> m(tiny_config());
  ASSERT_LE(m.parameter_count(), 10000u);
  const auto batch = random_tokens(2 * 8, 16, 12);
  const auto analytic = m.loss_and_grads(batch, 2, 8);
  std::vector<Tensor<double>*> params;
  for (auto& p : m.params()) params.push_back(&p.value);
  const auto r = finite_diff_gradcheck([&] { return m.loss(batch, 2, 8); }, params, analytic.grads, 1e-5);
  EXPECT_LE(r.max_rel_error, 1e-5) << "worst " << m.params()[r.worst_tensor].name << "[" << r.worst_index
                                   << "] analytic=" << r.worst_analytic << " numeric=" << r.worst_numeric;
}

TEST(Model, AdoptsMatchingRegistryOnly) {
  const Model<double> m(tiny_config());
  EXPECT_NO_THROW(Model<double>(tiny_config(), m.params()));
  auto wrong = tiny_config();
  wrong.d_ff = 12;
  EXPECT_THROW(Model<double>(wrong, m.params()), DimensionError);
}

}  // namespace
}  // namespace ssu
