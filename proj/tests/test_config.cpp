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

#include "ssu/config.hpp"

namespace ssu {
namespace {

bool any_contains(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v) {
    if (s.find(needle) != std::string::npos) return true;
  }
  return false;
}

TEST(Config, EmptyFileGivesDefaults) {
  const auto p = parse_config("");
  EXPECT_TRUE(p.ok());
  EXPECT_EQ(p.config, RunConfig{});
  const std::string text = serialize_config(p.config);
  for (const char* section : {"[model]", "[data]", "[scoring]", "[masking]", "[training]", "[eval]"}) {
    EXPECT_NE(text.find(section), std::string::npos) << section;
  }
}

TEST(Config, ValuesAreApplied) {
  const auto p = parse_config(
      "[model]\nd_model = 32\nprecision = double\n"
      "[masking]\nratio = 0.25 # comment\ngranularity = row\n"
      "[training]\nmethod = hft\n"
      "[eval]\nsweep_ratios = 0, 0.5\n");
  ASSERT_TRUE(p.ok()) << p.errors.front();
  EXPECT_EQ(p.config.model.d_model, 32u);
  EXPECT_EQ(p.config.model.precision, Precision::double_);
  EXPECT_EQ(p.config.masking.ratio, 0.25);
  EXPECT_EQ(p.config.masking.granularity, Granularity::row);
  EXPECT_EQ(p.config.training.method, TrainMethod::hft);
  EXPECT_EQ(p.config.eval.sweep_ratios, (std::vector<double>{0.0, 0.5}));
}

TEST(Config, RatioOutOfRange) {
  const auto p = parse_config("[masking]\nratio = 1.3\n");
  EXPECT_FALSE(p.ok());
  EXPECT_TRUE(any_contains(p.errors, "ratio out of [0,1]"));
}

TEST(Config, UnknownKeysReportLineNumbers) {
  const auto p = parse_config("[model]\nd_model = 64\nwidth = 3\n[bogus]\nx = 1\n", "run.ini");
  EXPECT_TRUE(any_contains(p.errors, "run.ini:3: unknown key 'width'"));
  EXPECT_TRUE(any_contains(p.errors, "run.ini:4: unknown section [bogus]"));
}

TEST(Config, ReportsEveryViolation) {
  const auto p = parse_config("[model]\nn_heads = 3\n[masking]\nratio = -1\n[training]\npeak_lr = 0\nbatch = x\n");
  EXPECT_TRUE(any_contains(p.errors, "[model]"));
  EXPECT_TRUE(any_contains(p.errors, "ratio out of [0,1]"));
  EXPECT_TRUE(any_contains(p.errors, "peak_lr"));
  EXPECT_TRUE(any_contains(p.errors, ":7: training.batch"));
  EXPECT_GE(p.errors.size(), 4u);
}

TEST(Config, SyntaxErrors) {
  const auto p = parse_config("orphan = 1\n[model\n[model]\nnoequals\nd_model = 8\nd_model = 16\n");
  EXPECT_TRUE(any_contains(p.errors, ":1: key 'orphan' outside of any section"));
  EXPECT_TRUE(any_contains(p.errors, ":2: malformed section header"));
  EXPECT_TRUE(any_contains(p.errors, ":4: expected key = value"));
  EXPECT_TRUE(any_contains(p.errors, ":6: duplicate key 'd_model'"));
}

TEST(Config, GmtIntervalDefaultsWithNotice) {
  const auto p = parse_config("[training]\nmethod = gmt\n");
  ASSERT_TRUE(p.ok());
  EXPECT_EQ(p.config.training.gmt_interval, 4u);
  EXPECT_TRUE(any_contains(p.notices, "gmt_interval"));
  EXPECT_TRUE(parse_config("[training]\nmethod = fft\n").notices.empty());
}

TEST(Config, RandomScoringSeedRules) {
  EXPECT_TRUE(any_contains(parse_config("[scoring]\nmethod = random\n").errors, "requires a seed"));
  EXPECT_TRUE(parse_config("[scoring]\nmethod = random\nseed = 4\n").ok());
  EXPECT_FALSE(parse_config("[scoring]\nseed = 4\n").ok());
}

TEST(Config, SerializeParseRoundTrip) {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    RunConfig c;
    c.model.n_layers = 1 + rng.below(4);
    c.model.n_heads = 1 + rng.below(4);
    c.model.d_model = c.model.n_heads * (1 + rng.below(16));
    c.model.precision = rng.below(2) ? Precision::single : Precision::double_;
    c.model.init_seed = rng.next();
    c.pretrain.lr = rng.uniform() * 1e-2 + 1e-6;
    c.data.source.seed = rng.next();
    c.data.target.shared_mass = c.data.source.shared_mass = rng.uniform();
    c.data.target.smoothing = c.data.source.smoothing = 0.5 * rng.uniform();
    c.scoring.method.variant = static_cast<ScoringVariant>(rng.below(5));
    if (c.scoring.method.variant == ScoringVariant::random) c.scoring.method.seed = rng.next();
    c.scoring.calib_seed = rng.next();
    c.masking.ratio = rng.uniform();
    c.masking.granularity = static_cast<Granularity>(rng.below(3));
    c.training.method = static_cast<TrainMethod>(rng.below(4));
    c.training.optimizer = rng.below(2) ? OptimizerKind::sgd : OptimizerKind::adamw;
    c.training.peak_lr = rng.uniform() * 1e-3 + 1e-9;
    c.training.weight_decay = rng.uniform() * 0.1;
    c.training.gmt_drop_ratio = 0.9 * rng.uniform();
    c.training.verify_frozen = rng.below(2) == 1;
    c.eval.sweep_ratios = {rng.uniform(), rng.uniform()};
    const auto p = parse_config(serialize_config(c));
    ASSERT_TRUE(p.ok()) << p.errors.front();
    EXPECT_EQ(p.config, c) << serialize_config(c);
  }
}

TEST(Config, SeedOverrideLeavesLanguagesAlone) {
  RunConfig c;
  c.scoring.method = {ScoringVariant::random, 1};
  apply_seed_override(c, 9);
  EXPECT_EQ(c.model.init_seed, 9u);
  EXPECT_EQ(c.training.seed, 9u);
  EXPECT_EQ(c.scoring.calib_seed, 9u);
  EXPECT_EQ(*c.scoring.method.seed, 9u);
  EXPECT_EQ(c.masking.hft_seed, 9u);
  EXPECT_EQ(c.data.source.seed, RunConfig{}.data.source.seed);
  EXPECT_EQ(c.data.target.seed, RunConfig{}.data.target.seed);
}

}  // namespace
}  // namespace ssu
