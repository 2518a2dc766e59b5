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

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "ssu/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::string out = "run";
  std::optional<std::string> method;
  std::optional<std::size_t> calib_n;
  std::optional<double> ratio;
  std::optional<std::string> granularity;
};

ssu::RunConfig resolve(const Options& o, const std::string& stage) {
  ssu::ConfigParse parsed;
  if (o.config.empty()) {
    parsed = ssu::parse_config("");
  } else {
    parsed = ssu::parse_config_file(o.config);
  }
  for (const auto& n : parsed.notices) std::cerr << "note: " << n << "\n";
  if (!parsed.ok()) {
    std::string msg = "invalid config:";
    for (const auto& e : parsed.errors) msg += "\n  " + e;
    throw ssu::ConfigError(msg);
  }
  ssu::RunConfig c = parsed.config;
  if (o.seed) ssu::apply_seed_override(c, *o.seed);
  if (o.method) {
    if (stage == "score") {
      c.scoring.method.variant = ssu::parse_scoring_variant(*o.method);
      if (c.scoring.method.variant == ssu::ScoringVariant::random && !c.scoring.method.seed) {
        c.scoring.method.seed = c.training.seed;
      }
      if (c.scoring.method.variant != ssu::ScoringVariant::random) c.scoring.method.seed.reset();
    } else {
      c.training.method = ssu::parse_train_method(*o.method);
    }
  }
  if (o.calib_n) c.scoring.calib_n = *o.calib_n;
  if (o.ratio) c.masking.ratio = *o.ratio;
  if (o.granularity) c.masking.granularity = ssu::parse_granularity(*o.granularity);
  const auto violations = ssu::config_violations(c);
  if (!violations.empty()) {
    std::string msg = "invalid settings:";
    for (const auto& e : violations) msg += "\n  " + e;
    throw ssu::ConfigError(msg);
  }
  return c;
}

template <typename T>
void run_stage(const std::string& stage, const ssu::RunPaths& p, const ssu::RunConfig& c, std::size_t workers) {
  const ssu::Logger log = [](const std::string& line) { std::cout << line << std::endl; };
  if (stage == "gen-data") ssu::stages::gen_data<T>(p, c, workers, log);
  else if (stage == "score") ssu::stages::score<T>(p, c, workers, log);
  else if (stage == "mask") ssu::stages::mask<T>(p, c, log);
  else if (stage == "train") ssu::stages::train<T>(p, c, workers, log);
  else if (stage == "eval") ssu::stages::evaluate<T>(p, c, workers, log);
  else if (stage == "sweep") ssu::stages::sweep<T>(p, c, workers, log);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-shielded continual pre-training pipeline"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", o.config, "Run configuration file (INI)");
    sub->add_option("--seed", o.seed, "Override every run-level seed");
    sub->add_option("--workers", o.workers, "Deterministic worker count")->check(CLI::PositiveNumber);
    if (with_out) sub->add_option("--out", o.out, "Run directory")->capture_default_str();
  };

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"gen-data", "Generate corpora and pre-train the source base model"},
      {"score", "Score parameter importance on source calibration data"},
      {"mask", "Build the freeze mask"},
      {"train", "Continual pre-training on the target corpus"},
      {"eval", "Source/target perplexity report for the adapted model"},
      {"sweep", "Freezing-ratio sweep"},
  };
  for (const auto& [name, help] : stages) {
    auto* sub = app.add_subcommand(name, help);
    common(sub, true);
    if (name == "score") {
      sub->add_option("--method", o.method, "wanda|magnitude|random|sparsegpt|fim");
      sub->add_option("--calib-n", o.calib_n, "Number of calibration windows");
    }
    if (name == "mask" || name == "sweep") {
      sub->add_option("--granularity", o.granularity, "column|row|element");
    }
    if (name == "mask") sub->add_option("--ratio", o.ratio, "Freezing ratio k");
    if (name == "train") sub->add_option("--method", o.method, "fft|ssu|hft|gmt");
  }
  auto* validate = app.add_subcommand("validate", "Check a config file and print it with defaults resolved");
  common(validate, false);

  CLI11_PARSE(app, argc, argv);
  const std::string stage = app.get_subcommands().front()->get_name();

  try {
    if (stage == "validate") {
      const ssu::ConfigParse parsed = o.config.empty() ? ssu::parse_config("") : ssu::parse_config_file(o.config);
      for (const auto& n : parsed.notices) std::cerr << "note: " << n << "\n";
      for (const auto& e : parsed.errors) std::cerr << "error: " << e << "\n";
      if (!parsed.ok()) return 1;
      ssu::RunConfig c = parsed.config;
      if (o.seed) ssu::apply_seed_override(c, *o.seed);
      std::cout << ssu::serialize_config(c);
      return 0;
    }
    const ssu::RunConfig c = resolve(o, stage);
    const ssu::RunPaths paths{o.out};
    if (c.model.precision == ssu::Precision::single) {
      run_stage<float>(stage, paths, c, o.workers);
    } else {
      run_stage<double>(stage, paths, c, o.workers);
    }
  } catch (const std::exception& e) {
    std::cerr << "ssu " << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
