// Copyright 2026 The pfppo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// pfppo command line: train-rm, train, eval, analyze, compare.
//
// Every subcommand prints a JSON summary on stdout and exits 0. Failures print
// {"error": <code>, "message": <text>} on stderr and exit nonzero
// (2 for usage errors, 1 otherwise).

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pfppo/config.hpp"
#include "pfppo/error.hpp"
#include "pfppo/harness.hpp"

namespace {

using pfppo::ExperimentConfig;
namespace fs = std::filesystem;

int fail(const std::string& code, const std::string& message, int status) {
  std::cerr << nlohmann::ordered_json{{"error", code}, {"message", message}}.dump() << '\n';
  return status;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--config", c.config, "experiment config (INI)");
  cmd->add_option("--seed", c.seed, "run seed (default: first of run.seeds)");
  if (with_out) cmd->add_option("--out", c.out, "output directory");
}

ExperimentConfig load(const Common& c) {
  return c.config.empty() ? pfppo::parse_config_string("") : pfppo::load_config(c.config);
}

std::uint64_t seed_of(const Common& c, const ExperimentConfig& cfg) { return c.seed.value_or(cfg.run.seeds.front()); }

fs::path out_of(const Common& c, const ExperimentConfig& cfg, const std::string& leaf) {
  return c.out.empty() ? fs::path(cfg.run.out) / leaf : fs::path(c.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pfppo: policy-filtered PPO on synthetic tasks"};
  app.require_subcommand(1);

  Common rm_opts;
  auto* train_rm = app.add_subcommand("train-rm", "build preference pairs and train a reward model");
  add_common(train_rm, rm_opts);

  Common train_opts;
  std::string train_variant;
  auto* train = app.add_subcommand("train", "run one variant end to end");
  add_common(train, train_opts);
  train->add_option("--variant", train_variant, "variant name (default: run.variant)");

  Common eval_opts;
  std::string checkpoint;
  std::optional<int> eval_prompts;
  auto* eval = app.add_subcommand("eval", "greedy evaluation of a policy checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint, "policy table file")->required();
  eval->add_option("--prompts", eval_prompts, "number of fresh prompts (default: ppo.eval_prompts)");

  Common analyze_opts;
  std::string strategy, analyze_variant;
  std::optional<std::string> analyze_checkpoint;
  auto* analyze = app.add_subcommand("analyze", "reliability report (R^2) for a filtration strategy");
  add_common(analyze, analyze_opts);
  analyze->add_option("--strategy", strategy, "strategy spec (default: filter.strategy)");
  analyze->add_option("--variant", analyze_variant, "variant name, as an alternative to --strategy");
  analyze->add_option("--checkpoint", analyze_checkpoint, "policy to sample from (default: the reference policy)");

  Common compare_opts;
  std::vector<std::string> compare_variants;
  std::string seeds_list;
  std::optional<int> jobs;
  auto* compare = app.add_subcommand("compare", "run several variants over several seeds");
  add_common(compare, compare_opts);
  compare->add_option("--variant", compare_variants, "variant to include (repeatable; default: run.variants)");
  compare->add_option("--seeds", seeds_list, "comma-separated seeds (default: run.seeds, or --seed)");
  compare->add_option("--jobs", jobs, "parallel sub-runs (default: run.jobs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*train_rm) {
      const auto cfg = load(rm_opts);
      const auto seed = seed_of(rm_opts, cfg);
      const auto out = out_of(rm_opts, cfg, "reward_model/seed_" + std::to_string(seed));
      const auto rep = pfppo::cmd_train_rm(cfg, seed, out);
      std::cout << nlohmann::ordered_json{{"out", out.string()},
                                          {"pairs", rep.pairs},
                                          {"final_bt_loss", rep.final_loss},
                                          {"heldout_accuracy", rep.heldout_accuracy}}
                       .dump()
                << '\n';
    } else if (*train) {
      const auto cfg = load(train_opts);
      const auto seed = seed_of(train_opts, cfg);
      const std::string name = train_variant.empty() ? cfg.run.variant : train_variant;
      const auto variant = pfppo::parse_variant(name, cfg.ppo.n_responses, cfg.filter.thresholds);
      const auto out = out_of(train_opts, cfg, name + "/seed_" + std::to_string(seed));
      pfppo::TrainOptions opts;
      opts.checkpoint_every = cfg.run.checkpoint_every;
      const auto rec = pfppo::cmd_train(cfg, variant, seed, out, opts);
      auto j = pfppo::to_json(rec);
      j["out"] = out.string();
      std::cout << j.dump() << '\n';
    } else if (*eval) {
      const auto cfg = load(eval_opts);
      const auto seed = seed_of(eval_opts, cfg);
      const auto rep = pfppo::cmd_eval(cfg, checkpoint, eval_prompts.value_or(cfg.ppo.eval_prompts), seed);
      const auto j = pfppo::to_json(rep);
      if (!eval_opts.out.empty()) {
        pfppo::ensure_dir(eval_opts.out);
        pfppo::write_text(fs::path(eval_opts.out) / "eval_report.json", j.dump(2) + "\n");
      }
      std::cout << j.dump() << '\n';
    } else if (*analyze) {
      const auto cfg = load(analyze_opts);
      const auto seed = seed_of(analyze_opts, cfg);
      if (!strategy.empty() && !analyze_variant.empty())
        throw pfppo::Error("usage", "give either --strategy or --variant, not both");
      pfppo::FilterStrategy s;
      if (!analyze_variant.empty()) {
        const auto v = pfppo::parse_variant(analyze_variant, cfg.ppo.n_responses, cfg.filter.thresholds);
        if (v.kind == pfppo::Variant::Kind::kPpoS)
          throw pfppo::Error("usage", "analyze works on per-prompt strategies; ppo_s has none");
        s = v.strategy;
      } else {
        s = pfppo::parse_strategy(strategy.empty() ? cfg.filter.strategy : strategy, cfg.ppo.n_responses,
                                  cfg.filter.thresholds);
      }
      const auto out = out_of(analyze_opts, cfg, "analysis/seed_" + std::to_string(seed));
      const auto rep = pfppo::cmd_analyze(cfg, s, seed, out, analyze_checkpoint);
      std::cout << nlohmann::ordered_json{{"out", out.string()},
                                          {"strategy", rep.strategy},
                                          {"r2", rep.r2 ? nlohmann::ordered_json(*rep.r2) : nlohmann::ordered_json()},
                                          {"bins", rep.bins.size()},
                                          {"samples", rep.samples}}
                       .dump()
                << '\n';
    } else if (*compare) {
      const auto cfg = load(compare_opts);
      std::vector<std::uint64_t> seeds = cfg.run.seeds;
      if (!seeds_list.empty()) {
        seeds = pfppo::parse_config_string("[run]\nseeds = " + seeds_list + "\n").run.seeds;
      } else if (compare_opts.seed) {
        seeds = {*compare_opts.seed};
      }
      const auto names = compare_variants.empty() ? cfg.run.variants : compare_variants;
      const auto out = out_of(compare_opts, cfg, "compare");
      pfppo::CompareOptions opts;
      opts.jobs = jobs.value_or(cfg.run.jobs);
      const auto cmp = pfppo::cmd_compare(cfg, names, seeds, out, opts);
      std::cout << pfppo::format_table(cmp);
    }
  } catch (const pfppo::Error& e) {
    return fail(e.code(), e.what(), e.code() == "usage" ? 2 : 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
