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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pfppo/config.hpp"

using namespace pfppo;

namespace {

std::string error_code(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyTextGivesDefaults) {
  const ExperimentConfig c = parse_config_string("");
  EXPECT_EQ(c.task.name, "sortseq");
  EXPECT_EQ(c.reward.kind, RewardKind::kNoisyOracle);
  EXPECT_EQ(c.reward.sigma_max, 0.5);
  EXPECT_EQ(c.filter.strategy, "br");
  EXPECT_EQ(c.ppo.n_responses, 5);
  EXPECT_EQ(c.ppo.keep_per_prompt, 2);
  EXPECT_EQ(c.ppo.ppo_epochs, 3);
  EXPECT_EQ(c.ppo.prompts_per_iter, 64);
  EXPECT_EQ(c.ppo.iterations, 50);
  EXPECT_EQ(c.ppo.beta, 0.01);
  EXPECT_EQ(c.ppo.clip_eps, 0.2);
  EXPECT_EQ(c.ppo.gamma, 1.0);
  EXPECT_EQ(c.ppo.gae_lambda, 0.95);
  EXPECT_EQ(c.filter.thresholds.hi, 0.8);
  EXPECT_EQ(c.filter.thresholds.lo, -0.8);
  EXPECT_EQ(c.filter.thresholds.p_keep, 0.5);
  EXPECT_EQ(c.diagnostics.binning.bin_width, 0.05);
  EXPECT_EQ(c.diagnostics.binning.min_bin_count, 5);
  EXPECT_FALSE(c.ppo.value_on_all_candidates);
}

TEST(Config, ParsesEverySection) {
  const ExperimentConfig c = parse_config_string(R"(
; comment
[task]
name = brackets
max_pairs = 3
[sft]
demos = 100
seed = 9
[reward]
source = trained-bt
model = rm.txt
flip_rate = 0.1
[filter]
strategy = "pow:2"
N = 6
M = 3
tau_hi = 0.7
[ppo]
beta = 0.05
iterations = 7
normalize_rewards = false
value_on_all_candidates = yes
[diagnostics]
bin_width = 0.1
[run]
variants = ppo_m, pf_bw
seeds = 4,5
jobs = 2
)");
  EXPECT_EQ(c.task.name, "brackets");
  EXPECT_EQ(c.task.brackets.max_pairs, 3);
  EXPECT_EQ(c.sft.demos, 100);
  ASSERT_TRUE(c.sft_seed);
  EXPECT_EQ(*c.sft_seed, 9u);
  EXPECT_EQ(c.reward.kind, RewardKind::kTrainedBt);
  EXPECT_EQ(c.reward.model_path, "rm.txt");
  EXPECT_EQ(c.reward.flip_rate, 0.1);
  EXPECT_EQ(c.filter.strategy, "pow:2");
  EXPECT_EQ(c.ppo.n_responses, 6);
  EXPECT_EQ(c.ppo.keep_per_prompt, 3);
  EXPECT_EQ(c.filter.thresholds.hi, 0.7);
  EXPECT_EQ(c.ppo.beta, 0.05);
  EXPECT_EQ(c.ppo.iterations, 7);
  EXPECT_FALSE(c.ppo.normalize_rewards);
  EXPECT_TRUE(c.ppo.value_on_all_candidates);
  EXPECT_EQ(c.diagnostics.binning.bin_width, 0.1);
  EXPECT_EQ(c.run.variants, (std::vector<std::string>{"ppo_m", "pf_bw"}));
  EXPECT_EQ(c.run.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(c.run.jobs, 2);
}

TEST(Config, RejectsUnknownAndMalformed) {
  EXPECT_EQ(error_code("[task]\nnmae = sortseq\n"), "invalid_config");
  EXPECT_EQ(error_code("[bogus]\nx = 1\n"), "invalid_config");
  EXPECT_EQ(error_code("[ppo]\nbeta = lots\n"), "invalid_config");
  EXPECT_EQ(error_code("[ppo]\nbeta = -1\n"), "invalid_config");
  EXPECT_EQ(error_code("[ppo]\niterations = 3.5\n"), "invalid_config");
  EXPECT_EQ(error_code("[reward]\nsource = oracle\n"), "invalid_config");
  EXPECT_EQ(error_code("[reward]\nholdout = 1\n"), "invalid_config");
  EXPECT_EQ(error_code("[run]\nseeds = \n"), "invalid_config");
  EXPECT_EQ(error_code("[ppo]\nnormalize_rewards = maybe\n"), "invalid_config");
  EXPECT_EQ(error_code("[filter]\nstrategy = nope\n"), "invalid_strategy");
  EXPECT_EQ(error_code("x = 1\n"), "invalid_config");
}

TEST(Config, LoadFromFileAndMissingFile) {
  const auto path = (std::filesystem::temp_directory_path() / "pfppo_cfg.ini").string();
  std::ofstream(path) << "[ppo]\niterations = 3\n";
  EXPECT_EQ(load_config(path).ppo.iterations, 3);
  try {
    load_config(path + ".missing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "io");
  }
}

TEST(Config, HashTracksResultRelevantSettingsOnly) {
  const auto base = parse_config_string("");
  EXPECT_EQ(config_hash(base), config_hash(parse_config_string("")));
  EXPECT_EQ(config_hash(base).size(), 16u);
  EXPECT_EQ(config_hash(base), config_hash(parse_config_string("[run]\nout = elsewhere\njobs = 4\n")));
  EXPECT_NE(config_hash(base), config_hash(parse_config_string("[ppo]\nbeta = 0.02\n")));
  EXPECT_NE(config_hash(base), config_hash(parse_config_string("[reward]\nsigma_max = 0.4\n")));
  // Spelling a default explicitly is the same experiment.
  EXPECT_EQ(canonical_config(base), canonical_config(parse_config_string("[ppo]\nbeta = 0.01\n")));
}
