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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "pfppo/diagnostics.hpp"
#include "pfppo/ppo.hpp"
#include "pfppo/tasks.hpp"

using namespace pfppo;

namespace {

ScoredResponse at(double reward, double score) { return {Prompt{}, {}, reward, score, 1.0}; }

ReliabilityBin point(double x, double y) {
  ReliabilityBin b;
  b.reward_lo = x - 0.01;
  b.reward_hi = x + 0.01;
  b.mean_reward = x;
  b.mean_actual_score = y;
  b.count = 10;
  return b;
}

std::vector<ScoredResponse> oracle_samples(int count, std::uint64_t seed) {
  const NoisyOracleConfig cfg{0.5};
  Rng rng = make_rng(seed);
  std::vector<ScoredResponse> out;
  for (int i = 0; i < count; ++i) {
    const double s = static_cast<double>(rng() % 7) / 6.0;
    out.push_back(at(noisy_oracle_reward(cfg, s, rng), s));
  }
  return out;
}

struct Shared {
  SortSeqTask task;
  ReferencePolicy ref{train_sft(task, SftConfig{}, 1)};
};

const Shared& shared() {
  static const Shared s;
  return s;
}

}  // namespace

TEST(GroupByReward, IdenticalRewards) {
  std::vector<ScoredResponse> s(8, at(0.5, 0.75));
  const auto b = group_by_reward(s);
  ASSERT_EQ(b.bins.size(), 1u);
  EXPECT_DOUBLE_EQ(b.bins[0].mean_reward, 0.5);
  EXPECT_DOUBLE_EQ(b.bins[0].mean_actual_score, 0.75);
  EXPECT_EQ(b.bins[0].count, 8);
  EXPECT_LE(b.bins[0].reward_lo, 0.5);
  EXPECT_GT(b.bins[0].reward_hi, 0.5);
}

TEST(GroupByReward, TwoClusters) {
  std::vector<ScoredResponse> s;
  for (int i = 0; i < 6; ++i) s.push_back(at(-0.9, 0.0));
  for (int i = 0; i < 9; ++i) s.push_back(at(0.9, 1.0));
  const auto b = group_by_reward(s, {0.1, 5});
  ASSERT_EQ(b.bins.size(), 2u);
  EXPECT_EQ(b.bins[0].count, 6);
  EXPECT_EQ(b.bins[1].count, 9);
  EXPECT_EQ(b.dropped, 0u);
}

TEST(GroupByReward, MatchesReferenceGroupByAndConservesCount) {
  const auto s = oracle_samples(10000, 1);
  const BinningConfig cfg{0.05, 5};
  const auto b = group_by_reward(s, cfg);
  // Reference: key by floor((r + 1) / w), last edge folded into the top bin.
  std::map<int, std::vector<const ScoredResponse*>> ref;
  for (const auto& x : s) ref[std::min(39, static_cast<int>(std::floor((x.reward + 1.0) / 0.05)))].push_back(&x);
  std::size_t kept = 0, dropped = 0;
  std::size_t bi = 0;
  for (const auto& [key, members] : ref) {
    if (members.size() < 5) {
      dropped += members.size();
      continue;
    }
    ASSERT_LT(bi, b.bins.size());
    double r = 0, sc = 0;
    for (const auto* m : members) {
      r += m->reward;
      sc += m->actual_score;
    }
    const auto n = static_cast<double>(members.size());
    EXPECT_NEAR(b.bins[bi].mean_reward, r / n, 1e-12);
    EXPECT_NEAR(b.bins[bi].mean_actual_score, sc / n, 1e-12);
    EXPECT_EQ(b.bins[bi].count, static_cast<int>(members.size()));
    EXPECT_NEAR(b.bins[bi].reward_lo, -1.0 + key * 0.05, 1e-12);
    kept += members.size();
    ++bi;
  }
  EXPECT_EQ(bi, b.bins.size());
  EXPECT_EQ(b.dropped, dropped);
  std::size_t total = b.dropped;
  for (const auto& x : b.bins) {
    total += static_cast<std::size_t>(x.count);
    EXPECT_GE(x.count, 5);
    EXPECT_LT(x.reward_lo, x.reward_hi);
  }
  EXPECT_EQ(total, s.size());
  EXPECT_EQ(kept + dropped, s.size());
}

TEST(GroupByReward, Errors) {
  EXPECT_THROW(group_by_reward(std::vector<ScoredResponse>{}), Error);
  EXPECT_THROW(group_by_reward(std::vector<ScoredResponse>{at(0.0, 0.0)}, {0.0, 5}), Error);
  EXPECT_THROW(group_by_reward(std::vector<ScoredResponse>{at(1.5, 0.0)}), Error);
}

TEST(ComputeR2, Collinear) {
  const std::vector<ReliabilityBin> b{point(-0.5, 0.25), point(0.0, 0.5), point(0.6, 0.8), point(1.0, 1.0)};
  const auto fit = fit_bins(b);
  ASSERT_TRUE(fit.r2);
  EXPECT_NEAR(*fit.r2, 1.0, 1e-12);
  EXPECT_NEAR(fit.slope, 0.5, 1e-12);
  EXPECT_NEAR(fit.intercept, 0.5, 1e-12);
  EXPECT_NEAR(fit.ss_res, 0.0, 1e-12);
}

TEST(ComputeR2, ConstantScoreIsUndefined) {
  const std::vector<ReliabilityBin> b{point(-0.5, 0.3), point(0.0, 0.3), point(0.5, 0.3)};
  EXPECT_FALSE(compute_r2(b).has_value());
}

TEST(ComputeR2, HandExample) {
  const std::vector<ReliabilityBin> b{point(0.0, 0.0), point(0.5, 0.3), point(1.0, 0.4)};
  const auto fit = fit_bins(b);
  ASSERT_TRUE(fit.r2);
  EXPECT_NEAR(*fit.r2, 0.92308, 1e-4);
  EXPECT_NEAR(*fit.r2, 1.0 - (0.02 / 3.0) / (0.26 / 3.0), 1e-12);
  EXPECT_NEAR(fit.slope, 0.4, 1e-12);
}

TEST(ComputeR2, TooFewBins) {
  const std::vector<ReliabilityBin> b{point(0.0, 0.0), point(0.5, 0.3)};
  try {
    compute_r2(b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "too_few_bins");
  }
}

TEST(ComputeR2, AffineInvarianceAndUpperBound) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int c = 0; c < 1000; ++c) {
    std::vector<ReliabilityBin> b, t;
    const double a = (rng() % 2 ? 1.0 : -1.0) * (0.1 + std::abs(u(rng)) * 3.0), off = u(rng);
    for (std::size_t i = 0; i < 3 + rng() % 10; ++i) {
      const ReliabilityBin p = point(u(rng), u(rng));
      b.push_back(p);
      t.push_back(point(a * p.mean_reward + off, p.mean_actual_score));
    }
    const auto r = compute_r2(b), rt = compute_r2(t);
    ASSERT_TRUE(r && rt);
    ASSERT_LE(*r, 1.0);
    ASSERT_NEAR(*r, *rt, 1e-10);
  }
}

TEST(ComputeR2, OneIffResidualsZero) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int c = 0; c < 200; ++c) {
    std::vector<ReliabilityBin> b;
    const bool exact = c % 2 == 0;
    for (int i = 0; i < 5; ++i) {
      const double x = u(rng);
      b.push_back(point(x, 0.3 * x + 0.1 + (exact ? 0.0 : 0.05 * u(rng))));
    }
    const auto fit = fit_bins(b);
    ASSERT_TRUE(fit.r2);
    if (exact) ASSERT_NEAR(*fit.r2, 1.0, 1e-12);
    else ASSERT_LT(*fit.r2, 1.0);
    ASSERT_EQ(*fit.r2 == 1.0, fit.ss_res <= 1e-12 * fit.ss_tot || fit.ss_res == 0.0);
  }
}

TEST(ReliabilityReport, NoiselessOracleIsLinearForEveryStrategy) {
  const auto& s = shared();
  const RewardSource oracle{NoisyOracleConfig{0.0}};
  for (const char* spec : {"none", "bon", "br", "bw", "top-random", "pow:2"}) {
    const auto rep = reliability_report(parse_strategy(spec, 5), s.ref.params(), oracle, s.task, 2000, 5, 2, 1);
    ASSERT_TRUE(rep.r2) << spec << ": " << rep.diagnostic;
    EXPECT_GE(*rep.r2, 0.999) << spec;
  }
  // With reward exactly 2s - 1, threshold filters keep only the extreme
  // scores, which span fewer than 3 bins: R^2 is undefined, not 0 or 1.
  for (const char* spec : {"top", "top-bottom"}) {
    const auto rep = reliability_report(parse_strategy(spec, 5), s.ref.params(), oracle, s.task, 2000, 5, 2, 1);
    EXPECT_FALSE(rep.r2.has_value()) << spec;
    EXPECT_LT(rep.bins.size(), 3u) << spec;
  }
}

TEST(ReliabilityReport, NoFilterMoreReliableThanBon) {
  const auto& s = shared();
  const RewardSource oracle{NoisyOracleConfig{0.5}};
  const auto none = reliability_report(NoFilter{}, s.ref.params(), oracle, s.task, 2000, 5, 2, 7);
  const auto bon = reliability_report(parse_strategy("bon", 5), s.ref.params(), oracle, s.task, 2000, 5, 2, 7);
  ASSERT_TRUE(none.r2 && bon.r2);
  EXPECT_GT(*none.r2, *bon.r2);
}

TEST(ReliabilityReport, BestWorstMoreReliableThanNoFilter) {
  const auto& s = shared();
  const RewardSource oracle{NoisyOracleConfig{0.5}};
  const auto none = reliability_report(NoFilter{}, s.ref.params(), oracle, s.task, 2000, 5, 2, 7);
  const auto bw = reliability_report(parse_strategy("bw", 5), s.ref.params(), oracle, s.task, 2000, 5, 2, 7);
  ASSERT_TRUE(none.r2 && bw.r2);
  EXPECT_GT(*bw.r2, *none.r2);
}

TEST(ReliabilityReport, DeterministicAndSerializable) {
  const auto& s = shared();
  const RewardSource oracle{NoisyOracleConfig{0.5}};
  const auto a = reliability_report(parse_strategy("br", 5), s.ref.params(), oracle, s.task, 300, 5, 2, 4);
  const auto b = reliability_report(parse_strategy("br", 5), s.ref.params(), oracle, s.task, 300, 5, 2, 4);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(a.samples, 600u);
  const auto path = (std::filesystem::temp_directory_path() / "pfppo_rel.csv").string();
  write_reliability_csv(path, a.bins);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "bin_lo,bin_hi,mean_reward,mean_score,count");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, a.bins.size());
}

TEST(ReliabilityReport, UndefinedWhenTooFewBins) {
  const auto& s = shared();
  const RewardSource oracle{NoisyOracleConfig{0.5}};
  const auto rep = reliability_report(Top{0.8}, s.ref.params(), oracle, s.task, 3, 5, 2, 1);
  EXPECT_FALSE(rep.r2.has_value());
  EXPECT_FALSE(rep.diagnostic.empty());
  EXPECT_TRUE(to_json(rep)["r2"].is_null());
}

TEST(Accounting, TableRowsOverTenIterations) {
  const auto& s = shared();
  const RewardSource oracle{NoisyOracleConfig{0.5}};
  PpoConfig cfg;
  cfg.prompts_per_iter = 64;
  const auto eval = eval_prompt_set(s.task, 1, 4);
  std::map<std::string, ComputeLedger> ledgers;
  for (const char* name : {"pf_br", "ppo_m", "ppo_s"}) {
    const Variant v = parse_variant(name, 5);
    const RunContext ctx{s.task, s.ref, oracle, cfg, 2};
    TrainState st{s.ref.params(), ValueParams::zeros(s.ref.params().num_obs), {}};
    std::vector<IterationMetrics> stream;
    for (int it = 1; it <= 10; ++it) {
      auto r = run_iteration(v, std::move(st), ctx, it, eval);
      st = std::move(r.state);
      stream.push_back(r.metrics);
    }
    ledgers[name] = compute_accounting(stream, contract_for(v, cfg));
  }
  EXPECT_EQ(ledgers["pf_br"].policy_updates, 3840);
  EXPECT_EQ(ledgers["ppo_m"].policy_updates, 9600);
  EXPECT_EQ(ledgers["ppo_s"].policy_updates, 9600);
  EXPECT_EQ(ledgers["ppo_s"].queries_sampled, 5 * 64 * 10);
  EXPECT_EQ(ledgers["ppo_m"].queries_sampled, 64 * 10);
  for (const auto& [name, l] : ledgers) EXPECT_EQ(l.rm_forward, 5 * 64 * 10) << name;
}

TEST(Accounting, RejectsBrokenStreams) {
  PpoConfig cfg;
  cfg.prompts_per_iter = 4;
  const Variant v = parse_variant("pf_br", 5);
  IterationMetrics it;
  it.iteration = 1;
  it.queries_sampled = 4;
  it.responses_per_query = 5;
  it.rm_forward = 20;
  it.candidates_generated = 20;
  it.buffer_entries = 8;
  it.policy_updates = 24;
  it.value_updates = 24;
  EXPECT_NO_THROW(compute_accounting(std::vector<IterationMetrics>{it}, contract_for(v, cfg)));
  auto bad = it;
  bad.policy_updates = 60;
  EXPECT_THROW(compute_accounting(std::vector<IterationMetrics>{bad}, contract_for(v, cfg)), Error);
  bad = it;
  bad.iteration = 2;
  EXPECT_THROW(compute_accounting(std::vector<IterationMetrics>{bad}, contract_for(v, cfg)), Error);
  bad = it;
  bad.rm_forward = 8;
  EXPECT_THROW(compute_accounting(std::vector<IterationMetrics>{bad}, contract_for(v, cfg)), Error);
  EXPECT_THROW(compute_accounting(std::vector<IterationMetrics>{}, contract_for(v, cfg)), Error);
}
