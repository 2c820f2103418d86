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

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "pfppo/tasks.hpp"

using namespace pfppo;

namespace {

Prompt sortseq_prompt(TokenSeq digits) { return Prompt{"sortseq", std::move(digits)}; }

TokenSeq with_eos(TokenSeq y, const Task& t) {
  y.push_back(t.vocab().eos);
  return y;
}

// Random response: up to the cap, any tokens, eos optional.
TokenSeq random_response(const Task& task, const Prompt& p, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(0, static_cast<int>(task.max_response_len(p)));
  std::uniform_int_distribution<int> tok(0, task.vocab().size() - 1);
  TokenSeq y(static_cast<std::size_t>(len(rng)));
  for (auto& t : y) t = tok(rng);
  return y;
}

// Every prefix reachable by a policy: all token sequences below the cap that
// contain no eos.
template <typename F>
void walk_prefixes(const Task& task, const Prompt& p, TokenSeq& prefix, F&& visit) {
  if (prefix.size() >= task.max_response_len(p)) return;
  visit(prefix);
  for (Token t = 0; t < task.vocab().size(); ++t) {
    if (t == task.vocab().eos) continue;
    prefix.push_back(t);
    walk_prefixes(task, p, prefix, visit);
    prefix.pop_back();
  }
}

}  // namespace

TEST(Vocab, EosIsLastAndDense) {
  for (const char* name : {"sortseq", "brackets", "modsum"}) {
    auto task = make_task(name);
    const Vocab& v = task->vocab();
    EXPECT_EQ(v.eos, v.size() - 1) << name;
    EXPECT_TRUE(v.contains(v.eos));
    EXPECT_LE(v.size(), 16);
  }
}

TEST(MakeTask, UnknownIdThrows) {
  try {
    make_task("sudoku");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "unknown_task");
  }
}

TEST(SamplePrompt, SortseqDeterministic) {
  auto task = make_task("sortseq");
  EXPECT_EQ(task->sample_prompt(7), task->sample_prompt(7));
}

TEST(SamplePrompt, SortseqLengthsInRange) {
  auto task = make_task("sortseq");
  std::set<std::size_t> lengths;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Prompt p = task->sample_prompt(s);
    EXPECT_GE(p.context.size(), 3u);
    EXPECT_LE(p.context.size(), 6u);
    for (Token t : p.context) EXPECT_TRUE(t >= 0 && t < 5);
    lengths.insert(p.context.size());
  }
  EXPECT_EQ(lengths.size(), 4u);
}

TEST(SamplePrompt, ModsumSeed42MatchesHandSampler) {
  // m ~ U{2..7}, then a, b ~ U{0..m-1}, one generator seeded with 42.
  std::mt19937_64 gen(42);
  const int m = std::uniform_int_distribution<int>(2, 7)(gen);
  const int a = std::uniform_int_distribution<int>(0, m - 1)(gen);
  const int b = std::uniform_int_distribution<int>(0, m - 1)(gen);

  auto task = make_task("modsum");
  const Prompt p = task->sample_prompt(42);
  ASSERT_EQ(p.context.size(), 3u);
  EXPECT_EQ(p.context[0], a);
  EXPECT_EQ(p.context[1], b);
  EXPECT_EQ(p.context[2], m);
  EXPECT_TRUE(0 <= a && a < m && b < m && m <= 7);
}

TEST(SamplePrompt, BracketsEvenLengths) {
  auto task = make_task("brackets");
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Prompt p = task->sample_prompt(s);
    EXPECT_EQ(p.context.size() % 2, 0u);
    EXPECT_GE(p.context.size(), 2u);
    EXPECT_LE(p.context.size(), 8u);
  }
}

TEST(Score, SortseqExactSolution) {
  SortSeqTask task;
  const Prompt p = sortseq_prompt({3, 1, 2});
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({1, 2, 3}, task)), 1.0);
}

TEST(Score, SortseqPositionMatches) {
  SortSeqTask task;
  const Prompt p = sortseq_prompt({3, 1, 2});
  // Target 1 2 3: "3 1 2" matches no position, "1 3 2" matches the first.
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({3, 1, 2}, task)), 0.0);
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({1, 3, 2}, task)), 1.0 / 3.0);
  // Extra tokens count against the score.
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({1, 2, 3, 3}, task)), 3.0 / 4.0);
  EXPECT_DOUBLE_EQ(task.score(p, TokenSeq{task.vocab().eos}), 0.0);
  // Without eos (cap reached) the same rule applies.
  EXPECT_DOUBLE_EQ(task.score(p, TokenSeq{1, 2, 3}), 1.0);
}

TEST(Score, BracketsViolation) {
  BracketsTask task;
  const Prompt p{"brackets", TokenSeq(4, BracketsTask::kFill)};
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({0, 1, 1, 0}, task)), 0.0);
}

TEST(Score, BracketsPartialCredit) {
  BracketsTask task;
  const Prompt p{"brackets", TokenSeq(6, BracketsTask::kFill)};
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({0, 1, 0, 0, 1, 1}, task)), 1.0);
  // "( ) ( (" : longest balanced prefix "( )" of length 2.
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({0, 1, 0, 0}, task)), 2.0 / 6.0);
  // Balanced but too short: credit for the balanced prefix up to n - 2.
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({0, 1, 0, 1}, task)), 4.0 / 6.0);
  // Filler symbols are not brackets.
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({0, 2, 1}, task)), 0.0);
}

TEST(Score, ModsumBinary) {
  ModSumTask task;
  const Prompt p{"modsum", {3, 4, 5}};
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({2}, task)), 1.0);
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({7}, task)), 0.0);
  EXPECT_DOUBLE_EQ(task.score(p, with_eos({2, 2}, task)), 1.0);
  EXPECT_DOUBLE_EQ(task.score(p, TokenSeq{task.vocab().eos}), 0.0);
}

TEST(Score, TaskMismatchThrows) {
  SortSeqTask task;
  EXPECT_THROW(task.score(Prompt{"modsum", {1, 2, 3}}, TokenSeq{1}), Error);
}

TEST(Score, RangeFuzz) {
  std::mt19937_64 rng(11);
  for (const char* name : {"sortseq", "brackets", "modsum"}) {
    auto task = make_task(name);
    for (int i = 0; i < 10000; ++i) {
      const Prompt p = task->sample_prompt(static_cast<std::uint64_t>(i));
      const double s = task->score(p, random_response(*task, p, rng));
      ASSERT_GE(s, 0.0) << name;
      ASSERT_LE(s, 1.0) << name;
    }
  }
}

TEST(Score, OracleResponsesAreExact) {
  for (const char* name : {"sortseq", "brackets", "modsum"}) {
    auto task = make_task(name);
    for (std::uint64_t s = 0; s < 500; ++s) {
      const Prompt p = task->sample_prompt(s);
      const TokenSeq y = task->oracle_response(p);
      ASSERT_EQ(y.back(), task->vocab().eos);
      ASSERT_DOUBLE_EQ(task->score(p, y), 1.0) << name << " seed " << s;
    }
  }
}

TEST(Score, AnalyticSolutions) {
  SortSeqTask sortseq;
  const Prompt sp = sortseq_prompt({4, 0, 4, 2, 1});
  EXPECT_DOUBLE_EQ(sortseq.score(sp, with_eos({0, 1, 2, 4, 4}, sortseq)), 1.0);
  BracketsTask brackets;
  const Prompt bp{"brackets", TokenSeq(8, BracketsTask::kFill)};
  EXPECT_DOUBLE_EQ(brackets.score(bp, with_eos({0, 0, 0, 0, 1, 1, 1, 1}, brackets)), 1.0);
  EXPECT_DOUBLE_EQ(brackets.score(bp, with_eos({0, 1, 0, 1, 0, 1, 0, 1}, brackets)), 1.0);
}

TEST(EncodeObservation, SortseqEmptyPrefixIsPositionZero) {
  SortSeqTask task;
  const Prompt p = sortseq_prompt({2, 0, 1});
  const ObsId id = task.encode_observation(p, {});
  EXPECT_EQ(id % (task.config().max_len + 2), 0);
  const TokenSeq one{0};
  EXPECT_EQ(task.encode_observation(p, one), id + 1);
}

TEST(EncodeObservation, Deterministic) {
  for (const char* name : {"sortseq", "brackets", "modsum"}) {
    auto task = make_task(name);
    const Prompt p = task->sample_prompt(3);
    const TokenSeq prefix{0};
    EXPECT_EQ(task->encode_observation(p, prefix), task->encode_observation(p, prefix));
  }
}

TEST(EncodeObservation, SortseqIgnoresDigitOrder) {
  SortSeqTask task;
  const TokenSeq prefix{1, 1};
  EXPECT_EQ(task.encode_observation(sortseq_prompt({3, 1, 2, 1}), prefix),
            task.encode_observation(sortseq_prompt({1, 2, 1, 3}), prefix));
  EXPECT_NE(task.encode_observation(sortseq_prompt({3, 1, 2, 1}), prefix),
            task.encode_observation(sortseq_prompt({3, 1, 2, 2}), prefix));
}

TEST(EncodeObservation, PrefixTooLongThrows) {
  SortSeqTask task;
  const Prompt p = sortseq_prompt({1, 2, 3});
  const TokenSeq full{1, 2, 3, 0, 0};
  try {
    task.encode_observation(p, full);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "prefix_too_long");
  }
}

TEST(EncodeObservation, ExhaustiveIdsInRangeAndOracleConsistent) {
  // Small configurations; every reachable prefix of every prompt.
  std::vector<std::shared_ptr<const Task>> tasks = {
      std::make_shared<SortSeqTask>(SortSeqConfig{1, 3, 3}),
      std::make_shared<BracketsTask>(BracketsConfig{1, 2}),
      std::make_shared<ModSumTask>(ModSumConfig{2, 4}),
  };
  for (const auto& task : tasks) {
    std::set<std::vector<Token>> seen_prompts;
    // The oracle's choice must be a function of the observation id.
    std::map<ObsId, Token> oracle_at;
    for (std::uint64_t s = 0; s < 400; ++s) {
      const Prompt p = task->sample_prompt(s);
      if (!seen_prompts.insert(p.context).second) continue;
      TokenSeq prefix;
      walk_prefixes(*task, p, prefix, [&](const TokenSeq& pre) {
        const ObsId id = task->encode_observation(p, pre);
        ASSERT_GE(id, 0);
        ASSERT_LT(id, task->observation_count());
        const Token best = task->oracle_next_token(p, pre);
        auto [it, fresh] = oracle_at.emplace(id, best);
        ASSERT_EQ(it->second, best) << task->name() << " obs " << id;
      });
    }
    EXPECT_LE(task->observation_count(), 4096);
  }
}

TEST(EncodeObservation, DefaultSpacesFit) {
  for (const char* name : {"sortseq", "brackets", "modsum"}) EXPECT_LE(make_task(name)->observation_count(), 4096);
  EXPECT_THROW(SortSeqTask(SortSeqConfig{3, 8, 10}), Error);
}

TEST(RewardFeatures, SortedResponseAscendingPairs) {
  SortSeqTask task;
  const Prompt p = sortseq_prompt({4, 2, 3, 0});
  const auto f = task.reward_features(p, with_eos({0, 2, 3, 4}, task));
  EXPECT_DOUBLE_EQ(f[0], 4.0);
  EXPECT_DOUBLE_EQ(f[1], 3.0);  // len - 1
  EXPECT_DOUBLE_EQ(f[2], 0.0);
  EXPECT_DOUBLE_EQ(f[3], 4.0);
  EXPECT_DOUBLE_EQ(f[4], 0.0);
  EXPECT_DOUBLE_EQ(f[5], 1.0);
}

TEST(RewardFeatures, EmptyResponse) {
  for (const char* name : {"sortseq", "brackets", "modsum"}) {
    auto task = make_task(name);
    const Prompt p = task->sample_prompt(1);
    const auto f = task->reward_features(p, TokenSeq{task->vocab().eos});
    EXPECT_DOUBLE_EQ(f[0], 0.0) << name;
  }
  SortSeqTask s;
  const auto fs = s.reward_features(sortseq_prompt({1, 2, 3}), TokenSeq{s.vocab().eos});
  EXPECT_DOUBLE_EQ(fs[1], 0.0);
  EXPECT_DOUBLE_EQ(fs[2], 0.0);
  EXPECT_DOUBLE_EQ(fs[3], 0.0);
  BracketsTask b;
  const auto fb = b.reward_features(Prompt{"brackets", TokenSeq(4, 2)}, TokenSeq{b.vocab().eos});
  for (std::size_t i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(fb[i], 0.0);
}

TEST(RewardFeatures, BracketsDepthProfile) {
  // Reference counter over the rendered string.
  const std::string text = "(())";
  int depth = 0, max_depth = 0, min_depth = 0, opens = 0, closes = 0, pairs = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '(') {
      ++opens;
      ++depth;
    } else {
      ++closes;
      --depth;
      if (i > 0 && text[i - 1] == '(') ++pairs;
    }
    max_depth = std::max(max_depth, depth);
    min_depth = std::min(min_depth, depth);
  }
  BracketsTask task;
  const Prompt p{"brackets", TokenSeq(4, BracketsTask::kFill)};
  const auto f = task.reward_features(p, with_eos({0, 0, 1, 1}, task));
  ASSERT_EQ(f.size(), 8u);
  EXPECT_EQ(task.vocab().render(TokenSeq{0, 0, 1, 1}), "( ( ) )");
  EXPECT_DOUBLE_EQ(f[0], static_cast<double>(text.size()));
  EXPECT_DOUBLE_EQ(f[1], opens);
  EXPECT_DOUBLE_EQ(f[2], closes);
  EXPECT_DOUBLE_EQ(f[3], pairs);
  EXPECT_DOUBLE_EQ(f[4], max_depth);
  EXPECT_DOUBLE_EQ(f[5], depth);
  EXPECT_DOUBLE_EQ(f[6], min_depth);
  EXPECT_DOUBLE_EQ(f[7], 1.0);
}

TEST(RewardFeatures, DimensionConstant) {
  std::mt19937_64 rng(5);
  for (const char* name : {"sortseq", "brackets", "modsum"}) {
    auto task = make_task(name);
    for (int i = 0; i < 10000; ++i) {
      const Prompt p = task->sample_prompt(static_cast<std::uint64_t>(i));
      ASSERT_EQ(task->reward_features(p, random_response(*task, p, rng)).size(), task->feature_dim()) << name;
    }
  }
}

TEST(MaxResponseLen, TargetPlusSlack) {
  SortSeqTask s;
  EXPECT_EQ(s.max_response_len(sortseq_prompt({1, 2, 3, 4})), 6u);
  BracketsTask b;
  EXPECT_EQ(b.max_response_len(Prompt{"brackets", TokenSeq(6, 2)}), 8u);
  ModSumTask m;
  EXPECT_EQ(m.max_response_len(Prompt{"modsum", {1, 1, 3}}), 3u);
}
