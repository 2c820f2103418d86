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

#pragma once

// Synthetic generation tasks with exact scorers.
//
// Each task owns a small token vocabulary (eos is always the last id), a
// seeded prompt sampler, an exact "actual score" in [0, 1], a discrete
// observation encoder for tabular policies, and a deliberately lossy feature
// map for linear reward models.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pfppo/error.hpp"
#include "pfppo/random.hpp"

namespace pfppo {

using Token = int;
using TokenSeq = std::vector<Token>;
using ObsId = int;

struct Vocab {
  std::vector<std::string> symbols;
  Token eos = 0;

  int size() const { return static_cast<int>(symbols.size()); }
  bool contains(Token t) const { return t >= 0 && t < size(); }

  std::string render(std::span<const Token> tokens) const {
    std::string out;
    for (Token t : tokens) {
      if (!out.empty()) out += ' ';
      out += contains(t) ? symbols[static_cast<std::size_t>(t)] : "?";
    }
    return out;
  }
};

struct Prompt {
  std::string task;
  TokenSeq context;

  bool operator==(const Prompt&) const = default;
};

// Response tokens without a trailing eos.
inline std::span<const Token> strip_eos(std::span<const Token> y, Token eos) {
  if (!y.empty() && y.back() == eos) return y.first(y.size() - 1);
  return y;
}

class Task {
 public:
  virtual ~Task() = default;

  virtual std::string_view name() const = 0;
  virtual const Vocab& vocab() const = 0;
  virtual Prompt sample_prompt(std::uint64_t seed) const = 0;
  // Exact actual score in [0, 1]; malformed responses score 0.
  virtual double score(const Prompt& p, std::span<const Token> y) const = 0;
  virtual int observation_count() const = 0;
  // Throws Error("prefix_too_long") when prefix.size() >= max_response_len(p).
  virtual ObsId encode_observation(const Prompt& p, std::span<const Token> prefix) const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual std::vector<double> reward_features(const Prompt& p, std::span<const Token> y) const = 0;
  // Response length cap (eos included): target length + 2.
  virtual std::size_t max_response_len(const Prompt& p) const = 0;
  // Optimal next token for the current state; always a function of the
  // observation id of that state.
  virtual Token oracle_next_token(const Prompt& p, std::span<const Token> prefix) const = 0;

  TokenSeq oracle_response(const Prompt& p) const {
    TokenSeq y;
    const std::size_t cap = max_response_len(p);
    while (y.size() < cap) {
      Token t = oracle_next_token(p, y);
      y.push_back(t);
      if (t == vocab().eos) break;
    }
    return y;
  }

 protected:
  void check_prompt(const Prompt& p) const {
    require(p.task == name(), "task_mismatch",
            "prompt for task '" + p.task + "' given to task '" + std::string(name()) + "'");
  }
  void check_prefix(const Prompt& p, std::span<const Token> prefix) const {
    require(prefix.size() < max_response_len(p), "prefix_too_long",
            "prefix length " + std::to_string(prefix.size()) + " reaches response cap " +
                std::to_string(max_response_len(p)));
  }
};

inline Vocab make_vocab(std::vector<std::string> symbols) {
  symbols.push_back("<eos>");
  Vocab v;
  v.eos = static_cast<Token>(symbols.size() - 1);
  v.symbols = std::move(symbols);
  return v;
}

// ---------------------------------------------------------------------------
// sortseq: emit the prompt digits in ascending order.
//
// score      = (#positions i < L with y_i == sorted_i) / max(L, |y|), |y| without eos
// observation = (multiset of prompt digits, position); prefix contents are
//               ignored because position-wise scoring makes the optimal token
//               depend only on the target and the position.
// features   = [length, non-decreasing adjacent pairs, decreasing adjacent
//               pairs, multiset overlap with prompt, |length - L|, eos flag].
//               Global order is invisible to the features.

struct SortSeqConfig {
  int min_len = 3;
  int max_len = 6;
  int digits = 5;
};

class SortSeqTask final : public Task {
 public:
  explicit SortSeqTask(SortSeqConfig cfg = {}) : cfg_(cfg) {
    require(cfg.min_len >= 1 && cfg.min_len <= cfg.max_len, "invalid_config",
            "sortseq: need 1 <= min_len <= max_len");
    require(cfg.digits >= 2 && cfg.digits <= 10, "invalid_config", "sortseq: digits must be in [2, 10]");
    std::vector<std::string> symbols;
    for (int d = 0; d < cfg.digits; ++d) symbols.push_back(std::to_string(d));
    vocab_ = make_vocab(std::move(symbols));
    for (int len = cfg.min_len; len <= cfg.max_len; ++len) enumerate_multisets(len);
    positions_ = cfg.max_len + 2;
    require(static_cast<long>(multiset_ids_.size()) * positions_ <= 4096, "invalid_config",
            "sortseq: observation space exceeds 4096 ids");
  }

  std::string_view name() const override { return "sortseq"; }
  const Vocab& vocab() const override { return vocab_; }
  const SortSeqConfig& config() const { return cfg_; }

  Prompt sample_prompt(std::uint64_t seed) const override {
    Rng rng = make_rng(seed);
    std::uniform_int_distribution<int> len_dist(cfg_.min_len, cfg_.max_len);
    std::uniform_int_distribution<int> digit_dist(0, cfg_.digits - 1);
    Prompt p{"sortseq", {}};
    const int len = len_dist(rng);
    for (int i = 0; i < len; ++i) p.context.push_back(digit_dist(rng));
    return p;
  }

  double score(const Prompt& p, std::span<const Token> y) const override {
    check_prompt(p);
    const TokenSeq target = sorted_target(p);
    auto body = strip_eos(y, vocab_.eos);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(body.size(), target.size()); ++i) hits += body[i] == target[i];
    return static_cast<double>(hits) / static_cast<double>(std::max(target.size(), body.size()));
  }

  int observation_count() const override { return static_cast<int>(multiset_ids_.size()) * positions_; }

  ObsId encode_observation(const Prompt& p, std::span<const Token> prefix) const override {
    check_prompt(p);
    check_prefix(p, prefix);
    auto it = multiset_ids_.find(sorted_target(p));
    require(it != multiset_ids_.end(), "invalid_prompt", "sortseq: prompt outside configured sizes");
    return it->second * positions_ + static_cast<int>(prefix.size());
  }

  std::size_t feature_dim() const override { return 6; }

  std::vector<double> reward_features(const Prompt& p, std::span<const Token> y) const override {
    check_prompt(p);
    auto body = strip_eos(y, vocab_.eos);
    double ascending = 0, descending = 0;
    for (std::size_t i = 1; i < body.size(); ++i) {
      if (body[i - 1] <= body[i]) ascending += 1;
      else descending += 1;
    }
    std::vector<int> remaining(static_cast<std::size_t>(cfg_.digits), 0);
    for (Token t : p.context) ++remaining[static_cast<std::size_t>(t)];
    double overlap = 0;
    for (Token t : body) {
      if (t >= 0 && t < cfg_.digits && remaining[static_cast<std::size_t>(t)] > 0) {
        --remaining[static_cast<std::size_t>(t)];
        overlap += 1;
      }
    }
    const double len = static_cast<double>(body.size());
    const double target_len = static_cast<double>(p.context.size());
    const double eos = (!y.empty() && y.back() == vocab_.eos) ? 1.0 : 0.0;
    return {len, ascending, descending, overlap, std::abs(len - target_len), eos};
  }

  std::size_t max_response_len(const Prompt& p) const override { return p.context.size() + 2; }

  Token oracle_next_token(const Prompt& p, std::span<const Token> prefix) const override {
    check_prefix(p, prefix);
    const TokenSeq target = sorted_target(p);
    return prefix.size() < target.size() ? target[prefix.size()] : vocab_.eos;
  }

 private:
  static TokenSeq sorted_target(const Prompt& p) {
    TokenSeq t = p.context;
    std::sort(t.begin(), t.end());
    return t;
  }

  void enumerate_multisets(int len) {
    TokenSeq cur;
    auto rec = [&](auto&& self, int lo) -> void {
      if (static_cast<int>(cur.size()) == len) {
        multiset_ids_.emplace(cur, static_cast<int>(multiset_ids_.size()));
        return;
      }
      for (int d = lo; d < cfg_.digits; ++d) {
        cur.push_back(d);
        self(self, d);
        cur.pop_back();
      }
    };
    rec(rec, 0);
  }

  SortSeqConfig cfg_;
  Vocab vocab_;
  std::map<TokenSeq, int> multiset_ids_;
  int positions_ = 0;
};

// ---------------------------------------------------------------------------
// brackets: emit a balanced bracket string of the prompted length n.
//
// The prompt is n copies of the filler symbol "_".
// score      = 1 if balanced and |y| == n; 0 if any prefix closes below depth
//              0 or contains a non-bracket; otherwise the longest balanced
//              prefix of length <= n - 2, divided by n.
// observation = (violated flag, open depth, remaining length n - pos).
// features   = [length, opens, closes, adjacent "()" pairs, max depth,
//               final depth, min prefix depth, eos flag].

struct BracketsConfig {
  int min_pairs = 1;
  int max_pairs = 4;
};

class BracketsTask final : public Task {
 public:
  static constexpr Token kOpen = 0;
  static constexpr Token kClose = 1;
  static constexpr Token kFill = 2;

  explicit BracketsTask(BracketsConfig cfg = {}) : cfg_(cfg) {
    require(cfg.min_pairs >= 1 && cfg.min_pairs <= cfg.max_pairs && cfg.max_pairs <= 16, "invalid_config",
            "brackets: need 1 <= min_pairs <= max_pairs <= 16");
    vocab_ = make_vocab({"(", ")", "_"});
    max_n_ = 2 * cfg.max_pairs;
    depth_span_ = max_n_ + 2;
    remaining_span_ = max_n_ + 2;
  }

  std::string_view name() const override { return "brackets"; }
  const Vocab& vocab() const override { return vocab_; }

  Prompt sample_prompt(std::uint64_t seed) const override {
    Rng rng = make_rng(seed);
    const int pairs = std::uniform_int_distribution<int>(cfg_.min_pairs, cfg_.max_pairs)(rng);
    return Prompt{"brackets", TokenSeq(static_cast<std::size_t>(2 * pairs), kFill)};
  }

  double score(const Prompt& p, std::span<const Token> y) const override {
    check_prompt(p);
    const std::size_t n = p.context.size();
    auto body = strip_eos(y, vocab_.eos);
    int depth = 0;
    std::size_t longest = 0;
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i] == kOpen) ++depth;
      else if (body[i] == kClose) --depth;
      else return 0.0;
      if (depth < 0) return 0.0;
      if (depth == 0 && i + 1 + 2 <= n) longest = i + 1;
    }
    if (depth == 0 && body.size() == n) return 1.0;
    return static_cast<double>(longest) / static_cast<double>(n);
  }

  int observation_count() const override { return 2 * depth_span_ * remaining_span_; }

  ObsId encode_observation(const Prompt& p, std::span<const Token> prefix) const override {
    check_prompt(p);
    check_prefix(p, prefix);
    const State s = walk(prefix);
    const int remaining = static_cast<int>(p.context.size()) - static_cast<int>(prefix.size());
    return ((s.violated ? 1 : 0) * depth_span_ + s.depth) * remaining_span_ + (remaining + 1);
  }

  std::size_t feature_dim() const override { return 8; }

  std::vector<double> reward_features(const Prompt& p, std::span<const Token> y) const override {
    check_prompt(p);
    auto body = strip_eos(y, vocab_.eos);
    double opens = 0, closes = 0, pairs = 0;
    int depth = 0, max_depth = 0, min_depth = 0;
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i] == kOpen) {
        opens += 1;
        ++depth;
      } else if (body[i] == kClose) {
        closes += 1;
        --depth;
        if (i > 0 && body[i - 1] == kOpen) pairs += 1;
      }
      max_depth = std::max(max_depth, depth);
      min_depth = std::min(min_depth, depth);
    }
    const double eos = (!y.empty() && y.back() == vocab_.eos) ? 1.0 : 0.0;
    return {static_cast<double>(body.size()), opens, closes, pairs, static_cast<double>(max_depth),
            static_cast<double>(depth), static_cast<double>(min_depth), eos};
  }

  std::size_t max_response_len(const Prompt& p) const override { return p.context.size() + 2; }

  Token oracle_next_token(const Prompt& p, std::span<const Token> prefix) const override {
    check_prefix(p, prefix);
    const State s = walk(prefix);
    const int remaining = static_cast<int>(p.context.size()) - static_cast<int>(prefix.size());
    if (s.violated || remaining <= 0) return vocab_.eos;
    return s.depth < remaining ? kOpen : kClose;
  }

 private:
  struct State {
    int depth = 0;
    bool violated = false;
  };

  // Depth is reset to 0 once the prefix is violated; the flag carries it.
  State walk(std::span<const Token> prefix) const {
    State s;
    for (Token t : prefix) {
      if (s.violated) break;
      if (t == kOpen) ++s.depth;
      else if (t == kClose) --s.depth;
      else s.violated = true;
      if (s.depth < 0) s.violated = true;
    }
    if (s.violated) s.depth = 0;
    return s;
  }

  BracketsConfig cfg_;
  Vocab vocab_;
  int max_n_ = 0;
  int depth_span_ = 0;
  int remaining_span_ = 0;
};

// ---------------------------------------------------------------------------
// modsum: the prompt is (a, b, m) with 0 <= a, b < m; emit (a + b) mod m.
//
// Sampler: m ~ U{min_mod..max_mod}, then a ~ U{0..m-1}, then b ~ U{0..m-1},
// all from one mt19937_64 seeded with the prompt seed.
// score      = 1 iff the first response token is the residue (binary; tokens
//              after the answer position are ignored).
// observation = (m, a, b, position).
// features   = [length, first token, first < m, first == a + b (no wrap),
//               first in {a, b}, eos right after the first token].

struct ModSumConfig {
  int min_mod = 2;
  int max_mod = 7;
};

class ModSumTask final : public Task {
 public:
  explicit ModSumTask(ModSumConfig cfg = {}) : cfg_(cfg) {
    require(cfg.min_mod >= 1 && cfg.min_mod <= cfg.max_mod && cfg.max_mod <= 9, "invalid_config",
            "modsum: need 1 <= min_mod <= max_mod <= 9");
    std::vector<std::string> symbols;
    for (int d = 0; d <= cfg.max_mod; ++d) symbols.push_back(std::to_string(d));
    vocab_ = make_vocab(std::move(symbols));
    span_ = cfg.max_mod + 1;
  }

  std::string_view name() const override { return "modsum"; }
  const Vocab& vocab() const override { return vocab_; }

  Prompt sample_prompt(std::uint64_t seed) const override {
    Rng rng = make_rng(seed);
    const int m = std::uniform_int_distribution<int>(cfg_.min_mod, cfg_.max_mod)(rng);
    std::uniform_int_distribution<int> operand(0, m - 1);
    const int a = operand(rng);
    const int b = operand(rng);
    return Prompt{"modsum", {a, b, m}};
  }

  static int residue(const Prompt& p) { return (p.context[0] + p.context[1]) % p.context[2]; }

  double score(const Prompt& p, std::span<const Token> y) const override {
    check_prompt(p);
    return (!y.empty() && y.front() == residue(p)) ? 1.0 : 0.0;
  }

  int observation_count() const override { return span_ * span_ * span_ * 3; }

  ObsId encode_observation(const Prompt& p, std::span<const Token> prefix) const override {
    check_prompt(p);
    check_prefix(p, prefix);
    const int a = p.context[0], b = p.context[1], m = p.context[2];
    return ((m * span_ + a) * span_ + b) * 3 + static_cast<int>(prefix.size());
  }

  std::size_t feature_dim() const override { return 6; }

  std::vector<double> reward_features(const Prompt& p, std::span<const Token> y) const override {
    check_prompt(p);
    auto body = strip_eos(y, vocab_.eos);
    const int a = p.context[0], b = p.context[1], m = p.context[2];
    if (body.empty()) return {0, 0, 0, 0, 0, 0};
    const Token first = body.front();
    const double eos_next = (y.size() == 2 && y[1] == vocab_.eos) ? 1.0 : 0.0;
    return {static_cast<double>(body.size()),
            static_cast<double>(first),
            first < m ? 1.0 : 0.0,
            first == a + b ? 1.0 : 0.0,
            (first == a || first == b) ? 1.0 : 0.0,
            eos_next};
  }

  std::size_t max_response_len(const Prompt&) const override { return 3; }

  Token oracle_next_token(const Prompt& p, std::span<const Token> prefix) const override {
    check_prefix(p, prefix);
    return prefix.empty() ? residue(p) : vocab_.eos;
  }

 private:
  ModSumConfig cfg_;
  Vocab vocab_;
  int span_ = 0;
};

// ---------------------------------------------------------------------------

struct TaskConfig {
  std::string name = "sortseq";
  SortSeqConfig sortseq;
  BracketsConfig brackets;
  ModSumConfig modsum;
};

inline std::shared_ptr<const Task> make_task(const TaskConfig& cfg) {
  if (cfg.name == "sortseq") return std::make_shared<SortSeqTask>(cfg.sortseq);
  if (cfg.name == "brackets") return std::make_shared<BracketsTask>(cfg.brackets);
  if (cfg.name == "modsum") return std::make_shared<ModSumTask>(cfg.modsum);
  throw Error("unknown_task", "unknown task id '" + cfg.name + "'");
}

inline std::shared_ptr<const Task> make_task(std::string_view name) {
  TaskConfig cfg;
  cfg.name = std::string(name);
  return make_task(cfg);
}

}  // namespace pfppo
