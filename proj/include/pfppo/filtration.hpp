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

// Policy filtration: sample N responses, rank them by reward, and keep a
// strategy-defined subset (with per-sample weights) for the PPO buffer.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pfppo/error.hpp"
#include "pfppo/policy.hpp"
#include "pfppo/random.hpp"
#include "pfppo/reward_model.hpp"
#include "pfppo/tasks.hpp"

namespace pfppo {

// Categorical weights over reward ranks (rank 0 = highest reward).
class RankWeights {
 public:
  explicit RankWeights(std::vector<double> w) : w_(std::move(w)) {
    require(!w_.empty(), "invalid_strategy", "rank weights must be non-empty");
    double sum = 0.0;
    for (double v : w_) {
      require(v >= 0.0 && std::isfinite(v), "invalid_strategy", "rank weights must be finite and >= 0");
      sum += v;
    }
    require(std::abs(sum - 1.0) <= 1e-12, "invalid_strategy", "rank weights must sum to 1");
  }

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  std::span<const double> values() const { return w_; }

  bool operator==(const RankWeights&) const = default;

 private:
  std::vector<double> w_;
};

inline RankWeights bon_weights(int n) {
  require(n >= 1, "invalid_strategy", "best-of-N needs N >= 1");
  std::vector<double> w(static_cast<std::size_t>(n), 0.0);
  w[0] = 1.0;
  return RankWeights(std::move(w));
}

inline RankWeights br_weights(int n) {
  require(n >= 2, "invalid_strategy", "best-random needs N >= 2");
  std::vector<double> w(static_cast<std::size_t>(n), 1.0 / (2.0 * (n - 1)));
  w[0] = 0.5;
  return RankWeights(std::move(w));
}

inline RankWeights bw_weights(int n) {
  require(n >= 2, "invalid_strategy", "best-worst needs N >= 2");
  std::vector<double> w(static_cast<std::size_t>(n), 0.0);
  w.front() = 0.5;
  w.back() = 0.5;
  return RankWeights(std::move(w));
}

struct NoFilter {};
struct RankBased {
  RankWeights weights;
  std::string label;  // "bon", "br", "bw" or "custom"
};
struct Top {
  double hi = 0.8;
};
struct TopRandom {
  double hi = 0.8;
  double p_keep = 0.5;
};
struct TopBottom {
  double hi = 0.8;
  double lo = -0.8;
};
struct PowK {
  double k = 1.0;
};

using FilterStrategy = std::variant<NoFilter, RankBased, Top, TopRandom, TopBottom, PowK>;

inline std::string format_number(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

inline std::string strategy_name(const FilterStrategy& s) {
  struct Visitor {
    std::string operator()(const NoFilter&) const { return "none"; }
    std::string operator()(const RankBased& r) const { return r.label; }
    std::string operator()(const Top&) const { return "top"; }
    std::string operator()(const TopRandom&) const { return "top-random"; }
    std::string operator()(const TopBottom&) const { return "top-bottom"; }
    std::string operator()(const PowK& p) const { return "pow:" + format_number(p.k); }
  };
  return std::visit(Visitor{}, s);
}

inline void validate_strategy(const FilterStrategy& s, int n) {
  auto in_range = [](double t) { return t >= -1.0 && t <= 1.0; };
  if (const auto* r = std::get_if<RankBased>(&s)) {
    require(static_cast<int>(r->weights.size()) == n, "invalid_strategy",
            "rank weights have length " + std::to_string(r->weights.size()) + " but N = " + std::to_string(n));
  } else if (const auto* t = std::get_if<Top>(&s)) {
    require(in_range(t->hi), "invalid_strategy", "top threshold must be in [-1, 1]");
  } else if (const auto* tr = std::get_if<TopRandom>(&s)) {
    require(in_range(tr->hi), "invalid_strategy", "top threshold must be in [-1, 1]");
    require(tr->p_keep >= 0.0 && tr->p_keep <= 1.0, "invalid_strategy", "p_keep must be in [0, 1]");
  } else if (const auto* tb = std::get_if<TopBottom>(&s)) {
    require(in_range(tb->hi) && in_range(tb->lo), "invalid_strategy", "thresholds must be in [-1, 1]");
    // The degenerate hi = -1, lo = 1 setting (keep everything) is allowed.
    require(tb->lo <= tb->hi || (tb->hi == -1.0 && tb->lo == 1.0), "invalid_strategy",
            "top-bottom needs lo <= hi");
  } else if (const auto* pk = std::get_if<PowK>(&s)) {
    require(pk->k >= 0.0 && std::isfinite(pk->k), "invalid_strategy", "pow-k exponent must be >= 0");
  }
}

struct ThresholdDefaults {
  double hi = 0.8;
  double lo = -0.8;
  double p_keep = 0.5;
};

// Parses "none", "bon", "br", "bw", "top", "top-random", "top-bottom",
// "pow:<k>" or "custom:<w1>,<w2>,...".
inline FilterStrategy parse_strategy(std::string_view spec, int n, const ThresholdDefaults& th = {}) {
  FilterStrategy s;
  if (spec == "none") {
    s = NoFilter{};
  } else if (spec == "bon") {
    s = RankBased{bon_weights(n), "bon"};
  } else if (spec == "br") {
    s = RankBased{br_weights(n), "br"};
  } else if (spec == "bw") {
    s = RankBased{bw_weights(n), "bw"};
  } else if (spec == "top") {
    s = Top{th.hi};
  } else if (spec == "top-random") {
    s = TopRandom{th.hi, th.p_keep};
  } else if (spec == "top-bottom") {
    s = TopBottom{th.hi, th.lo};
  } else if (spec.starts_with("pow:")) {
    const std::string arg(spec.substr(4));
    std::size_t used = 0;
    double k = -1.0;
    try {
      k = std::stod(arg, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == arg.size() && !arg.empty(), "invalid_strategy", "bad pow-k exponent in '" + std::string(spec) + "'");
    s = PowK{k};
  } else if (spec.starts_with("custom:")) {
    std::vector<double> w;
    std::stringstream ss{std::string(spec.substr(7))};
    for (std::string item; std::getline(ss, item, ',');) {
      try {
        w.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw Error("invalid_strategy", "bad weight '" + item + "'");
      }
    }
    s = RankBased{RankWeights(std::move(w)), "custom"};
  } else {
    throw Error("invalid_strategy", "unknown strategy '" + std::string(spec) + "'");
  }
  validate_strategy(s, n);
  return s;
}

// Stable descending sort by reward: ties keep the lower sample index first.
inline std::vector<std::size_t> rank_responses(std::span<const double> rewards) {
  std::vector<std::size_t> order(rewards.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rewards[a] > rewards[b]; });
  return order;
}

inline std::vector<std::size_t> rank_responses(std::span<const Trajectory> trajs, std::span<const double> rewards) {
  require(trajs.size() == rewards.size(), "length_mismatch", "one reward per trajectory required");
  return rank_responses(rewards);
}

struct Selection {
  std::size_t index = 0;  // candidate index in sampling order
  std::size_t rank = 0;   // 0 = highest reward
  double weight = 1.0;
};

// Applies a strategy to N already-scored candidates. `rng` is consumed only
// by RankBased (M categorical draws) and TopRandom (one draw per non-top
// candidate, in rank order).
inline std::vector<Selection> select_candidates(const FilterStrategy& strategy, std::span<const double> rewards, int m,
                                                Rng& rng) {
  const int n = static_cast<int>(rewards.size());
  require(n >= 1, "invalid_argument", "need at least one candidate");
  require(m >= 1, "invalid_argument", "M must be >= 1");
  validate_strategy(strategy, n);
  const auto order = rank_responses(rewards);
  std::vector<Selection> kept;
  auto keep = [&](std::size_t rank, double weight) { kept.push_back({order[rank], rank, weight}); };
  const auto N = static_cast<std::size_t>(n);

  if (std::holds_alternative<NoFilter>(strategy)) {
    for (std::size_t r = 0; r < N; ++r) keep(r, 1.0);
  } else if (const auto* rb = std::get_if<RankBased>(&strategy)) {
    for (int draw = 0; draw < m; ++draw) {
      const double u = uniform01(rng);
      double cum = 0.0;
      std::size_t rank = N - 1;
      while (rank > 0 && rb->weights[rank] == 0.0) --rank;  // last rank with mass
      for (std::size_t r = 0; r < N; ++r) {
        cum += rb->weights[r];
        if (u < cum) {
          rank = r;
          break;
        }
      }
      keep(rank, 1.0);
    }
  } else if (const auto* t = std::get_if<Top>(&strategy)) {
    for (std::size_t r = 0; r < N; ++r)
      if (rewards[order[r]] >= t->hi) keep(r, 1.0);
  } else if (const auto* tr = std::get_if<TopRandom>(&strategy)) {
    for (std::size_t r = 0; r < N; ++r) {
      if (rewards[order[r]] >= tr->hi) keep(r, 1.0);
      else if (uniform01(rng) < tr->p_keep) keep(r, 1.0);
    }
  } else if (const auto* tb = std::get_if<TopBottom>(&strategy)) {
    for (std::size_t r = 0; r < N; ++r) {
      const double x = rewards[order[r]];
      if (x >= tb->hi || x <= tb->lo) keep(r, 1.0);
    }
  } else if (const auto* pk = std::get_if<PowK>(&strategy)) {
    std::vector<double> mass(N);
    double total = 0.0;
    for (std::size_t r = 0; r < N; ++r) total += mass[r] = std::pow(std::abs(rewards[order[r]]), pk->k);
    for (std::size_t r = 0; r < N; ++r) {
      const double w = total > 0.0 ? static_cast<double>(n) * mass[r] / total : 1.0;
      if (w > 0.0) keep(r, w);
    }
  }
  return kept;
}

struct WeightedTrajectory {
  Trajectory traj;
  double weight = 1.0;
  std::size_t rank = 0;
  std::size_t index = 0;  // position in FilteredBatch::candidates
};

struct FilteredBatch {
  std::vector<WeightedTrajectory> kept;
  // Every sampled candidate with its reward and actual score filled.
  std::vector<Trajectory> candidates;
  int candidates_generated = 0;
  int rm_forward = 0;
};

// Identifies the RNG streams of one prompt within a run.
struct PromptKey {
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::uint64_t prompt_index = 0;
};

// Samples N candidates from the policy, scores each with the reward source
// (and the exact task scorer), ranks them and applies the strategy.
inline FilteredBatch filter_sample(const FilterStrategy& strategy, const Prompt& prompt, const PolicyParams& policy,
                                   const RewardSource& reward, const Task& task, int n, int m, const PromptKey& key) {
  require(n >= 1 && m >= 1, "invalid_argument", "N and M must be >= 1");
  validate_strategy(strategy, n);
  FilteredBatch batch;
  std::vector<double> rewards;
  for (int k = 0; k < n; ++k) {
    const auto draw = static_cast<std::uint64_t>(k);
    Trajectory t =
        sample_response(policy, task, prompt, derive_seed(key.seed, Stream::kRollout, key.iteration, key.prompt_index, draw));
    t.actual_score = task.score(prompt, t.tokens);
    t.scalar_reward = score_reward(reward, task, prompt, t.tokens, t.actual_score,
                                   derive_seed(key.seed, Stream::kReward, key.iteration, key.prompt_index, draw));
    rewards.push_back(t.scalar_reward);
    batch.candidates.push_back(std::move(t));
  }
  batch.candidates_generated = n;
  batch.rm_forward = n;
  Rng select = make_rng(derive_seed(key.seed, Stream::kSelect, key.iteration, key.prompt_index));
  for (const Selection& s : select_candidates(strategy, rewards, m, select))
    batch.kept.push_back({batch.candidates[s.index], s.weight, s.rank, s.index});
  return batch;
}

}  // namespace pfppo
