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

// Reward reliability diagnostics: reward-binned actual scores, the R^2 of a
// line fitted through the bin means, and per-iteration compute accounting.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfppo/error.hpp"
#include "pfppo/filtration.hpp"
#include "pfppo/ppo.hpp"
#include "pfppo/reward_model.hpp"
#include "pfppo/tasks.hpp"

namespace pfppo {

struct ScoredResponse {
  Prompt prompt;
  TokenSeq response;
  double reward = 0.0;
  double actual_score = 0.0;
  double weight = 1.0;  // sample weight carried over from filtration
};

struct ReliabilityBin {
  double reward_lo = 0.0;
  double reward_hi = 0.0;
  double mean_reward = 0.0;
  double mean_actual_score = 0.0;
  double actual_score_sd = 0.0;
  int count = 0;
};

struct BinnedSamples {
  std::vector<ReliabilityBin> bins;
  std::size_t dropped = 0;  // samples in bins below min_bin_count
};

struct BinningConfig {
  double bin_width = 0.05;
  int min_bin_count = 5;
};

// Fixed-width bins over [-1, 1]; reward 1.0 falls in the last bin. Means are
// weighted by each sample's weight.
inline BinnedSamples group_by_reward(std::span<const ScoredResponse> samples, const BinningConfig& cfg = {}) {
  require(cfg.bin_width > 0.0, "invalid_argument", "bin_width must be > 0");
  require(!samples.empty(), "empty_input", "no samples to group");
  const int nbins = static_cast<int>(std::ceil(2.0 / cfg.bin_width - 1e-9));
  struct Acc {
    double w = 0, wr = 0, ws = 0, wss = 0;
    int count = 0;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(nbins));
  for (const auto& s : samples) {
    require(s.reward >= -1.0 && s.reward <= 1.0, "invalid_argument", "reward outside [-1, 1]");
    int b = static_cast<int>(std::floor((s.reward + 1.0) / cfg.bin_width));
    b = std::clamp(b, 0, nbins - 1);
    Acc& a = acc[static_cast<std::size_t>(b)];
    a.w += s.weight;
    a.wr += s.weight * s.reward;
    a.ws += s.weight * s.actual_score;
    a.wss += s.weight * s.actual_score * s.actual_score;
    ++a.count;
  }
  BinnedSamples out;
  for (int b = 0; b < nbins; ++b) {
    const Acc& a = acc[static_cast<std::size_t>(b)];
    if (a.count == 0) continue;
    if (a.count < cfg.min_bin_count || a.w <= 0.0) {
      out.dropped += static_cast<std::size_t>(a.count);
      continue;
    }
    ReliabilityBin bin;
    bin.reward_lo = -1.0 + b * cfg.bin_width;
    bin.reward_hi = std::min(1.0, -1.0 + (b + 1) * cfg.bin_width);
    bin.mean_reward = a.wr / a.w;
    bin.mean_actual_score = a.ws / a.w;
    bin.actual_score_sd = std::sqrt(std::max(0.0, a.wss / a.w - bin.mean_actual_score * bin.mean_actual_score));
    bin.count = a.count;
    out.bins.push_back(bin);
  }
  return out;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double ss_res = 0.0;
  double ss_tot = 0.0;
  // Empty when SS_tot = 0.
  std::optional<double> r2;
};

// Unweighted OLS of mean_actual_score on mean_reward, one point per bin.
inline LineFit fit_bins(std::span<const ReliabilityBin> bins) {
  require(bins.size() >= 3, "too_few_bins", "R^2 needs at least 3 bins, got " + std::to_string(bins.size()));
  const auto n = static_cast<double>(bins.size());
  double mx = 0, my = 0;
  for (const auto& b : bins) {
    mx += b.mean_reward;
    my += b.mean_actual_score;
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  LineFit fit;
  for (const auto& b : bins) {
    const double dx = b.mean_reward - mx, dy = b.mean_actual_score - my;
    sxx += dx * dx;
    sxy += dx * dy;
    fit.ss_tot += dy * dy;
  }
  fit.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  fit.intercept = my - fit.slope * mx;
  for (const auto& b : bins) {
    const double e = b.mean_actual_score - (fit.intercept + fit.slope * b.mean_reward);
    fit.ss_res += e * e;
  }
  if (fit.ss_tot > 0.0) fit.r2 = 1.0 - fit.ss_res / fit.ss_tot;
  return fit;
}

inline std::optional<double> compute_r2(std::span<const ReliabilityBin> bins) { return fit_bins(bins).r2; }

struct ReliabilityReport {
  std::string strategy;
  std::vector<ReliabilityBin> bins;
  std::optional<double> r2;
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t samples = 0;
  std::size_t dropped = 0;
  std::string diagnostic;  // set when r2 is undefined
};

// Pools the kept samples of filter_sample over n_prompts prompts and fits the
// binned reward/score relation.
inline std::vector<ScoredResponse> collect_filtered_samples(const FilterStrategy& strategy, const PolicyParams& policy,
                                                            const RewardSource& reward, const Task& task, int n_prompts,
                                                            int n, int m, std::uint64_t seed) {
  std::vector<ScoredResponse> pooled;
  for (int i = 0; i < n_prompts; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    const Prompt p = task.sample_prompt(derive_seed(seed, Stream::kPrompt, 0, idx));
    const FilteredBatch b = filter_sample(strategy, p, policy, reward, task, n, m, PromptKey{seed, 0, idx});
    for (const auto& k : b.kept)
      pooled.push_back({p, k.traj.tokens, k.traj.scalar_reward, k.traj.actual_score, k.weight});
  }
  return pooled;
}

inline ReliabilityReport report_from_samples(std::string strategy, std::span<const ScoredResponse> samples,
                                             const BinningConfig& binning = {}) {
  ReliabilityReport rep;
  rep.strategy = std::move(strategy);
  rep.samples = samples.size();
  if (samples.empty()) {
    rep.diagnostic = "no samples kept";
    return rep;
  }
  BinnedSamples binned = group_by_reward(samples, binning);
  rep.bins = std::move(binned.bins);
  rep.dropped = binned.dropped;
  if (rep.bins.size() < 3) {
    rep.diagnostic = "only " + std::to_string(rep.bins.size()) + " bins reach min_bin_count";
    return rep;
  }
  const LineFit fit = fit_bins(rep.bins);
  rep.slope = fit.slope;
  rep.intercept = fit.intercept;
  rep.r2 = fit.r2;
  if (!rep.r2) rep.diagnostic = "constant mean actual score across bins";
  return rep;
}

inline ReliabilityReport reliability_report(const FilterStrategy& strategy, const PolicyParams& policy,
                                            const RewardSource& reward, const Task& task, int n_prompts, int n, int m,
                                            std::uint64_t seed, const BinningConfig& binning = {}) {
  const auto samples = collect_filtered_samples(strategy, policy, reward, task, n_prompts, n, m, seed);
  return report_from_samples(strategy_name(strategy), samples, binning);
}

inline nlohmann::ordered_json to_json(const ReliabilityReport& rep) {
  nlohmann::ordered_json j;
  j["strategy"] = rep.strategy;
  j["r2"] = rep.r2 ? nlohmann::ordered_json(*rep.r2) : nlohmann::ordered_json(nullptr);
  j["slope"] = rep.slope;
  j["intercept"] = rep.intercept;
  j["samples"] = rep.samples;
  j["dropped"] = rep.dropped;
  if (!rep.diagnostic.empty()) j["diagnostic"] = rep.diagnostic;
  j["bins"] = nlohmann::ordered_json::array();
  for (const auto& b : rep.bins)
    j["bins"].push_back({{"bin_lo", b.reward_lo},
                         {"bin_hi", b.reward_hi},
                         {"mean_reward", b.mean_reward},
                         {"mean_score", b.mean_actual_score},
                         {"score_sd", b.actual_score_sd},
                         {"count", b.count}});
  return j;
}

// bin_lo,bin_hi,mean_reward,mean_score,count
inline void write_reliability_csv(const std::string& path, std::span<const ReliabilityBin> bins) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "io", "cannot open '" + path + "' for writing");
  out << "bin_lo,bin_hi,mean_reward,mean_score,count\n" << std::setprecision(17);
  for (const auto& b : bins)
    out << b.reward_lo << ',' << b.reward_hi << ',' << b.mean_reward << ',' << b.mean_actual_score << ',' << b.count
        << '\n';
}

// ---------------------------------------------------------------------------
// Compute accounting.

struct ComputeLedger {
  std::int64_t iterations = 0;
  std::int64_t queries_sampled = 0;
  std::int64_t responses_per_query = 0;
  std::int64_t rm_forward = 0;
  std::int64_t candidates_generated = 0;
  std::int64_t policy_updates = 0;
  std::int64_t value_updates = 0;
};

inline nlohmann::ordered_json to_json(const ComputeLedger& l) {
  return {{"iterations", l.iterations},         {"queries_sampled", l.queries_sampled},
          {"responses_per_query", l.responses_per_query}, {"rm_forward", l.rm_forward},
          {"candidates_generated", l.candidates_generated}, {"policy_updates", l.policy_updates},
          {"value_updates", l.value_updates}};
}

// Expected per-iteration shape of one variant.
struct AccountingContract {
  Variant::Kind kind = Variant::Kind::kPpoM;
  bool rank_based = false;  // fixed M kept per prompt
  int prompts_per_iter = 0; // n
  int n_responses = 0;      // N
  int keep_per_prompt = 0;  // M
  int ppo_epochs = 0;       // m
  bool value_on_all_candidates = false;
};

inline AccountingContract contract_for(const Variant& v, const PpoConfig& cfg) {
  return {v.kind, std::holds_alternative<RankBased>(v.strategy) && v.kind == Variant::Kind::kFiltered,
          cfg.prompts_per_iter, cfg.n_responses, cfg.keep_per_prompt, cfg.ppo_epochs, cfg.value_on_all_candidates};
}

// Sums the per-iteration counters and checks them against the contract:
//   ppo_s:  N*n queries x 1 response; policy updates N*n*m
//   ppo_m:  n queries x N responses;  policy updates N*n*m
//   pf:     n queries x N responses;  policy updates M*n*m (rank-based) or
//           kept*m (threshold / reweighting)
//   all:    N*n reward-model scores per iteration
inline ComputeLedger compute_accounting(std::span<const IterationMetrics> stream, const AccountingContract& c) {
  require(!stream.empty(), "malformed_stream", "empty metrics stream");
  ComputeLedger l;
  const std::int64_t n = c.prompts_per_iter, N = c.n_responses, M = c.keep_per_prompt, m = c.ppo_epochs;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const IterationMetrics& it = stream[i];
    auto fail = [&](const std::string& what) {
      throw Error("malformed_stream", "iteration " + std::to_string(it.iteration) + ": " + what);
    };
    if (it.iteration != static_cast<int>(i) + 1) fail("iterations must run 1, 2, ...");
    if (it.queries_sampled < 0 || it.rm_forward < 0 || it.policy_updates < 0 || it.value_updates < 0 ||
        it.candidates_generated < 0 || it.buffer_entries < 0)
      fail("negative counter");
    const bool single = c.kind == Variant::Kind::kPpoS;
    if (it.queries_sampled != (single ? N * n : n)) fail("queries_sampled breaks the variant contract");
    if (it.responses_per_query != (single ? 1 : N)) fail("responses_per_query breaks the variant contract");
    if (it.rm_forward != N * n || it.candidates_generated != N * n) fail("reward-model scores must be N*n");
    const std::int64_t expected_updates =
        c.kind == Variant::Kind::kFiltered ? (c.rank_based ? M * n * m : it.buffer_entries * m) : N * n * m;
    if (it.policy_updates != expected_updates) fail("policy_updates breaks the variant contract");
    const std::int64_t expected_value =
        c.value_on_all_candidates ? (it.buffer_entries > 0 ? N * n * m : 0) : expected_updates;
    if (it.value_updates != expected_value) fail("value_updates breaks the variant contract");
    l.iterations += 1;
    l.queries_sampled += it.queries_sampled;
    l.responses_per_query = it.responses_per_query;
    l.rm_forward += it.rm_forward;
    l.candidates_generated += it.candidates_generated;
    l.policy_updates += it.policy_updates;
    l.value_updates += it.value_updates;
  }
  return l;
}

}  // namespace pfppo
