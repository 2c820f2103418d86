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

// PPO with KL-shaped per-token rewards, GAE, reward/advantage normalization,
// a clipped surrogate, and the outer loops for PPO-S, PPO-M and filtered PPO.
//
// Filtered samples are treated as ordinary on-policy data for pi_theta
// (straight-through): the filtration event adds no likelihood correction and
// only the per-sample weight enters the objectives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfppo/error.hpp"
#include "pfppo/filtration.hpp"
#include "pfppo/policy.hpp"
#include "pfppo/random.hpp"
#include "pfppo/reward_model.hpp"
#include "pfppo/tasks.hpp"

namespace pfppo {

struct PpoConfig {
  double beta = 0.01;
  double clip_eps = 0.2;
  double gamma = 1.0;
  double gae_lambda = 0.95;
  double policy_step = 0.05;
  double value_step = 0.1;
  int n_responses = 5;       // N
  int keep_per_prompt = 2;   // M, rank-based strategies only
  int ppo_epochs = 3;        // m
  int prompts_per_iter = 64; // n
  int iterations = 50;
  bool normalize_rewards = true;
  bool normalize_advantages = true;
  // Fit the critic on all N candidates instead of the filtered buffer.
  bool value_on_all_candidates = false;
  int eval_prompts = 256;
};

inline void validate(const PpoConfig& c) {
  require(c.beta >= 0.0, "invalid_config", "beta must be >= 0");
  require(c.clip_eps > 0.0, "invalid_config", "clip_eps must be > 0");
  require(c.gamma > 0.0 && c.gamma <= 1.0, "invalid_config", "gamma must be in (0, 1]");
  require(c.gae_lambda >= 0.0 && c.gae_lambda <= 1.0, "invalid_config", "gae_lambda must be in [0, 1]");
  require(c.policy_step > 0.0 && c.value_step > 0.0, "invalid_config", "step sizes must be > 0");
  require(c.n_responses >= 1 && c.keep_per_prompt >= 1, "invalid_config", "N and M must be >= 1");
  require(c.ppo_epochs >= 1 && c.prompts_per_iter >= 1 && c.iterations >= 0, "invalid_config",
          "ppo_epochs and prompts_per_iter must be >= 1, iterations >= 0");
  require(c.eval_prompts >= 1, "invalid_config", "eval_prompts must be >= 1");
}

// ---------------------------------------------------------------------------
// Per-trajectory signal processing.

// shaped_t = -beta (log pi - log pi_ref)_t, plus the sequence reward at the
// final token.
inline std::vector<double> shape_rewards(const Trajectory& traj, double beta) {
  require(!traj.tokens.empty(), "missing_fields", "trajectory has no tokens");
  require(traj.logprobs.size() == traj.size() && traj.ref_logprobs.size() == traj.size(), "missing_fields",
          "shape_rewards needs logprobs and ref_logprobs for every token");
  std::vector<double> r(traj.size());
  for (std::size_t t = 0; t < r.size(); ++t) r[t] = -beta * (traj.logprobs[t] - traj.ref_logprobs[t]);
  r.back() += traj.scalar_reward;
  return r;
}

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Terminal bootstrap value is 0.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                             double lambda) {
  require(rewards.size() == values.size() && !rewards.empty(), "missing_fields",
          "GAE needs one reward and one value per step");
  const std::size_t T = rewards.size();
  GaeResult out{std::vector<double>(T), std::vector<double>(T)};
  double running = 0.0;
  for (std::size_t i = T; i-- > 0;) {
    const double next_v = i + 1 < T ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next_v - values[i];
    running = delta + gamma * lambda * running;
    out.advantages[i] = running;
    out.returns[i] = running + values[i];
  }
  return out;
}

inline GaeResult compute_gae(const Trajectory& traj, double gamma, double lambda) {
  return compute_gae(traj.shaped_rewards, traj.values, gamma, lambda);
}

// Running statistics of one scalar stream (parallel-merge update).
struct NormalizerState {
  double mean = 0.0;
  double m2 = 0.0;  // sum of squared deviations
  std::int64_t count = 0;

  double variance() const { return count > 0 ? m2 / static_cast<double>(count) : 0.0; }

  void update(std::span<const double> xs) {
    if (xs.empty()) return;
    const auto nb = static_cast<double>(xs.size());
    const double mb = std::accumulate(xs.begin(), xs.end(), 0.0) / nb;
    double m2b = 0.0;
    for (double x : xs) m2b += (x - mb) * (x - mb);
    const auto na = static_cast<double>(count);
    const double delta = mb - mean;
    const double n = na + nb;
    mean += delta * nb / n;
    m2 += m2b + delta * delta * na * nb / n;
    count += static_cast<std::int64_t>(xs.size());
  }
};

enum class NormalizeMode { kPerBatch, kRunning };

inline constexpr double kNormalizeFloor = 1e-8;

// (x - mean) / max(std, 1e-8). A single value or a constant batch maps to 0.
inline std::vector<double> normalize_batch(std::span<const double> xs, NormalizerState& state, NormalizeMode mode) {
  require(!xs.empty(), "invalid_argument", "normalize_batch needs at least one value");
  std::vector<double> out(xs.size(), 0.0);
  double mean = 0.0, sd = 0.0;
  if (mode == NormalizeMode::kPerBatch) {
    if (xs.size() == 1 || std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs[0]; })) return out;
    NormalizerState batch;
    batch.update(xs);
    mean = batch.mean;
    sd = std::sqrt(batch.variance());
  } else {
    state.update(xs);
    if (state.count <= 1 || state.m2 == 0.0) return out;
    mean = state.mean;
    sd = std::sqrt(state.variance());
  }
  const double denom = std::max(sd, kNormalizeFloor);
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - mean) / denom;
  return out;
}

// ---------------------------------------------------------------------------
// Buffer and updates.

struct BufferEntry {
  Trajectory traj;
  double weight = 1.0;
  std::vector<double> behavior_logprobs;
};

// Behavior log-probabilities are copied from the trajectory when an entry is
// added and are read-only afterwards.
class RolloutBuffer {
 public:
  void add(Trajectory traj, double weight) {
    require(weight > 0.0, "invalid_argument", "sample weight must be > 0");
    require(traj.advantages.size() == traj.size() && traj.returns.size() == traj.size() &&
                traj.obs_ids.size() == traj.size() && traj.logprobs.size() == traj.size(),
            "missing_fields", "buffer entries need obs ids, logprobs, advantages and returns");
    std::vector<double> behavior = traj.logprobs;
    entries_.push_back({std::move(traj), weight, std::move(behavior)});
  }

  const std::vector<BufferEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Advantage normalization across every token in the buffer.
  void normalize_advantages() {
    std::vector<double> all;
    for (const auto& e : entries_) all.insert(all.end(), e.traj.advantages.begin(), e.traj.advantages.end());
    if (all.empty()) return;
    NormalizerState unused;
    const auto normed = normalize_batch(all, unused, NormalizeMode::kPerBatch);
    std::size_t k = 0;
    for (auto& e : entries_)
      for (double& a : e.traj.advantages) a = normed[k++];
  }

 private:
  std::vector<BufferEntry> entries_;
};

// Clipped surrogate
//   J = sum_e w_e sum_t min(rho_t A_t, clip(rho_t, 1 - eps, 1 + eps) A_t),
//   rho_t = pi(a_t|s_t) / pi_behavior(a_t|s_t),
// summed over entries. `mean` reports J / #entries.
struct SurrogateResult {
  double objective = 0.0;
  double mean = 0.0;
  PolicyParams grad;
};

inline SurrogateResult clipped_surrogate(const RolloutBuffer& buffer, const PolicyParams& params, double clip_eps,
                                         std::span<const std::size_t> order = {}) {
  require(!buffer.empty(), "empty_buffer", "policy update needs a non-empty buffer");
  SurrogateResult out{0.0, 0.0, PolicyParams::zeros(params.num_obs, params.vocab_size)};
  const auto& entries = buffer.entries();
  const std::size_t count = order.empty() ? entries.size() : order.size();
  for (std::size_t k = 0; k < count; ++k) {
    const BufferEntry& e = entries[order.empty() ? k : order[k]];
    for (std::size_t t = 0; t < e.traj.size(); ++t) {
      const ObsId obs = e.traj.obs_ids[t];
      const Token a = e.traj.tokens[t];
      const double adv = e.traj.advantages[t];
      const double rho = std::exp(log_prob(params, obs, a) - e.behavior_logprobs[t]);
      const double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps);
      out.objective += e.weight * std::min(rho * adv, clipped * adv);
      const bool clip_active = (adv > 0.0 && rho > 1.0 + clip_eps) || (adv < 0.0 && rho < 1.0 - clip_eps);
      if (clip_active || adv == 0.0) continue;
      const RowGradient g = grad_logprob(params, obs, a);
      auto row = out.grad.row(obs);
      const double scale = e.weight * adv * rho;
      for (std::size_t v = 0; v < row.size(); ++v) row[v] += scale * g.row[v];
    }
  }
  out.mean = out.objective / static_cast<double>(entries.size());
  return out;
}

struct PolicyUpdateResult {
  PolicyParams params;
  double mean_surrogate = 0.0;
};

// One gradient-ascent step on the clipped surrogate over every buffer entry.
// Entries are visited in an order shuffled by `shuffle_seed`.
inline PolicyUpdateResult clipped_policy_update(const RolloutBuffer& buffer, const PolicyParams& params,
                                                const PpoConfig& cfg, std::uint64_t shuffle_seed) {
  require(!buffer.empty(), "empty_buffer", "policy update needs a non-empty buffer");
  std::vector<std::size_t> order(buffer.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);
  SurrogateResult s = clipped_surrogate(buffer, params, cfg.clip_eps, order);
  PolicyUpdateResult out{params, s.mean};
  for (std::size_t i = 0; i < out.params.logits.size(); ++i) out.params.logits[i] += cfg.policy_step * s.grad.logits[i];
  return out;
}

// L = sum_e w_e sum_t 1/2 (V(s_t) - G_t)^2 and its gradient over the table.
struct ValueLossResult {
  double loss = 0.0;
  std::vector<double> grad;
  std::vector<double> visit_weight;  // sum of sample weights per observation
};

inline ValueLossResult value_loss(const RolloutBuffer& buffer, const ValueParams& vparams) {
  require(!buffer.empty(), "empty_buffer", "value update needs a non-empty buffer");
  ValueLossResult out{0.0, std::vector<double>(vparams.values.size(), 0.0),
                      std::vector<double>(vparams.values.size(), 0.0)};
  for (const auto& e : buffer.entries()) {
    for (std::size_t t = 0; t < e.traj.size(); ++t) {
      const auto obs = static_cast<std::size_t>(e.traj.obs_ids[t]);
      const double err = vparams.at(e.traj.obs_ids[t]) - e.traj.returns[t];
      out.loss += 0.5 * e.weight * err * err;
      out.grad[obs] += e.weight * err;
      out.visit_weight[obs] += e.weight;
    }
  }
  return out;
}

// Gradient step on the value loss, with each table entry's step divided by
// max(1, its total visit weight) so that frequently visited observations do
// not overshoot.
inline ValueParams value_update(const RolloutBuffer& buffer, const ValueParams& vparams, const PpoConfig& cfg) {
  const ValueLossResult l = value_loss(buffer, vparams);
  ValueParams out = vparams;
  for (std::size_t o = 0; o < out.values.size(); ++o)
    if (l.grad[o] != 0.0) out.values[o] -= cfg.value_step * l.grad[o] / std::max(1.0, l.visit_weight[o]);
  return out;
}

// ---------------------------------------------------------------------------
// KL to the reference policy.

inline double categorical_kl(std::span<const double> p, std::span<const double> q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return std::max(kl, 0.0);
}

// Exact KL(pi(.|o) || pi_ref(.|o)) averaged over the observations visited by
// greedy rollouts of pi on the prompts.
inline double kl_to_ref(const PolicyParams& params, const ReferencePolicy& ref, const Task& task,
                        std::span<const Prompt> prompts) {
  require(params.num_obs == ref.params().num_obs && params.vocab_size == ref.params().vocab_size, "shape_mismatch",
          "policy and reference shapes differ");
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& p : prompts) {
    const TokenSeq y = greedy_decode(params, task, p);
    for (ObsId o : observation_ids(task, p, y)) {
      total += categorical_kl(action_distribution(params, o), action_distribution(ref.params(), o));
      ++steps;
    }
  }
  return steps ? total / static_cast<double>(steps) : 0.0;
}

// ---------------------------------------------------------------------------
// Outer loop.

struct Variant {
  enum class Kind { kPpoS, kPpoM, kFiltered };
  Kind kind = Kind::kPpoM;
  FilterStrategy strategy = NoFilter{};
  std::string name = "ppo_m";
};

// Variant names: ppo_s, ppo_m, pf_bon, pf_br, pf_bw, top, top_random,
// top_bottom, pow_<k>, or pf:<strategy spec> for any parse_strategy string.
inline Variant parse_variant(std::string_view name, int n, const ThresholdDefaults& th = {}) {
  const std::string s(name);
  if (s == "ppo_s") return {Variant::Kind::kPpoS, NoFilter{}, s};
  if (s == "ppo_m") return {Variant::Kind::kPpoM, NoFilter{}, s};
  std::string spec;
  if (s == "pf_bon") spec = "bon";
  else if (s == "pf_br") spec = "br";
  else if (s == "pf_bw") spec = "bw";
  else if (s == "top") spec = "top";
  else if (s == "top_random") spec = "top-random";
  else if (s == "top_bottom") spec = "top-bottom";
  else if (s.starts_with("pow_")) spec = "pow:" + s.substr(4);
  else if (s.starts_with("pf:")) spec = s.substr(3);
  else throw Error("invalid_variant", "unknown variant '" + s + "'");
  return {Variant::Kind::kFiltered, parse_strategy(spec, n, th), s};
}

inline std::string variant_kind_name(Variant::Kind k) {
  switch (k) {
    case Variant::Kind::kPpoS: return "ppo_s";
    case Variant::Kind::kPpoM: return "ppo_m";
    case Variant::Kind::kFiltered: return "pf";
  }
  return "?";
}

struct TrainState {
  PolicyParams policy;
  ValueParams value;
  NormalizerState reward_norm;
};

struct IterationMetrics {
  int iteration = 0;
  std::string variant;
  double train_reward_mean = 0.0;
  double train_true_score = 0.0;
  double eval_reward_mean = 0.0;
  double eval_true_score = 0.0;
  double kl_to_ref = 0.0;
  double mean_surrogate = 0.0;
  std::int64_t queries_sampled = 0;
  std::int64_t responses_per_query = 0;
  std::int64_t candidates_generated = 0;
  std::int64_t rm_forward = 0;
  std::int64_t buffer_entries = 0;
  std::int64_t policy_updates = 0;
  std::int64_t value_updates = 0;
};

inline nlohmann::ordered_json to_json(const IterationMetrics& m) {
  return {{"iteration", m.iteration},
          {"variant", m.variant},
          {"train_reward_mean", m.train_reward_mean},
          {"train_true_score", m.train_true_score},
          {"eval_reward_mean", m.eval_reward_mean},
          {"eval_true_score", m.eval_true_score},
          {"kl_to_ref", m.kl_to_ref},
          {"mean_surrogate", m.mean_surrogate},
          {"queries_sampled", m.queries_sampled},
          {"responses_per_query", m.responses_per_query},
          {"candidates_generated", m.candidates_generated},
          {"rm_forward", m.rm_forward},
          {"buffer_entries", m.buffer_entries},
          {"policy_updates", m.policy_updates},
          {"value_updates", m.value_updates}};
}

inline IterationMetrics metrics_from_json(const nlohmann::json& j) {
  IterationMetrics m;
  try {
    m.iteration = j.at("iteration").get<int>();
    m.variant = j.at("variant").get<std::string>();
    m.train_reward_mean = j.at("train_reward_mean").get<double>();
    m.train_true_score = j.value("train_true_score", 0.0);
    m.eval_reward_mean = j.at("eval_reward_mean").get<double>();
    m.eval_true_score = j.at("eval_true_score").get<double>();
    m.kl_to_ref = j.at("kl_to_ref").get<double>();
    m.mean_surrogate = j.value("mean_surrogate", 0.0);
    m.queries_sampled = j.at("queries_sampled").get<std::int64_t>();
    m.responses_per_query = j.at("responses_per_query").get<std::int64_t>();
    m.candidates_generated = j.at("candidates_generated").get<std::int64_t>();
    m.rm_forward = j.at("rm_forward").get<std::int64_t>();
    m.buffer_entries = j.at("buffer_entries").get<std::int64_t>();
    m.policy_updates = j.at("policy_updates").get<std::int64_t>();
    m.value_updates = j.at("value_updates").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed_metrics", std::string("metrics record: ") + e.what());
  }
  return m;
}

// Read-only inputs shared by every iteration of a run.
struct RunContext {
  const Task& task;
  const ReferencePolicy& ref;
  const RewardSource& reward;
  const PpoConfig& cfg;
  std::uint64_t seed = 0;
};

inline std::vector<Prompt> eval_prompt_set(const Task& task, std::uint64_t seed, int count) {
  std::vector<Prompt> prompts;
  for (int i = 0; i < count; ++i)
    prompts.push_back(task.sample_prompt(derive_seed(seed, Stream::kEvalPrompt, static_cast<std::uint64_t>(i))));
  return prompts;
}

struct Evaluation {
  double true_score = 0.0;
  double reward_mean = 0.0;
};

// Greedy decoding on the given prompts; reward draws (oracle only) are keyed
// by (seed, tag, prompt index).
inline Evaluation evaluate_greedy(const PolicyParams& params, const Task& task, const RewardSource& reward,
                                  std::span<const Prompt> prompts, std::uint64_t seed, std::uint64_t tag) {
  Evaluation ev;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const TokenSeq y = greedy_decode(params, task, prompts[i]);
    const double s = task.score(prompts[i], y);
    ev.true_score += s;
    ev.reward_mean += score_reward(reward, task, prompts[i], y, s, derive_seed(seed, Stream::kEvalReward, tag, i));
  }
  if (!prompts.empty()) {
    ev.true_score /= static_cast<double>(prompts.size());
    ev.reward_mean /= static_cast<double>(prompts.size());
  }
  return ev;
}

struct IterationResult {
  TrainState state;
  IterationMetrics metrics;
};

namespace detail {

inline void prepare_for_buffer(Trajectory& t, double reward, const TrainState& state, const RunContext& ctx) {
  t.ref_logprobs = logprob_response(ctx.ref.params(), ctx.task, t.prompt, t.tokens);
  t.values.clear();
  for (ObsId o : t.obs_ids) t.values.push_back(state.value.at(o));
  const double raw = t.scalar_reward;
  t.scalar_reward = reward;
  t.shaped_rewards = shape_rewards(t, ctx.cfg.beta);
  t.scalar_reward = raw;
  GaeResult g = compute_gae(t, ctx.cfg.gamma, ctx.cfg.gae_lambda);
  t.advantages = std::move(g.advantages);
  t.returns = std::move(g.returns);
}

}  // namespace detail

// One collect-and-update iteration.
//   ppo_s: N*n prompts x 1 response, all kept.
//   ppo_m: n prompts x N responses, all kept.
//   pf:    n prompts x N responses, filtered by the variant's strategy.
// Reward normalization uses running statistics of every scored response.
inline IterationResult run_iteration(const Variant& variant, TrainState state, const RunContext& ctx, int iteration,
                                     std::span<const Prompt> eval_prompts) {
  const PpoConfig& cfg = ctx.cfg;
  validate(cfg);
  if (variant.kind == Variant::Kind::kFiltered) {
    require(cfg.n_responses >= 2, "invalid_config", "filtered variants need N >= 2");
    validate_strategy(variant.strategy, cfg.n_responses);
  }
  const bool single = variant.kind == Variant::Kind::kPpoS;
  const int queries = single ? cfg.n_responses * cfg.prompts_per_iter : cfg.prompts_per_iter;
  const int per_query = single ? 1 : cfg.n_responses;
  const FilterStrategy strategy = variant.kind == Variant::Kind::kFiltered ? variant.strategy : FilterStrategy{NoFilter{}};
  const auto iter = static_cast<std::uint64_t>(iteration);

  IterationMetrics m;
  m.iteration = iteration;
  m.variant = variant.name;
  m.queries_sampled = queries;
  m.responses_per_query = per_query;

  std::vector<FilteredBatch> batches;
  std::vector<double> all_rewards;
  for (int q = 0; q < queries; ++q) {
    const Prompt prompt = ctx.task.sample_prompt(derive_seed(ctx.seed, Stream::kPrompt, iter, static_cast<std::uint64_t>(q)));
    FilteredBatch b = filter_sample(strategy, prompt, state.policy, ctx.reward, ctx.task, per_query, cfg.keep_per_prompt,
                                    PromptKey{ctx.seed, iter, static_cast<std::uint64_t>(q)});
    m.candidates_generated += b.candidates_generated;
    m.rm_forward += b.rm_forward;
    for (const auto& c : b.candidates) all_rewards.push_back(c.scalar_reward);
    batches.push_back(std::move(b));
  }

  // Reward normalization: running stats over the scored stream, applied to
  // every candidate of this iteration.
  std::vector<double> normed = all_rewards;
  if (cfg.normalize_rewards) normed = normalize_batch(all_rewards, state.reward_norm, NormalizeMode::kRunning);

  RolloutBuffer buffer;
  RolloutBuffer critic_buffer;
  double reward_sum = 0.0, score_sum = 0.0;
  std::size_t k = 0;
  for (auto& b : batches) {
    std::vector<double> cand_norm(normed.begin() + static_cast<std::ptrdiff_t>(k),
                                  normed.begin() + static_cast<std::ptrdiff_t>(k + b.candidates.size()));
    for (auto& kept : b.kept) {
      reward_sum += kept.traj.scalar_reward;
      score_sum += kept.traj.actual_score;
      detail::prepare_for_buffer(kept.traj, cand_norm[kept.index], state, ctx);
      buffer.add(std::move(kept.traj), kept.weight);
    }
    if (cfg.value_on_all_candidates) {
      for (std::size_t i = 0; i < b.candidates.size(); ++i) {
        Trajectory t = b.candidates[i];
        detail::prepare_for_buffer(t, cand_norm[i], state, ctx);
        critic_buffer.add(std::move(t), 1.0);
      }
    }
    k += b.candidates.size();
  }
  m.buffer_entries = static_cast<std::int64_t>(buffer.size());
  if (!buffer.empty()) {
    m.train_reward_mean = reward_sum / static_cast<double>(buffer.size());
    m.train_true_score = score_sum / static_cast<double>(buffer.size());
    if (cfg.normalize_advantages) buffer.normalize_advantages();
    const RolloutBuffer& critic = cfg.value_on_all_candidates ? critic_buffer : buffer;
    double surrogate = 0.0;
    for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
      PolicyUpdateResult u = clipped_policy_update(
          buffer, state.policy, cfg, derive_seed(ctx.seed, Stream::kShuffle, iter, static_cast<std::uint64_t>(epoch)));
      state.policy = std::move(u.params);
      surrogate += u.mean_surrogate;
      state.value = value_update(critic, state.value, cfg);
    }
    m.mean_surrogate = surrogate / cfg.ppo_epochs;
    m.policy_updates = static_cast<std::int64_t>(buffer.size()) * cfg.ppo_epochs;
    m.value_updates = static_cast<std::int64_t>(critic.size()) * cfg.ppo_epochs;
  }

  const Evaluation ev = evaluate_greedy(state.policy, ctx.task, ctx.reward, eval_prompts, ctx.seed, iter);
  m.eval_true_score = ev.true_score;
  m.eval_reward_mean = ev.reward_mean;
  m.kl_to_ref = kl_to_ref(state.policy, ctx.ref, ctx.task, eval_prompts);
  return {std::move(state), std::move(m)};
}

}  // namespace pfppo
