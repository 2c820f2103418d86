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

// Reward sources: a linear Bradley-Terry reward model squashed by tanh, and a
// synthetic noisy oracle whose noise vanishes at both ends of the score range.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfppo/error.hpp"
#include "pfppo/policy.hpp"
#include "pfppo/random.hpp"
#include "pfppo/tasks.hpp"

namespace pfppo {

inline double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// log(1 + exp(-x)) without overflow.
inline double softplus_neg(double x) { return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

struct RewardModel {
  std::vector<double> weights;
  double bias = 0.0;

  static RewardModel zeros(std::size_t dim) { return RewardModel{std::vector<double>(dim, 0.0), 0.0}; }

  double linear(std::span<const double> features) const {
    require(features.size() == weights.size(), "feature_dim_mismatch",
            "reward model has dim " + std::to_string(weights.size()) + ", features have " +
                std::to_string(features.size()));
    double z = bias;
    for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * features[i];
    return z;
  }

  double operator()(std::span<const double> features) const { return std::tanh(linear(features)); }

  bool operator==(const RewardModel&) const = default;
};

inline double reward_of(const RewardModel& rm, const Task& task, const Prompt& p, std::span<const Token> y) {
  return rm(task.reward_features(p, y));
}

struct PreferencePair {
  Prompt prompt;
  TokenSeq winner;
  TokenSeq loser;

  bool operator==(const PreferencePair&) const = default;
};

// P(winner > loser) = logistic(R(winner) - R(loser)).
inline double preference_probability(const RewardModel& rm, const PreferencePair& pair, const Task& task) {
  return logistic(reward_of(rm, task, pair.prompt, pair.winner) - reward_of(rm, task, pair.prompt, pair.loser));
}

struct BtLossGrad {
  double loss = 0.0;
  std::vector<double> grad_weights;
  double grad_bias = 0.0;
};

namespace detail {

struct PairFeatures {
  std::vector<double> winner;
  std::vector<double> loser;
};

inline BtLossGrad bt_loss_and_grad(const RewardModel& rm, std::span<const PairFeatures> batch) {
  require(!batch.empty(), "empty_batch", "Bradley-Terry loss needs at least one pair");
  BtLossGrad out{0.0, std::vector<double>(rm.weights.size(), 0.0), 0.0};
  for (const auto& pf : batch) {
    const double rw = rm(pf.winner);
    const double rl = rm(pf.loser);
    const double delta = rw - rl;
    out.loss += softplus_neg(delta);
    // d(-log sigma(delta))/d delta = -sigma(-delta); d tanh(z)/dz = 1 - tanh^2.
    const double g = -logistic(-delta);
    const double gw = g * (1.0 - rw * rw);
    const double gl = -g * (1.0 - rl * rl);
    for (std::size_t i = 0; i < out.grad_weights.size(); ++i)
      out.grad_weights[i] += gw * pf.winner[i] + gl * pf.loser[i];
    out.grad_bias += gw + gl;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (double& v : out.grad_weights) v *= inv;
  out.grad_bias *= inv;
  return out;
}

inline std::vector<PairFeatures> pair_features(std::span<const PreferencePair> pairs, const Task& task) {
  std::vector<PairFeatures> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs)
    out.push_back({task.reward_features(pair.prompt, pair.winner), task.reward_features(pair.prompt, pair.loser)});
  return out;
}

}  // namespace detail

// Mean negative log-likelihood -log sigma(R_w - R_l) over the batch and its
// exact gradient with respect to (weights, bias).
inline BtLossGrad bt_loss_and_grad(const RewardModel& rm, std::span<const PreferencePair> batch, const Task& task) {
  require(!batch.empty(), "empty_batch", "Bradley-Terry loss needs at least one pair");
  const auto feats = detail::pair_features(batch, task);
  return detail::bt_loss_and_grad(rm, feats);
}

struct RewardTrainResult {
  RewardModel model;
  // Loss before each epoch's step, plus the final loss.
  std::vector<double> loss_history;
};

// Full-batch gradient descent from the all-zero model.
inline RewardTrainResult train_reward_model(std::span<const PreferencePair> pairs, const Task& task, int epochs,
                                            double step) {
  require(!pairs.empty(), "empty_dataset", "reward model training needs at least one pair");
  require(epochs >= 0 && step > 0.0, "invalid_config", "epochs must be >= 0 and step > 0");
  const auto feats = detail::pair_features(pairs, task);
  RewardTrainResult result{RewardModel::zeros(task.feature_dim()), {}};
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const BtLossGrad g = detail::bt_loss_and_grad(result.model, feats);
    result.loss_history.push_back(g.loss);
    for (std::size_t i = 0; i < g.grad_weights.size(); ++i) result.model.weights[i] -= step * g.grad_weights[i];
    result.model.bias -= step * g.grad_bias;
  }
  result.loss_history.push_back(detail::bt_loss_and_grad(result.model, feats).loss);
  return result;
}

// Unit-cost Levenshtein distance over arbitrary sequences, two-row DP.
template <typename Seq>
std::size_t edit_distance(const Seq& a, const Seq& b) {
  const std::size_t n = std::size(a), m = std::size(b);
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// Index pair (i < j) with maximal edit distance; ties go to the
// lexicographically smallest pair.
inline std::pair<std::size_t, std::size_t> max_edit_distance_pair(std::span<const TokenSeq> responses) {
  require(responses.size() >= 2, "invalid_argument", "need at least two responses");
  std::pair<std::size_t, std::size_t> best{0, 1};
  std::size_t best_d = edit_distance(responses[0], responses[1]);
  for (std::size_t i = 0; i < responses.size(); ++i)
    for (std::size_t j = i + 1; j < responses.size(); ++j) {
      const std::size_t d = edit_distance(responses[i], responses[j]);
      if (d > best_d) {
        best_d = d;
        best = {i, j};
      }
    }
  return best;
}

// For each prompt: sample n_responses from the policy, keep the pair at
// maximal edit distance, orient it by the exact task score (equal scores drop
// the prompt), then flip the orientation with probability flip_rate.
inline std::vector<PreferencePair> build_preference_pairs(const Task& task, const PolicyParams& policy,
                                                          std::span<const Prompt> prompts, int n_responses,
                                                          std::uint64_t seed, double flip_rate = 0.05) {
  require(n_responses >= 2, "invalid_argument", "n_responses must be >= 2");
  require(flip_rate >= 0.0 && flip_rate <= 1.0, "invalid_argument", "flip_rate must be in [0, 1]");
  std::vector<PreferencePair> pairs;
  for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
    std::vector<TokenSeq> responses;
    for (int k = 0; k < n_responses; ++k)
      responses.push_back(
          sample_response(policy, task, prompts[pi], derive_seed(seed, Stream::kPairs, pi, static_cast<std::uint64_t>(k)))
              .tokens);
    const auto [i, j] = max_edit_distance_pair(responses);
    const double si = task.score(prompts[pi], responses[i]);
    const double sj = task.score(prompts[pi], responses[j]);
    Rng flip = make_rng(derive_seed(seed, Stream::kLabelFlip, pi));
    const bool flipped = uniform01(flip) < flip_rate;
    if (si == sj) continue;
    PreferencePair pair{prompts[pi], si > sj ? responses[i] : responses[j], si > sj ? responses[j] : responses[i]};
    if (flipped) std::swap(pair.winner, pair.loser);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Noisy oracle: reward = clamp(2 s - 1 + eps, -1, 1),
// eps ~ Normal(0, (sigma_max * 4 s (1 - s))^2).

struct NoisyOracleConfig {
  double sigma_max = 0.5;
};

inline double noise_std(const NoisyOracleConfig& cfg, double score) { return cfg.sigma_max * 4.0 * score * (1.0 - score); }

inline double noisy_oracle_reward(const NoisyOracleConfig& cfg, double score, Rng& draw) {
  require(score >= 0.0 && score <= 1.0, "invalid_argument", "actual score must be in [0, 1]");
  const double eps = noise_std(cfg, score) * standard_normal(draw);
  return std::clamp(2.0 * score - 1.0 + eps, -1.0, 1.0);
}

using RewardSource = std::variant<RewardModel, NoisyOracleConfig>;

// One reward-model forward pass. The oracle consumes its own draw stream.
inline double score_reward(const RewardSource& source, const Task& task, const Prompt& p, std::span<const Token> y,
                           double actual_score, std::uint64_t draw_seed) {
  if (const auto* rm = std::get_if<RewardModel>(&source)) return reward_of(*rm, task, p, y);
  Rng draw = make_rng(draw_seed);
  return noisy_oracle_reward(std::get<NoisyOracleConfig>(source), actual_score, draw);
}

// ---------------------------------------------------------------------------
// Reward model file:
//
//   PFPPO-RM 1
//   squash tanh
//   dim <d>
//   bias <b>
//   weights <w_1> ... <w_d>

inline void save_reward_model(const std::string& path, const RewardModel& rm) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "io", "cannot open '" + path + "' for writing");
  out << std::setprecision(17) << "PFPPO-RM 1\nsquash tanh\ndim " << rm.weights.size() << "\nbias " << rm.bias
      << "\nweights";
  for (double w : rm.weights) out << ' ' << w;
  out << '\n';
  require(static_cast<bool>(out), "io", "write failed for '" + path + "'");
}

inline RewardModel load_reward_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "io", "cannot open '" + path + "'");
  std::string magic, version, key, squash;
  std::size_t dim = 0;
  RewardModel rm;
  in >> magic >> version >> key >> squash;
  require(magic == "PFPPO-RM" && version == "1" && key == "squash", "bad_format", "'" + path + "' is not a reward model");
  require(squash == "tanh", "bad_format", "unsupported squash '" + squash + "'");
  in >> key >> dim;
  require(key == "dim", "bad_format", "missing dim");
  in >> key >> rm.bias;
  require(key == "bias", "bad_format", "missing bias");
  in >> key;
  require(key == "weights", "bad_format", "missing weights");
  rm.weights.resize(dim);
  for (double& w : rm.weights) in >> w;
  require(static_cast<bool>(in), "bad_format", "truncated reward model '" + path + "'");
  return rm;
}

inline nlohmann::json to_json(const PreferencePair& pair) {
  return {{"task", pair.prompt.task},
          {"prompt", pair.prompt.context},
          {"winner_tokens", pair.winner},
          {"loser_tokens", pair.loser}};
}

inline PreferencePair pair_from_json(const nlohmann::json& j) {
  try {
    return PreferencePair{Prompt{j.at("task").get<std::string>(), j.at("prompt").get<TokenSeq>()},
                          j.at("winner_tokens").get<TokenSeq>(), j.at("loser_tokens").get<TokenSeq>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad_format", std::string("preference record: ") + e.what());
  }
}

inline void save_pairs_jsonl(const std::string& path, std::span<const PreferencePair> pairs) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "io", "cannot open '" + path + "' for writing");
  for (const auto& pair : pairs) out << to_json(pair).dump() << '\n';
}

inline std::vector<PreferencePair> load_pairs_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "io", "cannot open '" + path + "'");
  std::vector<PreferencePair> pairs;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("bad_format", std::string("preference record: ") + e.what());
    }
    pairs.push_back(pair_from_json(j));
  }
  return pairs;
}

}  // namespace pfppo
