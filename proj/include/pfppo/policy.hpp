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

// Tabular softmax policy and tabular value function.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pfppo/error.hpp"
#include "pfppo/random.hpp"
#include "pfppo/tasks.hpp"

namespace pfppo {

// Logits table [O x V], row-major.
struct PolicyParams {
  int num_obs = 0;
  int vocab_size = 0;
  std::vector<double> logits;

  static PolicyParams zeros(int num_obs, int vocab_size) {
    return PolicyParams{num_obs, vocab_size,
                        std::vector<double>(static_cast<std::size_t>(num_obs) * vocab_size, 0.0)};
  }
  static PolicyParams zeros(const Task& task) { return zeros(task.observation_count(), task.vocab().size()); }

  std::span<double> row(ObsId obs) {
    check_obs(obs);
    return {logits.data() + static_cast<std::size_t>(obs) * vocab_size, static_cast<std::size_t>(vocab_size)};
  }
  std::span<const double> row(ObsId obs) const {
    check_obs(obs);
    return {logits.data() + static_cast<std::size_t>(obs) * vocab_size, static_cast<std::size_t>(vocab_size)};
  }

  bool operator==(const PolicyParams&) const = default;

 private:
  void check_obs(ObsId obs) const {
    require(obs >= 0 && obs < num_obs, "obs_out_of_range",
            "observation id " + std::to_string(obs) + " outside [0, " + std::to_string(num_obs) + ")");
  }
};

struct ValueParams {
  std::vector<double> values;

  static ValueParams zeros(int num_obs) { return ValueParams{std::vector<double>(static_cast<std::size_t>(num_obs), 0.0)}; }

  double at(ObsId obs) const {
    require(obs >= 0 && static_cast<std::size_t>(obs) < values.size(), "obs_out_of_range",
            "value lookup outside table");
    return values[static_cast<std::size_t>(obs)];
  }

  bool operator==(const ValueParams&) const = default;
};

// The frozen reference policy. Only const access to the table is exposed.
class ReferencePolicy {
 public:
  ReferencePolicy() = default;
  explicit ReferencePolicy(PolicyParams params) : params_(std::move(params)) {}

  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
};

struct Trajectory {
  Prompt prompt;
  TokenSeq tokens;
  std::vector<ObsId> obs_ids;
  std::vector<double> logprobs;
  std::vector<double> ref_logprobs;
  double scalar_reward = 0.0;
  double actual_score = 0.0;
  std::vector<double> shaped_rewards;
  std::vector<double> values;
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return tokens.size(); }
};

inline double log_sum_exp(std::span<const double> xs) {
  const double hi = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> xs) {
  const double hi = *std::max_element(xs.begin(), xs.end());
  std::vector<double> p(xs.size());
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += p[i] = std::exp(xs[i] - hi);
  for (double& v : p) v /= s;
  return p;
}

inline std::vector<double> action_distribution(const PolicyParams& params, ObsId obs) {
  return softmax(params.row(obs));
}

inline double log_prob(const PolicyParams& params, ObsId obs, Token token) {
  auto row = params.row(obs);
  require(token >= 0 && token < params.vocab_size, "token_out_of_range", "token id outside vocabulary");
  return row[static_cast<std::size_t>(token)] - log_sum_exp(row);
}

// Lowest index wins ties.
inline Token argmax_token(std::span<const double> row) {
  return static_cast<Token>(std::max_element(row.begin(), row.end()) - row.begin());
}

inline void check_shape(const PolicyParams& params, const Task& task) {
  require(params.num_obs == task.observation_count() && params.vocab_size == task.vocab().size(), "shape_mismatch",
          "policy table shape does not match task '" + std::string(task.name()) + "'");
}

// Samples y ~ pi(.|c). eos is recorded as the final token; generation also
// stops at the task's response cap.
inline Trajectory sample_response(const PolicyParams& params, const Task& task, const Prompt& prompt,
                                  std::uint64_t seed) {
  check_shape(params, task);
  Rng rng = make_rng(seed);
  Trajectory traj;
  traj.prompt = prompt;
  const std::size_t cap = task.max_response_len(prompt);
  const Token eos = task.vocab().eos;
  while (traj.tokens.size() < cap) {
    const ObsId obs = task.encode_observation(prompt, traj.tokens);
    const std::vector<double> probs = action_distribution(params, obs);
    const double u = uniform01(rng);
    Token token = static_cast<Token>(probs.size() - 1);
    double cum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      cum += probs[i];
      if (u < cum) {
        token = static_cast<Token>(i);
        break;
      }
    }
    traj.obs_ids.push_back(obs);
    traj.logprobs.push_back(log_prob(params, obs, token));
    traj.tokens.push_back(token);
    if (token == eos) break;
  }
  return traj;
}

inline TokenSeq greedy_decode(const PolicyParams& params, const Task& task, const Prompt& prompt) {
  check_shape(params, task);
  TokenSeq y;
  const std::size_t cap = task.max_response_len(prompt);
  while (y.size() < cap) {
    const Token token = argmax_token(params.row(task.encode_observation(prompt, y)));
    y.push_back(token);
    if (token == task.vocab().eos) break;
  }
  return y;
}

inline std::vector<ObsId> observation_ids(const Task& task, const Prompt& prompt, std::span<const Token> y) {
  std::vector<ObsId> ids;
  ids.reserve(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) ids.push_back(task.encode_observation(prompt, y.first(t)));
  return ids;
}

inline std::vector<double> logprob_response(const PolicyParams& params, const Task& task, const Prompt& prompt,
                                            std::span<const Token> y) {
  check_shape(params, task);
  std::vector<double> out;
  out.reserve(y.size());
  for (std::size_t t = 0; t < y.size(); ++t)
    out.push_back(log_prob(params, task.encode_observation(prompt, y.first(t)), y[t]));
  return out;
}

// d log pi(token|obs) / d logits: e_token - p(.|obs) on row `obs`, zero elsewhere.
struct RowGradient {
  ObsId obs = 0;
  std::vector<double> row;
};

inline RowGradient grad_logprob(const PolicyParams& params, ObsId obs, Token token) {
  require(token >= 0 && token < params.vocab_size, "token_out_of_range", "token id outside vocabulary");
  RowGradient g{obs, action_distribution(params, obs)};
  for (double& v : g.row) v = -v;
  g.row[static_cast<std::size_t>(token)] += 1.0;
  return g;
}

// ---------------------------------------------------------------------------
// Reference policy by supervised pre-training.
//
// Demonstrations follow the task oracle, except that each step is replaced
// by a uniformly random token with probability `corruption`; the demo then
// continues from the state it actually reached. Training maximizes, for every
// visited observation, the mean log-likelihood of the demonstration steps
// taken there, with plain full-batch gradient ascent.

struct SftConfig {
  int demos = 256;
  double corruption = 0.2;
  int epochs = 200;
  double step = 0.1;
};

struct Demonstration {
  Prompt prompt;
  TokenSeq tokens;
};

inline std::vector<Demonstration> make_demonstrations(const Task& task, const SftConfig& cfg, std::uint64_t seed) {
  std::vector<Demonstration> demos;
  std::uniform_int_distribution<int> any_token(0, task.vocab().size() - 1);
  for (int i = 0; i < cfg.demos; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    Demonstration d{task.sample_prompt(derive_seed(seed, Stream::kSft, idx, 0)), {}};
    Rng rng = make_rng(derive_seed(seed, Stream::kSft, idx, 1));
    const std::size_t cap = task.max_response_len(d.prompt);
    while (d.tokens.size() < cap) {
      Token t = task.oracle_next_token(d.prompt, d.tokens);
      if (uniform01(rng) < cfg.corruption) t = any_token(rng);
      d.tokens.push_back(t);
      if (t == task.vocab().eos) break;
    }
    demos.push_back(std::move(d));
  }
  return demos;
}

inline ReferencePolicy train_sft(const Task& task, const SftConfig& cfg, std::uint64_t seed) {
  const auto demos = make_demonstrations(task, cfg, seed);
  // Per-observation token counts; the gradient on a row is
  // counts / visits - softmax(row).
  const int V = task.vocab().size();
  std::vector<double> counts(static_cast<std::size_t>(task.observation_count()) * V, 0.0);
  std::vector<double> visits(static_cast<std::size_t>(task.observation_count()), 0.0);
  for (const auto& d : demos) {
    const auto ids = observation_ids(task, d.prompt, d.tokens);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      counts[static_cast<std::size_t>(ids[t]) * V + d.tokens[t]] += 1.0;
      visits[static_cast<std::size_t>(ids[t])] += 1.0;
    }
  }
  PolicyParams params = PolicyParams::zeros(task);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (ObsId o = 0; o < params.num_obs; ++o) {
      const double n = visits[static_cast<std::size_t>(o)];
      if (n == 0.0) continue;
      const auto p = action_distribution(params, o);
      auto row = params.row(o);
      for (int v = 0; v < V; ++v)
        row[static_cast<std::size_t>(v)] += cfg.step * (counts[static_cast<std::size_t>(o) * V + v] / n - p[static_cast<std::size_t>(v)]);
    }
  }
  return ReferencePolicy(std::move(params));
}

// ---------------------------------------------------------------------------
// Table files.
//
//   PFPPO-TABLE 1
//   kind <policy|value>
//   shape <rows> <cols>
//   <rows lines of cols space-separated values, %.17g>
//
// Values round-trip exactly; identical tables produce identical bytes.

namespace detail {

inline void write_table(const std::string& path, const std::string& kind, int rows, int cols,
                        std::span<const double> data) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "io", "cannot open '" + path + "' for writing");
  out << "PFPPO-TABLE 1\nkind " << kind << "\nshape " << rows << ' ' << cols << '\n';
  out << std::setprecision(17);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c) out << ' ';
      out << data[static_cast<std::size_t>(r) * cols + c];
    }
    out << '\n';
  }
  require(static_cast<bool>(out), "io", "write failed for '" + path + "'");
}

inline std::vector<double> read_table(const std::string& path, const std::string& kind, int& rows, int& cols) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "io", "cannot open '" + path + "'");
  std::string magic, version, key, got_kind;
  in >> magic >> version >> key >> got_kind;
  require(magic == "PFPPO-TABLE" && version == "1" && key == "kind", "bad_format", "'" + path + "' is not a table file");
  require(got_kind == kind, "bad_format", "'" + path + "' holds a " + got_kind + " table, expected " + kind);
  in >> key >> rows >> cols;
  require(key == "shape" && in && rows >= 0 && cols > 0, "bad_format", "bad shape line in '" + path + "'");
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  for (double& v : data) in >> v;
  require(static_cast<bool>(in), "bad_format", "truncated table in '" + path + "'");
  return data;
}

}  // namespace detail

inline void save_policy(const std::string& path, const PolicyParams& p) {
  detail::write_table(path, "policy", p.num_obs, p.vocab_size, p.logits);
}

inline PolicyParams load_policy(const std::string& path) {
  PolicyParams p;
  p.logits = detail::read_table(path, "policy", p.num_obs, p.vocab_size);
  return p;
}

inline void save_values(const std::string& path, const ValueParams& v) {
  detail::write_table(path, "value", static_cast<int>(v.values.size()), 1, v.values);
}

inline ValueParams load_values(const std::string& path) {
  int rows = 0, cols = 0;
  ValueParams v{detail::read_table(path, "value", rows, cols)};
  require(cols == 1, "bad_format", "value table must have one column");
  return v;
}

}  // namespace pfppo
