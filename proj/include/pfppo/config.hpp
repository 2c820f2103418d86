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

// Experiment configuration: INI-style "key = value" text with sections.
//
//   [task]        name, min_len, max_len, digits, min_pairs, max_pairs, min_mod, max_mod
//   [sft]         demos, corruption, epochs, step, seed
//   [reward]      source (noisy-oracle | trained-bt), sigma_max, model,
//                 prompts, responses, epochs, step, flip_rate, holdout
//   [filter]      strategy, N, M, tau_hi, tau_lo, p_keep
//   [ppo]         beta, clip_eps, gamma, lambda, policy_step, value_step, epochs,
//                 prompts_per_iter, iterations, normalize_rewards,
//                 normalize_advantages, value_on_all_candidates, eval_prompts
//   [diagnostics] bin_width, min_bin_count, prompts
//   [run]         variant, variants, seeds, out, jobs, checkpoint_every
//
// Unknown sections or keys are rejected. Comments start with ';' or '#'.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "pfppo/diagnostics.hpp"
#include "pfppo/error.hpp"
#include "pfppo/filtration.hpp"
#include "pfppo/policy.hpp"
#include "pfppo/ppo.hpp"
#include "pfppo/reward_model.hpp"
#include "pfppo/tasks.hpp"

namespace pfppo {

enum class RewardKind { kNoisyOracle, kTrainedBt };

struct RewardConfig {
  RewardKind kind = RewardKind::kNoisyOracle;
  double sigma_max = 0.5;
  std::string model_path;  // trained-bt: model file used by train/eval/analyze
  // train-rm settings
  int prompts = 500;
  int responses = 5;
  int epochs = 500;
  double step = 0.01;
  double flip_rate = 0.05;
  double holdout = 0.2;
};

struct FilterConfig {
  std::string strategy = "br";
  ThresholdDefaults thresholds;
};

struct DiagnosticsConfig {
  BinningConfig binning;
  int prompts = 2000;
};

struct RunConfig {
  std::string variant = "pf_br";
  std::vector<std::string> variants = {"ppo_s", "ppo_m", "pf_bon", "pf_br", "pf_bw",
                                       "top",   "top_random", "top_bottom", "pow_1", "pow_2", "pow_3"};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string out = "runs";
  int jobs = 1;
  int checkpoint_every = 1;
};

struct ExperimentConfig {
  TaskConfig task;
  SftConfig sft;
  std::optional<std::uint64_t> sft_seed;  // defaults to the run seed
  RewardConfig reward;
  FilterConfig filter;
  PpoConfig ppo;
  DiagnosticsConfig diagnostics;
  RunConfig run;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
    s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class Reader {
 public:
  explicit Reader(const boost::property_tree::ptree& tree) : tree_(tree) {}

  template <typename T>
  void get(const std::string& section, const std::string& key, T& out) {
    known_.insert(section + "." + key);
    const auto node = tree_.get_child_optional(boost::property_tree::ptree::path_type(section + "." + key, '.'));
    if (!node) return;
    const std::string raw = trim(node->data());
    if constexpr (std::is_same_v<T, std::string>) {
      out = raw;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1" || raw == "yes") out = true;
      else if (raw == "false" || raw == "0" || raw == "no") out = false;
      else bad(section, key, raw);
    } else {
      std::istringstream is(raw);
      T v{};
      is >> v;
      if (!is || !is.eof()) bad(section, key, raw);
      out = v;
    }
  }

  void get_raw(const std::string& section, const std::string& key, std::optional<std::string>& out) {
    known_.insert(section + "." + key);
    const auto node = tree_.get_child_optional(boost::property_tree::ptree::path_type(section + "." + key, '.'));
    if (node) out = trim(node->data());
  }

  void reject_unknown() const {
    static const std::set<std::string> sections = {"task", "sft", "reward", "filter", "ppo", "diagnostics", "run"};
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty())
        throw Error("invalid_config", "key '" + section + "' must live inside a [section]");
      if (!sections.count(section)) throw Error("invalid_config", "unknown config section [" + section + "]");
      for (const auto& [key, value] : body)
        if (!known_.count(section + "." + key))
          throw Error("invalid_config", "unknown config key '" + key + "' in [" + section + "]");
    }
  }

 private:
  [[noreturn]] static void bad(const std::string& section, const std::string& key, const std::string& raw) {
    throw Error("invalid_config", "bad value '" + raw + "' for " + section + "." + key);
  }

  const boost::property_tree::ptree& tree_;
  std::set<std::string> known_;
};

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  make_task(c.task);  // validates task sizes
  require(c.sft.demos >= 1 && c.sft.epochs >= 0 && c.sft.step > 0.0, "invalid_config", "bad [sft] settings");
  require(c.sft.corruption >= 0.0 && c.sft.corruption <= 1.0, "invalid_config", "sft.corruption must be in [0, 1]");
  require(c.reward.sigma_max >= 0.0, "invalid_config", "reward.sigma_max must be >= 0");
  require(c.reward.prompts >= 1 && c.reward.responses >= 2 && c.reward.epochs >= 0 && c.reward.step > 0.0,
          "invalid_config", "bad [reward] training settings");
  require(c.reward.flip_rate >= 0.0 && c.reward.flip_rate <= 1.0, "invalid_config", "reward.flip_rate must be in [0, 1]");
  require(c.reward.holdout >= 0.0 && c.reward.holdout < 1.0, "invalid_config", "reward.holdout must be in [0, 1)");
  validate(c.ppo);
  parse_strategy(c.filter.strategy, c.ppo.n_responses, c.filter.thresholds);
  parse_variant(c.run.variant, c.ppo.n_responses, c.filter.thresholds);
  for (const auto& v : c.run.variants) parse_variant(v, c.ppo.n_responses, c.filter.thresholds);
  require(c.diagnostics.binning.bin_width > 0.0 && c.diagnostics.binning.min_bin_count >= 1 && c.diagnostics.prompts >= 1,
          "invalid_config", "bad [diagnostics] settings");
  require(!c.run.seeds.empty(), "invalid_config", "run.seeds must list at least one seed");
  require(c.run.jobs >= 1 && c.run.checkpoint_every >= 0, "invalid_config", "bad [run] settings");
}

inline ExperimentConfig parse_config(std::istream& in) {
  // '#' comments are accepted in addition to the INI ';'.
  std::stringstream cleaned;
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line[first] == '#') continue;
    cleaned << line << '\n';
  }
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(cleaned, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error("invalid_config", e.what());
  }
  ExperimentConfig c;
  detail::Reader r(tree);
  r.get("task", "name", c.task.name);
  r.get("task", "min_len", c.task.sortseq.min_len);
  r.get("task", "max_len", c.task.sortseq.max_len);
  r.get("task", "digits", c.task.sortseq.digits);
  r.get("task", "min_pairs", c.task.brackets.min_pairs);
  r.get("task", "max_pairs", c.task.brackets.max_pairs);
  r.get("task", "min_mod", c.task.modsum.min_mod);
  r.get("task", "max_mod", c.task.modsum.max_mod);

  r.get("sft", "demos", c.sft.demos);
  r.get("sft", "corruption", c.sft.corruption);
  r.get("sft", "epochs", c.sft.epochs);
  r.get("sft", "step", c.sft.step);
  std::optional<std::string> sft_seed;
  r.get_raw("sft", "seed", sft_seed);
  if (sft_seed && *sft_seed != "run") {
    try {
      c.sft_seed = std::stoull(*sft_seed);
    } catch (const std::exception&) {
      throw Error("invalid_config", "bad value '" + *sft_seed + "' for sft.seed");
    }
  }

  std::string source = "noisy-oracle";
  r.get("reward", "source", source);
  if (source == "noisy-oracle") c.reward.kind = RewardKind::kNoisyOracle;
  else if (source == "trained-bt") c.reward.kind = RewardKind::kTrainedBt;
  else throw Error("invalid_config", "unknown reward.source '" + source + "'");
  r.get("reward", "sigma_max", c.reward.sigma_max);
  r.get("reward", "model", c.reward.model_path);
  r.get("reward", "prompts", c.reward.prompts);
  r.get("reward", "responses", c.reward.responses);
  r.get("reward", "epochs", c.reward.epochs);
  r.get("reward", "step", c.reward.step);
  r.get("reward", "flip_rate", c.reward.flip_rate);
  r.get("reward", "holdout", c.reward.holdout);

  r.get("filter", "strategy", c.filter.strategy);
  r.get("filter", "N", c.ppo.n_responses);
  r.get("filter", "M", c.ppo.keep_per_prompt);
  r.get("filter", "tau_hi", c.filter.thresholds.hi);
  r.get("filter", "tau_lo", c.filter.thresholds.lo);
  r.get("filter", "p_keep", c.filter.thresholds.p_keep);

  r.get("ppo", "beta", c.ppo.beta);
  r.get("ppo", "clip_eps", c.ppo.clip_eps);
  r.get("ppo", "gamma", c.ppo.gamma);
  r.get("ppo", "lambda", c.ppo.gae_lambda);
  r.get("ppo", "policy_step", c.ppo.policy_step);
  r.get("ppo", "value_step", c.ppo.value_step);
  r.get("ppo", "epochs", c.ppo.ppo_epochs);
  r.get("ppo", "prompts_per_iter", c.ppo.prompts_per_iter);
  r.get("ppo", "iterations", c.ppo.iterations);
  r.get("ppo", "normalize_rewards", c.ppo.normalize_rewards);
  r.get("ppo", "normalize_advantages", c.ppo.normalize_advantages);
  r.get("ppo", "value_on_all_candidates", c.ppo.value_on_all_candidates);
  r.get("ppo", "eval_prompts", c.ppo.eval_prompts);

  r.get("diagnostics", "bin_width", c.diagnostics.binning.bin_width);
  r.get("diagnostics", "min_bin_count", c.diagnostics.binning.min_bin_count);
  r.get("diagnostics", "prompts", c.diagnostics.prompts);

  r.get("run", "variant", c.run.variant);
  std::optional<std::string> variants, seeds;
  r.get_raw("run", "variants", variants);
  if (variants) c.run.variants = detail::split_list(*variants);
  r.get_raw("run", "seeds", seeds);
  if (seeds) {
    c.run.seeds.clear();
    for (const auto& s : detail::split_list(*seeds)) {
      try {
        std::size_t used = 0;
        c.run.seeds.push_back(std::stoull(s, &used));
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        throw Error("invalid_config", "bad seed '" + s + "' in run.seeds");
      }
    }
  }
  r.get("run", "out", c.run.out);
  r.get("run", "jobs", c.run.jobs);
  r.get("run", "checkpoint_every", c.run.checkpoint_every);

  r.reject_unknown();
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "io", "cannot open config '" + path + "'");
  return parse_config(in);
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

// Canonical text of every setting after defaults, in a fixed order. Two
// configs with equal canonical text describe the same experiment.
inline std::string canonical_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  auto join = [](const auto& xs) {
    std::ostringstream s;
    for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
    return s.str();
  };
  os << "[task]\nname=" << c.task.name << "\nmin_len=" << c.task.sortseq.min_len << "\nmax_len="
     << c.task.sortseq.max_len << "\ndigits=" << c.task.sortseq.digits << "\nmin_pairs=" << c.task.brackets.min_pairs
     << "\nmax_pairs=" << c.task.brackets.max_pairs << "\nmin_mod=" << c.task.modsum.min_mod
     << "\nmax_mod=" << c.task.modsum.max_mod << '\n';
  os << "[sft]\ndemos=" << c.sft.demos << "\ncorruption=" << c.sft.corruption << "\nepochs=" << c.sft.epochs
     << "\nstep=" << c.sft.step << "\nseed=" << (c.sft_seed ? std::to_string(*c.sft_seed) : "run") << '\n';
  os << "[reward]\nsource=" << (c.reward.kind == RewardKind::kNoisyOracle ? "noisy-oracle" : "trained-bt")
     << "\nsigma_max=" << c.reward.sigma_max << "\nmodel=" << c.reward.model_path << "\nprompts=" << c.reward.prompts
     << "\nresponses=" << c.reward.responses << "\nepochs=" << c.reward.epochs << "\nstep=" << c.reward.step
     << "\nflip_rate=" << c.reward.flip_rate << "\nholdout=" << c.reward.holdout << '\n';
  os << "[filter]\nstrategy=" << c.filter.strategy << "\nN=" << c.ppo.n_responses << "\nM=" << c.ppo.keep_per_prompt
     << "\ntau_hi=" << c.filter.thresholds.hi << "\ntau_lo=" << c.filter.thresholds.lo
     << "\np_keep=" << c.filter.thresholds.p_keep << '\n';
  os << "[ppo]\nbeta=" << c.ppo.beta << "\nclip_eps=" << c.ppo.clip_eps << "\ngamma=" << c.ppo.gamma
     << "\nlambda=" << c.ppo.gae_lambda << "\npolicy_step=" << c.ppo.policy_step << "\nvalue_step=" << c.ppo.value_step
     << "\nepochs=" << c.ppo.ppo_epochs << "\nprompts_per_iter=" << c.ppo.prompts_per_iter
     << "\niterations=" << c.ppo.iterations << "\nnormalize_rewards=" << c.ppo.normalize_rewards
     << "\nnormalize_advantages=" << c.ppo.normalize_advantages
     << "\nvalue_on_all_candidates=" << c.ppo.value_on_all_candidates << "\neval_prompts=" << c.ppo.eval_prompts << '\n';
  os << "[diagnostics]\nbin_width=" << c.diagnostics.binning.bin_width
     << "\nmin_bin_count=" << c.diagnostics.binning.min_bin_count << "\nprompts=" << c.diagnostics.prompts << '\n';
  os << "[run]\nvariant=" << c.run.variant << "\nvariants=" << join(c.run.variants) << "\nseeds=" << join(c.run.seeds)
     << '\n';
  return os.str();
}

// FNV-1a 64 of the canonical text, as 16 hex digits. Settings that do not
// change results (output directory, jobs, checkpoint cadence) are excluded.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace pfppo
