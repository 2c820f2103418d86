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

// Experiment orchestration behind the CLI: reward-model training, RL runs,
// greedy evaluation, reliability analysis and multi-variant comparison.
//
// Every output is a deterministic function of (config, seed); no timestamps
// or host information are written.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfppo/config.hpp"
#include "pfppo/diagnostics.hpp"
#include "pfppo/error.hpp"
#include "pfppo/filtration.hpp"
#include "pfppo/policy.hpp"
#include "pfppo/ppo.hpp"
#include "pfppo/random.hpp"
#include "pfppo/reward_model.hpp"
#include "pfppo/tasks.hpp"

namespace pfppo {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, "io", "cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "io", "cannot open '" + path.string() + "' for writing");
  out << text;
  require(static_cast<bool>(out), "io", "write failed for '" + path.string() + "'");
}

inline ReferencePolicy build_reference(const ExperimentConfig& cfg, const Task& task, std::uint64_t seed) {
  return train_sft(task, cfg.sft, cfg.sft_seed.value_or(seed));
}

// The reward source a config describes. trained-bt loads the model file.
inline RewardSource load_reward_source(const ExperimentConfig& cfg, const Task& task) {
  if (cfg.reward.kind == RewardKind::kNoisyOracle) return NoisyOracleConfig{cfg.reward.sigma_max};
  require(!cfg.reward.model_path.empty(), "invalid_config", "reward.source = trained-bt needs reward.model");
  RewardModel rm = load_reward_model(cfg.reward.model_path);
  require(rm.weights.size() == task.feature_dim(), "reward_model_mismatch",
          "reward model dim " + std::to_string(rm.weights.size()) + " does not match task '" + std::string(task.name()) +
              "' feature dim " + std::to_string(task.feature_dim()));
  return rm;
}

// ---------------------------------------------------------------------------
// train-rm

struct RewardModelReport {
  RewardModel model;
  std::vector<double> loss_history;
  double final_loss = 0.0;
  double heldout_accuracy = 0.0;
  std::size_t pairs = 0;
  std::size_t train_pairs = 0;
  std::size_t heldout_pairs = 0;
};

// Pairwise accuracy: P(w > l) above 1/2 counts 1, exactly 1/2 counts 1/2.
inline double pairwise_accuracy(const RewardModel& rm, std::span<const PreferencePair> pairs, const Task& task) {
  if (pairs.empty()) return 0.0;
  double hits = 0.0;
  for (const auto& p : pairs) {
    const double prob = preference_probability(rm, p, task);
    hits += prob > 0.5 ? 1.0 : (prob == 0.5 ? 0.5 : 0.0);
  }
  return hits / static_cast<double>(pairs.size());
}

// Builds max-edit-distance pairs from the reference policy, holds out a
// seeded fraction, trains on the rest and writes
//   <out>/reward_model.txt, <out>/preference_pairs.jsonl, <out>/rm_train_log.jsonl,
//   <out>/rm_report.json
inline RewardModelReport cmd_train_rm(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out) {
  const auto task = make_task(cfg.task);
  const ReferencePolicy ref = build_reference(cfg, *task, seed);
  std::vector<Prompt> prompts;
  for (int i = 0; i < cfg.reward.prompts; ++i)
    prompts.push_back(task->sample_prompt(derive_seed(seed, Stream::kPairs, 0xFFFF, static_cast<std::uint64_t>(i))));
  std::vector<PreferencePair> pairs =
      build_preference_pairs(*task, ref.params(), prompts, cfg.reward.responses, seed, cfg.reward.flip_rate);
  require(!pairs.empty(), "empty_dataset", "no preference pairs survived tie dropping");

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split = make_rng(derive_seed(seed, Stream::kSplit));
  std::shuffle(order.begin(), order.end(), split);
  const auto n_heldout = static_cast<std::size_t>(std::floor(cfg.reward.holdout * static_cast<double>(pairs.size())));
  std::vector<PreferencePair> train, heldout;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_heldout ? heldout : train).push_back(pairs[order[i]]);
  require(!train.empty(), "empty_dataset", "hold-out fraction leaves no training pairs");

  RewardTrainResult trained = train_reward_model(train, *task, cfg.reward.epochs, cfg.reward.step);
  RewardModelReport rep;
  rep.model = trained.model;
  rep.loss_history = trained.loss_history;
  rep.final_loss = trained.loss_history.back();
  rep.heldout_accuracy = pairwise_accuracy(rep.model, heldout, *task);
  rep.pairs = pairs.size();
  rep.train_pairs = train.size();
  rep.heldout_pairs = heldout.size();

  ensure_dir(out);
  save_reward_model((out / "reward_model.txt").string(), rep.model);
  save_pairs_jsonl((out / "preference_pairs.jsonl").string(), pairs);
  std::ostringstream log;
  for (std::size_t e = 0; e < rep.loss_history.size(); ++e)
    log << nlohmann::ordered_json{{"epoch", e}, {"bt_loss", rep.loss_history[e]}}.dump() << '\n';
  write_text(out / "rm_train_log.jsonl", log.str());
  nlohmann::ordered_json j{{"config_hash", config_hash(cfg)},
                           {"seed", seed},
                           {"task", cfg.task.name},
                           {"pairs", rep.pairs},
                           {"train_pairs", rep.train_pairs},
                           {"heldout_pairs", rep.heldout_pairs},
                           {"final_bt_loss", rep.final_loss},
                           {"heldout_accuracy", rep.heldout_accuracy}};
  write_text(out / "rm_report.json", j.dump(2) + "\n");
  return rep;
}

// ---------------------------------------------------------------------------
// train

struct RunRecord {
  std::string config_hash;
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<IterationMetrics> metrics;
  int best_iteration = 0;  // 0 when no iteration ran
  double best_eval_true_score = 0.0;
  double best_eval_reward = 0.0;
  PolicyParams best_policy;
  ComputeLedger ledger;
};

inline nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j{{"config_hash", r.config_hash},
                           {"variant", r.variant},
                           {"seed", r.seed},
                           {"iterations", r.metrics.size()},
                           {"best_checkpoint", r.best_iteration},
                           {"best_eval_true_score", r.best_eval_true_score},
                           {"best_eval_reward", r.best_eval_reward}};
  if (!r.metrics.empty()) j["compute"] = to_json(r.ledger);
  return j;
}

struct TrainOptions {
  bool write_outputs = true;
  int checkpoint_every = 1;  // 0: only the best checkpoint is written
};

// Runs one variant end to end. With outputs enabled, writes
//   <out>/metrics.jsonl, <out>/checkpoints/policy_iter_<k>.txt,
//   <out>/policy_best.txt, <out>/run_record.json
inline RunRecord cmd_train(const ExperimentConfig& cfg, const Variant& variant, std::uint64_t seed, const fs::path& out,
                           const TrainOptions& opts = {}) {
  const auto task = make_task(cfg.task);
  const RewardSource reward = load_reward_source(cfg, *task);
  const ReferencePolicy ref = build_reference(cfg, *task, seed);
  const auto eval_prompts = eval_prompt_set(*task, seed, cfg.ppo.eval_prompts);
  const RunContext ctx{*task, ref, reward, cfg.ppo, seed};

  RunRecord rec;
  rec.config_hash = config_hash(cfg);
  rec.variant = variant.name;
  rec.seed = seed;
  rec.best_policy = ref.params();

  std::ofstream metrics_out;
  if (opts.write_outputs) {
    ensure_dir(out);
    if (opts.checkpoint_every > 0) ensure_dir(out / "checkpoints");
    metrics_out.open(out / "metrics.jsonl", std::ios::binary);
    require(static_cast<bool>(metrics_out), "io", "cannot open metrics file in '" + out.string() + "'");
  }

  TrainState state{ref.params(), ValueParams::zeros(task->observation_count()), {}};
  for (int it = 1; it <= cfg.ppo.iterations; ++it) {
    IterationResult r = run_iteration(variant, std::move(state), ctx, it, eval_prompts);
    state = std::move(r.state);
    if (rec.best_iteration == 0 || r.metrics.eval_true_score > rec.best_eval_true_score) {
      rec.best_iteration = it;
      rec.best_eval_true_score = r.metrics.eval_true_score;
      rec.best_eval_reward = r.metrics.eval_reward_mean;
      rec.best_policy = state.policy;
    }
    if (opts.write_outputs) {
      auto j = to_json(r.metrics);
      j["config_hash"] = rec.config_hash;
      j["seed"] = seed;
      metrics_out << j.dump() << '\n';
      if (opts.checkpoint_every > 0 && it % opts.checkpoint_every == 0) {
        std::ostringstream name;
        name << "policy_iter_" << std::setw(4) << std::setfill('0') << it << ".txt";
        save_policy((out / "checkpoints" / name.str()).string(), state.policy);
      }
    }
    rec.metrics.push_back(std::move(r.metrics));
  }
  if (!rec.metrics.empty()) rec.ledger = compute_accounting(rec.metrics, contract_for(variant, cfg.ppo));
  if (opts.write_outputs) {
    metrics_out.close();
    save_policy((out / "policy_best.txt").string(), rec.best_policy);
    write_text(out / "run_record.json", to_json(rec).dump(2) + "\n");
  }
  return rec;
}

// ---------------------------------------------------------------------------
// eval

struct EvalReport {
  std::string checkpoint;
  int n_prompts = 0;
  std::uint64_t seed = 0;
  double mean_true_score = 0.0;
  double mean_reward = 0.0;
};

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  return {{"checkpoint", r.checkpoint},
          {"n_prompts", r.n_prompts},
          {"seed", r.seed},
          {"mean_true_score", r.mean_true_score},
          {"mean_reward", r.mean_reward}};
}

// Greedy decoding on n_prompts fresh prompts (a stream disjoint from the
// training-time evaluation set).
inline EvalReport evaluate_policy(const PolicyParams& policy, const Task& task, const RewardSource& reward, int n_prompts,
                                  std::uint64_t seed) {
  require(n_prompts >= 1, "invalid_argument", "n_prompts must be >= 1");
  check_shape(policy, task);
  std::vector<Prompt> prompts;
  for (int i = 0; i < n_prompts; ++i)
    prompts.push_back(task.sample_prompt(derive_seed(seed, Stream::kEvalPrompt, static_cast<std::uint64_t>(i), 1)));
  const Evaluation ev = evaluate_greedy(policy, task, reward, prompts, seed, 0xE7A1);
  EvalReport rep;
  rep.n_prompts = n_prompts;
  rep.seed = seed;
  rep.mean_true_score = ev.true_score;
  rep.mean_reward = ev.reward_mean;
  return rep;
}

inline EvalReport cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint, int n_prompts,
                           std::uint64_t seed) {
  require(fs::exists(checkpoint), "missing_checkpoint", "checkpoint '" + checkpoint + "' does not exist");
  const auto task = make_task(cfg.task);
  const PolicyParams policy = load_policy(checkpoint);
  EvalReport rep = evaluate_policy(policy, *task, load_reward_source(cfg, *task), n_prompts, seed);
  rep.checkpoint = checkpoint;
  return rep;
}

// ---------------------------------------------------------------------------
// analyze

// Reliability report of a strategy on the reference policy (or a given
// policy). ppo_s pools N*n single responses; every other variant uses N per
// prompt.
inline ReliabilityReport variant_reliability(const ExperimentConfig& cfg, const Variant& variant, const Task& task,
                                             const PolicyParams& policy, const RewardSource& reward,
                                             std::uint64_t seed) {
  const int n = cfg.ppo.n_responses;
  if (variant.kind == Variant::Kind::kPpoS) {
    const auto samples =
        collect_filtered_samples(NoFilter{}, policy, reward, task, cfg.diagnostics.prompts * n, 1, 1, seed);
    return report_from_samples(variant.name, samples, cfg.diagnostics.binning);
  }
  const FilterStrategy s = variant.kind == Variant::Kind::kFiltered ? variant.strategy : FilterStrategy{NoFilter{}};
  auto rep = reliability_report(s, policy, reward, task, cfg.diagnostics.prompts, n, cfg.ppo.keep_per_prompt, seed,
                                cfg.diagnostics.binning);
  rep.strategy = variant.name;
  return rep;
}

// Writes <out>/reliability_<strategy>.json and .csv.
inline ReliabilityReport cmd_analyze(const ExperimentConfig& cfg, const FilterStrategy& strategy, std::uint64_t seed,
                                     const fs::path& out, const std::optional<std::string>& checkpoint = std::nullopt) {
  const auto task = make_task(cfg.task);
  const RewardSource reward = load_reward_source(cfg, *task);
  const PolicyParams policy = checkpoint ? load_policy(*checkpoint) : build_reference(cfg, *task, seed).params();
  check_shape(policy, *task);
  ReliabilityReport rep = reliability_report(strategy, policy, reward, *task, cfg.diagnostics.prompts,
                                             cfg.ppo.n_responses, cfg.ppo.keep_per_prompt, seed, cfg.diagnostics.binning);
  ensure_dir(out);
  std::string stem = "reliability_" + rep.strategy;
  std::replace(stem.begin(), stem.end(), ':', '_');
  auto j = to_json(rep);
  j["config_hash"] = config_hash(cfg);
  j["seed"] = seed;
  write_text(out / (stem + ".json"), j.dump(2) + "\n");
  write_reliability_csv((out / (stem + ".csv")).string(), rep.bins);
  return rep;
}

// ---------------------------------------------------------------------------
// compare

// Spearman rank correlation with average ranks for ties; empty when either
// side is constant.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "invalid_argument", "spearman needs two equal-length series");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

struct ComparisonRow {
  std::string variant;
  std::vector<double> best_scores;  // one per completed seed
  double mean_score = 0.0;
  double sd_score = 0.0;
  std::optional<double> r2;  // mean over seeds of defined R^2 values
  std::vector<std::optional<double>> r2_per_seed;
  ComputeLedger ledger;  // per iteration, from the first completed seed
  std::vector<std::string> errors;
  bool complete = false;
};

struct Comparison {
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<ComparisonRow> rows;  // sorted by mean score, descending
  std::optional<double> r2_score_spearman;
};

inline nlohmann::ordered_json to_json(const Comparison& c) {
  nlohmann::ordered_json j;
  j["config_hash"] = c.config_hash;
  j["seeds"] = c.seeds;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : c.rows) {
    nlohmann::ordered_json row{{"variant", r.variant},
                               {"complete", r.complete},
                               {"mean_best_true_score", r.mean_score},
                               {"sd_best_true_score", r.sd_score},
                               {"best_true_scores", r.best_scores},
                               {"r2", r.r2 ? nlohmann::ordered_json(*r.r2) : nlohmann::ordered_json(nullptr)},
                               {"compute_per_iteration", to_json(r.ledger)}};
    if (!r.errors.empty()) row["errors"] = r.errors;
    j["rows"].push_back(row);
  }
  j["r2_score_spearman"] =
      c.r2_score_spearman ? nlohmann::ordered_json(*c.r2_score_spearman) : nlohmann::ordered_json(nullptr);
  return j;
}

inline std::string format_table(const Comparison& c) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "variant" << std::right << std::setw(10) << "mean" << std::setw(9) << "sd"
     << std::setw(9) << "R2" << std::setw(10) << "queries" << std::setw(6) << "resp" << std::setw(10) << "rm_fwd"
     << std::setw(10) << "pol_upd" << std::setw(10) << "val_upd" << '\n';
  os << std::fixed;
  for (const auto& r : c.rows) {
    os << std::left << std::setw(14) << r.variant << std::right << std::setprecision(4) << std::setw(10)
       << r.mean_score << std::setw(9) << r.sd_score << std::setw(9);
    if (r.r2) os << std::setprecision(3) << *r.r2;
    else os << "n/a";
    os << std::setw(10) << r.ledger.queries_sampled << std::setw(6) << r.ledger.responses_per_query << std::setw(10)
       << r.ledger.rm_forward << std::setw(10) << r.ledger.policy_updates << std::setw(10) << r.ledger.value_updates;
    if (!r.complete) os << "  (incomplete)";
    os << '\n';
  }
  os << "spearman(R2, score) = ";
  if (c.r2_score_spearman) os << std::setprecision(3) << *c.r2_score_spearman;
  else os << "n/a";
  os << '\n';
  return os.str();
}

struct CompareOptions {
  int jobs = 1;
  bool write_outputs = true;
};

// Runs every variant x seed (sub-runs in parallel up to `jobs`), the SFT-based
// reliability report per variant and seed, and writes
//   <out>/<variant>/seed_<s>/... (per-run outputs, best checkpoint only),
//   <out>/comparison.json, <out>/comparison.txt
// A failed sub-run leaves its cell empty; the comparison is still written
// and an Error is raised afterwards.
inline Comparison cmd_compare(const ExperimentConfig& cfg, const std::vector<std::string>& variant_names,
                              const std::vector<std::uint64_t>& seeds, const fs::path& out,
                              const CompareOptions& opts = {}) {
  require(variant_names.size() >= 2, "invalid_config", "compare needs at least two variants");
  require(!seeds.empty(), "invalid_config", "compare needs at least one seed");
  std::vector<Variant> variants;
  for (const auto& v : variant_names) variants.push_back(parse_variant(v, cfg.ppo.n_responses, cfg.filter.thresholds));

  struct Cell {
    std::optional<RunRecord> run;
    std::optional<ReliabilityReport> reliability;
    std::string error;
  };
  const std::size_t nv = variants.size(), ns = seeds.size();
  std::vector<Cell> cells(nv * ns);

  auto work = [&](std::size_t v, std::size_t s) {
    Cell cell;
    try {
      TrainOptions topts;
      topts.write_outputs = opts.write_outputs;
      topts.checkpoint_every = 0;
      const fs::path dir = out / variants[v].name / ("seed_" + std::to_string(seeds[s]));
      cell.run = cmd_train(cfg, variants[v], seeds[s], dir, topts);
      const auto task = make_task(cfg.task);
      const RewardSource reward = load_reward_source(cfg, *task);
      const ReferencePolicy ref = build_reference(cfg, *task, seeds[s]);
      cell.reliability = variant_reliability(cfg, variants[v], *task, ref.params(), reward, seeds[s]);
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    return cell;
  };

  const int jobs = std::max(1, opts.jobs);
  for (std::size_t start = 0; start < nv * ns; start += static_cast<std::size_t>(jobs)) {
    std::vector<std::future<Cell>> pending;
    for (std::size_t k = start; k < std::min(nv * ns, start + static_cast<std::size_t>(jobs)); ++k)
      pending.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, work, k / ns, k % ns));
    for (std::size_t k = 0; k < pending.size(); ++k) cells[start + k] = pending[k].get();
  }

  Comparison cmp;
  cmp.config_hash = config_hash(cfg);
  cmp.seeds = seeds;
  bool any_failed = false;
  for (std::size_t v = 0; v < nv; ++v) {
    ComparisonRow row;
    row.variant = variants[v].name;
    double r2_sum = 0.0;
    int r2_n = 0;
    for (std::size_t s = 0; s < ns; ++s) {
      const Cell& c = cells[v * ns + s];
      if (!c.error.empty()) {
        row.errors.push_back("seed " + std::to_string(seeds[s]) + ": " + c.error);
        any_failed = true;
        continue;
      }
      row.best_scores.push_back(c.run->best_eval_true_score);
      if (row.best_scores.size() == 1 && c.run->ledger.iterations > 0) {
        const auto it = c.run->ledger.iterations;
        row.ledger = c.run->ledger;
        row.ledger.queries_sampled /= it;
        row.ledger.rm_forward /= it;
        row.ledger.candidates_generated /= it;
        row.ledger.policy_updates /= it;
        row.ledger.value_updates /= it;
        row.ledger.iterations = 1;
      }
      row.r2_per_seed.push_back(c.reliability->r2);
      if (c.reliability->r2) {
        r2_sum += *c.reliability->r2;
        ++r2_n;
      }
    }
    row.complete = row.errors.empty();
    if (!row.best_scores.empty()) {
      const double n = static_cast<double>(row.best_scores.size());
      row.mean_score = std::accumulate(row.best_scores.begin(), row.best_scores.end(), 0.0) / n;
      double ss = 0.0;
      for (double x : row.best_scores) ss += (x - row.mean_score) * (x - row.mean_score);
      row.sd_score = row.best_scores.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
    if (r2_n > 0) row.r2 = r2_sum / r2_n;
    cmp.rows.push_back(std::move(row));
  }
  std::stable_sort(cmp.rows.begin(), cmp.rows.end(),
                   [](const ComparisonRow& a, const ComparisonRow& b) { return a.mean_score > b.mean_score; });

  std::vector<double> xs, ys;
  for (const auto& r : cmp.rows)
    if (r.r2 && !r.best_scores.empty()) {
      xs.push_back(*r.r2);
      ys.push_back(r.mean_score);
    }
  if (xs.size() >= 2) cmp.r2_score_spearman = spearman(xs, ys);

  if (opts.write_outputs) {
    ensure_dir(out);
    write_text(out / "comparison.json", to_json(cmp).dump(2) + "\n");
    write_text(out / "comparison.txt", format_table(cmp));
  }
  if (any_failed) throw Error("subrun_failed", "one or more compare sub-runs failed; partial results in '" + out.string() + "'");
  return cmp;
}

}  // namespace pfppo
