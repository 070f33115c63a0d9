// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lorahub/cmaes.hpp"
#include "lorahub/defaults.hpp"
#include "lorahub/hub.hpp"
#include "lorahub/lora.hpp"
#include "lorahub/model.hpp"
#include "lorahub/taskgen.hpp"

namespace lorahub {

struct AdaptConfig {
  double alpha = defaults::kAlpha;
  int shots = defaults::kShots;
  int budget = defaults::kBudget;  // K, total objective evaluations
  double bound = defaults::kBound;
  int candidates = defaults::kCandidates;
  uint64_t seed = 0;
  /// 0 -> derived from seed. One experiment shares a single prefilter draw
  /// so usefulness() has a common candidate set across reports.
  uint64_t prefilter_seed = 0;
  double initial_sigma = defaults::kInitialSigma;
  /// Select the final weights by raw few-shot loss instead of the
  /// regularized objective.
  bool select_by_raw_loss = false;
};

struct AdaptReport {
  WeightVector best_weights;
  double best_objective = 0.0;
  double zero_shot_objective = 0.0;
  std::vector<EvalRecord> history;  // one entry per objective evaluation
  std::vector<std::string> selected_module_names;
  ComposedModule composed;
  std::optional<EvalMetrics> eval_metrics;
  std::vector<std::string> warnings;
};

/// cross_entropy(forward(model, compose(modules, w), q), labels) + alpha * sum_i |w_i|
double objective(const WeightVector& w, std::span<const LoraModule> modules,
                 const BaseModel& model, const Batch& q, double alpha);

/// The adaptation loop over an explicit candidate list. The zero weight
/// vector is force-evaluated as evaluation #1 (counting against the
/// budget), so best_objective <= zero_shot_objective always holds; the
/// remaining budget goes to the evolution search started from a zero mean.
AdaptReport adapt(const BaseModel& model, std::span<const LoraModule> candidates, const Batch& q,
                  const AdaptConfig& config);

/// Spec operation: prefilters config.candidates modules from the registry,
/// loads them, and runs adapt().
AdaptReport adapt_from_registry(const BaseModel& model, const std::filesystem::path& registry,
                                const Batch& q, const AdaptConfig& config);

struct UsefulnessRow {
  std::string module_name;
  double mean_abs_weight = 0.0;
  int rank = 0;
};

/// Mean |w_i| per module across reports, sorted descending, ties broken by
/// module name ascending. All reports must share one candidate set.
std::vector<UsefulnessRow> usefulness(std::span<const AdaptReport> reports);

struct ExperimentSpec {
  std::vector<std::string> task_ids;  // unseen tasks to adapt to
  int runs = defaults::kRuns;         // seeded runs per task
  AdaptConfig config;                 // config.seed is the master seed
  int jobs = 1;
};

struct RunResult {
  uint64_t seed = 0;
  AdaptReport report;
};

struct TaskResult {
  std::string task_id;
  EvalMetrics zero_shot;
  std::vector<RunResult> runs;
  double lorahub_avg_accuracy = 0.0;
  double lorahub_best_accuracy = 0.0;
};

struct ExperimentResults {
  ExperimentSpec spec;
  std::vector<std::string> candidate_names;  // shared prefilter draw
  std::vector<TaskResult> tasks;
};

/// Per task: zero-shot metrics on the held-out eval set, then `runs`
/// seeded adapt runs each evaluated on the same set. Deterministic for a
/// fixed (registry state, catalog, spec), independent of `jobs`.
ExperimentResults run_experiment(const BaseModel& model, const std::filesystem::path& registry,
                                 const TaskCatalog& catalog, const ExperimentSpec& spec);

/// results.csv: header task,seed,method,loss,accuracy; zero-shot rows use
/// seed 0. Doubles are shortest-round-trip formatted.
void write_results_csv(const ExperimentResults& results, const std::filesystem::path& path);

/// results.json: full reports (weights, objectives, history, provenance;
/// composed factor payloads are reconstructible and not embedded).
void write_results_json(const ExperimentResults& results, const std::filesystem::path& path);
ExperimentResults read_results_json(const std::filesystem::path& path);

}  // namespace lorahub
