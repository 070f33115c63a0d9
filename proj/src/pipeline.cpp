// SPDX-License-Identifier: Apache-2.0
#include "lorahub/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "lorahub/digest.hpp"
#include "lorahub/errors.hpp"

using json = nlohmann::json;

namespace lorahub {

namespace {

constexpr uint64_t kTagPrefilter = 0x50;
constexpr uint64_t kTagCmaes = 0x51;
constexpr uint64_t kTagShots = 0x52;
constexpr uint64_t kTagCell = 0x53;

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double l1_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<size_t>(jobs));
  for (int t = 0; t < jobs; ++t) {
    workers.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
}

json value_to_json(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;  // +/-inf and NaN have no JSON representation
}

double value_from_json(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

json report_to_json(const AdaptReport& r) {
  json history = json::array();
  for (const EvalRecord& e : r.history) {
    history.push_back({{"point", e.point}, {"value", value_to_json(e.value)}});
  }
  return json{{"best_weights", r.best_weights.values},
              {"bound", r.best_weights.bound},
              {"best_objective", r.best_objective},
              {"zero_shot_objective", r.zero_shot_objective},
              {"history", history},
              {"selected_modules", r.selected_module_names},
              {"eval", r.eval_metrics.has_value()
                           ? json{{"loss", r.eval_metrics->loss},
                                  {"accuracy", r.eval_metrics->accuracy},
                                  {"exact_match", r.eval_metrics->exact_match}}
                           : json(nullptr)},
              {"warnings", r.warnings}};
}

AdaptReport report_from_json(const json& j) {
  AdaptReport r;
  r.best_weights.values = j.at("best_weights").get<std::vector<double>>();
  r.best_weights.bound = j.at("bound").get<double>();
  r.best_objective = j.at("best_objective").get<double>();
  r.zero_shot_objective = j.at("zero_shot_objective").get<double>();
  for (const json& je : j.at("history")) {
    r.history.push_back({je.at("point").get<std::vector<double>>(),
                         value_from_json(je.at("value"))});
  }
  r.selected_module_names = j.at("selected_modules").get<std::vector<std::string>>();
  if (!j.at("eval").is_null()) {
    EvalMetrics m;
    m.loss = j.at("eval").at("loss").get<double>();
    m.accuracy = j.at("eval").at("accuracy").get<double>();
    m.exact_match = j.at("eval").at("exact_match").get<double>();
    r.eval_metrics = m;
  }
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

}  // namespace

double objective(const WeightVector& w, std::span<const LoraModule> modules,
                 const BaseModel& model, const Batch& q, double alpha) {
  if (q.size() == 0) throw DataError("objective: Q is empty");
  const ComposedModule composed = compose(modules, w);
  const Matrix logits = forward(model, composed, q.inputs);
  return cross_entropy(logits, q.labels) + alpha * l1_norm(w.values);
}

AdaptReport adapt(const BaseModel& model, std::span<const LoraModule> candidates, const Batch& q,
                  const AdaptConfig& config) {
  if (candidates.empty()) throw EmptyRegistryError("adapt: no candidate modules");
  if (q.size() == 0) throw DataError("adapt: no task examples");
  if (config.budget < 1) throw ShapeError("adapt: budget must be >= 1");
  if (config.shots < 1) throw ShapeError("adapt: shots must be >= 1");

  AdaptReport report;
  for (const LoraModule& m : candidates) report.selected_module_names.push_back(m.name);

  // Q is expected to hold exactly config.shots examples.
  const Batch* q_used = &q;
  Batch q_trimmed;
  if (q.size() < config.shots) {
    report.warnings.push_back("Q has " + std::to_string(q.size()) + " examples, fewer than " +
                              std::to_string(config.shots) + " shots");
  } else if (q.size() > config.shots) {
    report.warnings.push_back("Q has " + std::to_string(q.size()) +
                              " examples; using the first " + std::to_string(config.shots));
    q_trimmed.inputs = Matrix(config.shots, q.inputs.cols());
    for (int i = 0; i < config.shots; ++i) {
      for (int j = 0; j < q.inputs.cols(); ++j) q_trimmed.inputs.at(i, j) = q.inputs.at(i, j);
      q_trimmed.labels.push_back(q.labels[static_cast<size_t>(i)]);
    }
    q_used = &q_trimmed;
  }

  const int n = static_cast<int>(candidates.size());
  auto eval_weights = [&](std::span<const double> w) {
    WeightVector wv{std::vector<double>(w.begin(), w.end()), config.bound};
    return objective(wv, candidates, model, *q_used, config.alpha);
  };

  // Evaluation #1 is always the zero vector; with no L1 contribution this
  // is exactly the zero-shot loss on Q.
  const std::vector<double> zero(static_cast<size_t>(n), 0.0);
  report.zero_shot_objective = eval_weights(zero);
  report.history.push_back({zero, report.zero_shot_objective});

  const int remaining = config.budget - 1;
  if (remaining >= 1) {
    CmaesConfig cc;
    cc.dim = n;
    cc.initial_mean.assign(static_cast<size_t>(n), 0.0);
    cc.initial_sigma = config.initial_sigma;
    cc.bound = config.bound;
    cc.budget = remaining;
    cc.seed = seed_mix(config.seed, kTagCmaes);
    Rng rng(cc.seed);
    MinimizeResult search = minimize(eval_weights, cc, rng);
    report.history.insert(report.history.end(), search.history.begin(), search.history.end());
    report.warnings.insert(report.warnings.end(), search.warnings.begin(),
                           search.warnings.end());
  }

  auto criterion = [&](const EvalRecord& e) {
    return config.select_by_raw_loss ? e.value - config.alpha * l1_norm(e.point) : e.value;
  };
  size_t best = 0;
  double best_value = criterion(report.history[0]);
  for (size_t i = 1; i < report.history.size(); ++i) {
    const double v = criterion(report.history[i]);
    if (v < best_value) {
      best_value = v;
      best = i;
    }
  }
  report.best_objective = best_value;
  report.best_weights = WeightVector{report.history[best].point, config.bound};
  report.composed = compose(candidates, report.best_weights);
  return report;
}

AdaptReport adapt_from_registry(const BaseModel& model, const std::filesystem::path& registry,
                                const Batch& q, const AdaptConfig& config) {
  const RegistryIndex index = load_index(registry);
  if (index.entries.empty()) {
    throw EmptyRegistryError("adapt: registry '" + registry.string() + "' is empty");
  }
  const uint64_t pf_seed =
      config.prefilter_seed != 0 ? config.prefilter_seed : seed_mix(config.seed, kTagPrefilter);
  std::vector<std::string> names = prefilter(index, config.candidates, pf_seed);
  std::sort(names.begin(), names.end());
  std::vector<LoraModule> modules;
  modules.reserve(names.size());
  for (const std::string& name : names) modules.push_back(load_module(name, registry));
  return adapt(model, modules, q, config);
}

std::vector<UsefulnessRow> usefulness(std::span<const AdaptReport> reports) {
  if (reports.empty()) throw ArityError("usefulness: no reports");
  const std::vector<std::string>& names = reports[0].selected_module_names;
  for (const AdaptReport& r : reports) {
    if (r.selected_module_names != names) {
      throw ArityError("usefulness: reports do not share one candidate module set");
    }
    if (r.best_weights.values.size() != names.size()) {
      throw ArityError("usefulness: weight vector arity mismatch");
    }
  }
  std::vector<UsefulnessRow> rows;
  rows.reserve(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    double sum = 0.0;
    for (const AdaptReport& r : reports) sum += std::abs(r.best_weights.values[i]);
    rows.push_back({names[i], sum / static_cast<double>(reports.size()), 0});
  }
  std::sort(rows.begin(), rows.end(), [](const UsefulnessRow& a, const UsefulnessRow& b) {
    if (a.mean_abs_weight != b.mean_abs_weight) return a.mean_abs_weight > b.mean_abs_weight;
    return a.module_name < b.module_name;
  });
  for (size_t i = 0; i < rows.size(); ++i) rows[i].rank = static_cast<int>(i) + 1;
  return rows;
}

ExperimentResults run_experiment(const BaseModel& model, const std::filesystem::path& registry,
                                 const TaskCatalog& catalog, const ExperimentSpec& spec) {
  if (spec.runs < 1) throw ShapeError("run_experiment: runs must be >= 1");
  const RegistryIndex index = load_index(registry);
  if (index.entries.empty()) {
    throw EmptyRegistryError("run_experiment: registry '" + registry.string() + "' is empty");
  }

  ExperimentResults results;
  results.spec = spec;

  // One prefilter draw per experiment; every run shares the candidate set.
  const uint64_t pf_seed = spec.config.prefilter_seed != 0
                               ? spec.config.prefilter_seed
                               : seed_mix(spec.config.seed, kTagPrefilter);
  results.candidate_names = prefilter(index, spec.config.candidates, pf_seed);
  std::sort(results.candidate_names.begin(), results.candidate_names.end());
  std::vector<LoraModule> modules;
  modules.reserve(results.candidate_names.size());
  for (const std::string& name : results.candidate_names) {
    modules.push_back(load_module(name, registry));
  }

  // Task data is generated once per task and shared across runs.
  std::vector<TaskData> data;
  data.reserve(spec.task_ids.size());
  results.tasks.resize(spec.task_ids.size());
  for (size_t t = 0; t < spec.task_ids.size(); ++t) {
    auto it = catalog.find(spec.task_ids[t]);
    if (it == catalog.end()) {
      throw LookupError("run_experiment: unknown task id '" + spec.task_ids[t] + "'");
    }
    data.push_back(generate(it->second, catalog));
    results.tasks[t].task_id = spec.task_ids[t];
    results.tasks[t].zero_shot = evaluate(model, nullptr, data.back().eval);
    results.tasks[t].runs.resize(static_cast<size_t>(spec.runs));
  }

  const int cells = static_cast<int>(spec.task_ids.size()) * spec.runs;
  parallel_for(cells, spec.jobs, [&](int cell) {
    const size_t t = static_cast<size_t>(cell) / static_cast<size_t>(spec.runs);
    const uint64_t run_seed = static_cast<uint64_t>(cell % spec.runs);
    const TaskData& td = data[t];
    const uint64_t cell_seed = seed_mix(
        seed_mix(spec.config.seed, fnv1a64(spec.task_ids[t])), seed_mix(kTagCell, run_seed));

    // Few-shot draw: config.shots distinct train examples.
    Rng shot_rng(seed_mix(cell_seed, kTagShots));
    const int n_train = td.train.size();
    const int shots = std::min(spec.config.shots, n_train);
    std::vector<int> idx(static_cast<size_t>(n_train));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < shots; ++i) {
      const int j = i + shot_rng.next_below(n_train - i);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    Batch q;
    q.inputs = Matrix(shots, td.train.inputs.cols());
    q.labels.resize(static_cast<size_t>(shots));
    for (int i = 0; i < shots; ++i) {
      for (int j = 0; j < td.train.inputs.cols(); ++j) {
        q.inputs.at(i, j) = td.train.inputs.at(idx[static_cast<size_t>(i)], j);
      }
      q.labels[static_cast<size_t>(i)] = td.train.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    }

    AdaptConfig cell_config = spec.config;
    cell_config.seed = cell_seed;
    AdaptReport report = adapt(model, modules, q, cell_config);
    report.eval_metrics = evaluate(model, report.composed, td.eval);

    results.tasks[t].runs[static_cast<size_t>(cell % spec.runs)] =
        RunResult{run_seed, std::move(report)};
  });

  for (TaskResult& task : results.tasks) {
    double sum = 0.0;
    double best = 0.0;
    for (const RunResult& r : task.runs) {
      const double acc = r.report.eval_metrics->accuracy;
      sum += acc;
      best = std::max(best, acc);
    }
    task.lorahub_avg_accuracy = sum / static_cast<double>(task.runs.size());
    task.lorahub_best_accuracy = best;
  }
  return results;
}

void write_results_csv(const ExperimentResults& results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot open '" + path.string() + "' for writing");
  out << "task,seed,method,loss,accuracy\n";
  for (const TaskResult& task : results.tasks) {
    out << task.task_id << ",0,zero_shot," << format_double(task.zero_shot.loss) << ","
        << format_double(task.zero_shot.accuracy) << "\n";
    for (const RunResult& run : task.runs) {
      out << task.task_id << "," << run.seed << ",lorahub,"
          << format_double(run.report.eval_metrics->loss) << ","
          << format_double(run.report.eval_metrics->accuracy) << "\n";
    }
  }
  if (!out) throw StorageError("short write to '" + path.string() + "'");
}

void write_results_json(const ExperimentResults& results, const std::filesystem::path& path) {
  json tasks = json::array();
  json summary = json::array();
  for (const TaskResult& task : results.tasks) {
    json runs = json::array();
    for (const RunResult& run : task.runs) {
      json jr = report_to_json(run.report);
      jr["seed"] = run.seed;
      runs.push_back(std::move(jr));
    }
    tasks.push_back({{"task", task.task_id},
                     {"zero_shot",
                      {{"loss", task.zero_shot.loss},
                       {"accuracy", task.zero_shot.accuracy},
                       {"exact_match", task.zero_shot.exact_match}}},
                     {"runs", runs}});
    summary.push_back({{"task", task.task_id},
                       {"zero_shot_accuracy", task.zero_shot.accuracy},
                       {"lorahub_avg", task.lorahub_avg_accuracy},
                       {"lorahub_best", task.lorahub_best_accuracy}});
  }
  const json j{{"format_version", 1},
               {"config",
                {{"alpha", results.spec.config.alpha},
                 {"shots", results.spec.config.shots},
                 {"budget", results.spec.config.budget},
                 {"bound", results.spec.config.bound},
                 {"candidates", results.spec.config.candidates},
                 {"seed", results.spec.config.seed},
                 {"prefilter_seed", results.spec.config.prefilter_seed},
                 {"initial_sigma", results.spec.config.initial_sigma},
                 {"select_by_raw_loss", results.spec.config.select_by_raw_loss},
                 {"runs", results.spec.runs},
                 {"task_ids", results.spec.task_ids}}},
               {"candidates", results.candidate_names},
               {"tasks", tasks},
               {"summary", summary}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw StorageError("short write to '" + path.string() + "'");
}

ExperimentResults read_results_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("results file '" + path.string() + "' not found");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("results file is not valid JSON: " + std::string(e.what()));
  }
  ExperimentResults results;
  try {
    if (j.at("format_version").get<int>() != 1) {
      throw FormatError("results format_version not supported");
    }
    const json& jc = j.at("config");
    results.spec.config.alpha = jc.at("alpha").get<double>();
    results.spec.config.shots = jc.at("shots").get<int>();
    results.spec.config.budget = jc.at("budget").get<int>();
    results.spec.config.bound = jc.at("bound").get<double>();
    results.spec.config.candidates = jc.at("candidates").get<int>();
    results.spec.config.seed = jc.at("seed").get<uint64_t>();
    results.spec.config.prefilter_seed = jc.at("prefilter_seed").get<uint64_t>();
    results.spec.config.initial_sigma = jc.at("initial_sigma").get<double>();
    results.spec.config.select_by_raw_loss = jc.at("select_by_raw_loss").get<bool>();
    results.spec.runs = jc.at("runs").get<int>();
    results.spec.task_ids = jc.at("task_ids").get<std::vector<std::string>>();
    results.candidate_names = j.at("candidates").get<std::vector<std::string>>();
    for (const json& jt : j.at("tasks")) {
      TaskResult task;
      task.task_id = jt.at("task").get<std::string>();
      task.zero_shot.loss = jt.at("zero_shot").at("loss").get<double>();
      task.zero_shot.accuracy = jt.at("zero_shot").at("accuracy").get<double>();
      task.zero_shot.exact_match = jt.at("zero_shot").at("exact_match").get<double>();
      for (const json& jr : jt.at("runs")) {
        RunResult run;
        run.seed = jr.at("seed").get<uint64_t>();
        run.report = report_from_json(jr);
        task.runs.push_back(std::move(run));
      }
      double sum = 0.0;
      double best = 0.0;
      for (const RunResult& r : task.runs) {
        const double acc = r.report.eval_metrics.has_value() ? r.report.eval_metrics->accuracy : 0.0;
        sum += acc;
        best = std::max(best, acc);
      }
      task.lorahub_avg_accuracy = task.runs.empty() ? 0.0 : sum / static_cast<double>(task.runs.size());
      task.lorahub_best_accuracy = best;
      results.tasks.push_back(std::move(task));
    }
  } catch (const json::exception& e) {
    throw FormatError("results file is missing fields: " + std::string(e.what()));
  }
  return results;
}

}  // namespace lorahub
