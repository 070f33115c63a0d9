// SPDX-License-Identifier: Apache-2.0
//
// lorahub: train low-rank adapters on synthetic upstream tasks over a frozen
// MLP, then adapt to unseen tasks by composing those adapters with
// coefficients found by a gradient-free CMA-ES search on a few-shot loss.
//
// Subcommands: suite, train, adapt, analyze, replay. Every command writes a
// manifest sufficient to replay it with bitwise-identical outputs (manifests
// themselves carry wall-clock timings and are not byte-stable).

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lorahub/defaults.hpp"
#include "lorahub/digest.hpp"
#include "lorahub/errors.hpp"
#include "lorahub/hub.hpp"
#include "lorahub/pipeline.hpp"
#include "lorahub/taskgen.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lorahub;

namespace {

constexpr const char* kBaseModelFile = "base_model.bin";

std::string now_iso8601_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string default_registry() {
  if (const char* env = std::getenv("LORAHUB_HOME"); env != nullptr && *env != '\0') {
    return env;
  }
  return "registry";
}

void write_manifest(const fs::path& path, const std::string& command, const json& args,
                    const json& outputs, long long wall_ms) {
  const json manifest{{"tool_version", defaults::kToolVersion},
                      {"command", command},
                      {"args", args},
                      {"outputs", outputs},
                      {"timings", {{"wall_ms", wall_ms}}}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot open '" + path.string() + "' for writing");
  out << manifest.dump(2) << "\n";
}

class Stopwatch {
 public:
  long long ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------- suite ---

struct SuiteArgs {
  uint64_t seed = 0;
  int upstream = defaults::kUpstreamTasks;
  int unseen = defaults::kUnseenTasks;
  int n_train = defaults::kTrainExamples;
  int n_eval = defaults::kEvalExamples;
  std::string out = "suite.json";
};

json suite_args_json(const SuiteArgs& a) {
  return {{"seed", a.seed}, {"upstream", a.upstream}, {"unseen", a.unseen},
          {"n_train", a.n_train}, {"n_eval", a.n_eval}, {"out", a.out}};
}

SuiteArgs suite_args_from_json(const json& j) {
  SuiteArgs a;
  a.seed = j.at("seed").get<uint64_t>();
  a.upstream = j.at("upstream").get<int>();
  a.unseen = j.at("unseen").get<int>();
  a.n_train = j.at("n_train").get<int>();
  a.n_eval = j.at("n_eval").get<int>();
  a.out = j.at("out").get<std::string>();
  return a;
}

int run_suite(const SuiteArgs& args) {
  Stopwatch watch;
  Suite suite = make_suite(args.seed, args.upstream, args.unseen);
  for (TaskSpec& s : suite.upstream) {
    s.n_train = args.n_train;
    s.n_eval = args.n_eval;
  }
  for (TaskSpec& s : suite.unseen) {
    s.n_train = args.n_train;
    s.n_eval = args.n_eval;
  }
  write_suite(suite, args.out);
  write_manifest(args.out + ".manifest.json", "suite", suite_args_json(args),
                 json::array({args.out}), watch.ms());
  std::cout << "wrote " << args.out << " with " << suite.upstream.size() << " upstream and "
            << suite.unseen.size() << " unseen tasks\n";
  return 0;
}

// ---------------------------------------------------------------- train ---

struct TrainArgs {
  std::string suite = "suite.json";
  std::string registry = default_registry();
  uint64_t seed = 0;
  int rank = defaults::kRank;
  int epochs = defaults::kTrainEpochs;
  int batch_size = defaults::kTrainBatch;
  double lr = defaults::kTrainLr;
  double pretrain_lr = defaults::kPretrainLr;
  int pretrain_epochs = defaults::kPretrainEpochs;
  std::string timestamp;  // empty -> now, recorded in the manifest
};

json train_args_json(const TrainArgs& a) {
  return {{"suite", a.suite},     {"registry", a.registry},
          {"seed", a.seed},       {"rank", a.rank},
          {"epochs", a.epochs},   {"batch_size", a.batch_size},
          {"lr", a.lr},           {"pretrain_lr", a.pretrain_lr},
          {"pretrain_epochs", a.pretrain_epochs}, {"timestamp", a.timestamp}};
}

TrainArgs train_args_from_json(const json& j) {
  TrainArgs a;
  a.suite = j.at("suite").get<std::string>();
  a.registry = j.at("registry").get<std::string>();
  a.seed = j.at("seed").get<uint64_t>();
  a.rank = j.at("rank").get<int>();
  a.epochs = j.at("epochs").get<int>();
  a.batch_size = j.at("batch_size").get<int>();
  a.lr = j.at("lr").get<double>();
  a.pretrain_lr = j.at("pretrain_lr").get<double>();
  a.pretrain_epochs = j.at("pretrain_epochs").get<int>();
  a.timestamp = j.at("timestamp").get<std::string>();
  return a;
}

int run_train(TrainArgs args) {
  Stopwatch watch;
  if (args.timestamp.empty()) args.timestamp = now_iso8601_utc();
  const Suite suite = read_suite(args.suite);
  const TaskCatalog catalog = catalog_of(suite);
  const fs::path registry(args.registry);
  fs::create_directories(registry);

  // Upstream data; also the pretraining corpus.
  std::vector<TaskData> upstream_data;
  upstream_data.reserve(suite.upstream.size());
  for (const TaskSpec& spec : suite.upstream) {
    upstream_data.push_back(generate(spec, catalog));
  }

  BaseModel model;
  const fs::path base_path = registry / kBaseModelFile;
  if (fs::exists(base_path)) {
    model = load_base_model(base_path);
    std::cout << "base model: loaded " << base_path.string() << "\n";
  } else {
    PretrainConfig pc;
    pc.lr = args.pretrain_lr;
    pc.epochs = args.pretrain_epochs;
    pc.batch_size = defaults::kPretrainBatch;
    pc.seed = seed_mix(args.seed, 0x60);
    std::vector<Batch> batches;
    batches.reserve(upstream_data.size());
    for (const TaskData& d : upstream_data) batches.push_back(d.train);
    model = pretrain_base(default_arch(), batches, pc);
    save_base_model(model, base_path);
    std::cout << "base model: pretrained on " << batches.size() << " tasks, saved "
              << base_path.string() << "\n";
  }

  int trained = 0;
  int skipped = 0;
  for (size_t t = 0; t < suite.upstream.size(); ++t) {
    const TaskSpec& spec = suite.upstream[t];
    const RegistryIndex index = load_index(registry);
    if (index.find(spec.task_id) != nullptr) {
      try {
        load_module(spec.task_id, registry);
        std::cout << "skip " << spec.task_id << " (already registered, checksum ok)\n";
        ++skipped;
        continue;
      } catch (const Error&) {
        // stale or corrupt artifact: drop it and retrain
        fs::remove(registry / (spec.task_id + ".lora"));
        write_index(rebuild_index(registry), registry);
      }
    }
    TrainConfig tc;
    tc.lr = args.lr;
    tc.epochs = args.epochs;
    tc.batch_size = args.batch_size;
    tc.rank = args.rank;
    tc.seed = seed_mix(args.seed, fnv1a64(spec.task_id));
    const LoraModule module = train_lora(model, upstream_data[t].train, tc, spec.task_id,
                                         spec.task_id, args.timestamp);
    save_module(module, registry);
    const EvalMetrics train_m = evaluate(model, &module, upstream_data[t].train);
    const EvalMetrics eval_m = evaluate(model, &module, upstream_data[t].eval);
    std::cout << "trained " << spec.task_id << "  train_acc=" << train_m.accuracy
              << "  eval_acc=" << eval_m.accuracy << "  eval_loss=" << eval_m.loss << "\n";
    ++trained;
  }

  write_manifest(registry / "manifest.json", "train", train_args_json(args),
                 json::array({(registry / "registry.json").string()}), watch.ms());
  std::cout << "registry " << registry.string() << ": " << trained << " trained, " << skipped
            << " skipped\n";
  return 0;
}

// ---------------------------------------------------------------- adapt ---

struct AdaptArgs {
  std::string suite = "suite.json";
  std::string registry = default_registry();
  std::string out_dir = "results";
  std::vector<std::string> tasks;  // empty -> all unseen tasks
  int shots = defaults::kShots;
  int budget = defaults::kBudget;
  double alpha = defaults::kAlpha;
  double bound = defaults::kBound;
  int candidates = defaults::kCandidates;
  int runs = defaults::kRuns;
  uint64_t seed = 0;
  int jobs = 1;
  bool select_raw = false;
};

json adapt_args_json(const AdaptArgs& a) {
  return {{"suite", a.suite},          {"registry", a.registry},
          {"out_dir", a.out_dir},      {"tasks", a.tasks},
          {"shots", a.shots},          {"budget", a.budget},
          {"alpha", a.alpha},          {"bound", a.bound},
          {"candidates", a.candidates}, {"runs", a.runs},
          {"seed", a.seed},            {"jobs", a.jobs},
          {"select_raw", a.select_raw}};
}

AdaptArgs adapt_args_from_json(const json& j) {
  AdaptArgs a;
  a.suite = j.at("suite").get<std::string>();
  a.registry = j.at("registry").get<std::string>();
  a.out_dir = j.at("out_dir").get<std::string>();
  a.tasks = j.at("tasks").get<std::vector<std::string>>();
  a.shots = j.at("shots").get<int>();
  a.budget = j.at("budget").get<int>();
  a.alpha = j.at("alpha").get<double>();
  a.bound = j.at("bound").get<double>();
  a.candidates = j.at("candidates").get<int>();
  a.runs = j.at("runs").get<int>();
  a.seed = j.at("seed").get<uint64_t>();
  a.jobs = j.at("jobs").get<int>();
  a.select_raw = j.at("select_raw").get<bool>();
  return a;
}

int run_adapt(const AdaptArgs& args) {
  Stopwatch watch;
  const Suite suite = read_suite(args.suite);
  const TaskCatalog catalog = catalog_of(suite);
  const fs::path registry(args.registry);

  const RegistryIndex index = load_index(registry);
  if (index.entries.empty()) {
    throw EmptyRegistryError("registry '" + registry.string() + "' has no modules; run train");
  }
  const BaseModel model = load_base_model(registry / kBaseModelFile);

  ExperimentSpec spec;
  if (args.tasks.empty()) {
    for (const TaskSpec& s : suite.unseen) spec.task_ids.push_back(s.task_id);
  } else {
    spec.task_ids = args.tasks;
  }
  spec.runs = args.runs;
  spec.jobs = args.jobs;
  spec.config.alpha = args.alpha;
  spec.config.shots = args.shots;
  spec.config.budget = args.budget;
  spec.config.bound = args.bound;
  spec.config.candidates = args.candidates;
  spec.config.seed = args.seed;
  spec.config.select_by_raw_loss = args.select_raw;

  const ExperimentResults results = run_experiment(model, registry, catalog, spec);

  const fs::path out_dir(args.out_dir);
  fs::create_directories(out_dir);
  write_results_csv(results, out_dir / "results.csv");
  write_results_json(results, out_dir / "results.json");
  write_manifest(out_dir / "manifest.json", "adapt", adapt_args_json(args),
                 json::array({(out_dir / "results.csv").string(),
                              (out_dir / "results.json").string()}),
                 watch.ms());

  for (const TaskResult& t : results.tasks) {
    std::cout << t.task_id << "  zero=" << t.zero_shot.accuracy
              << "  lorahub_avg=" << t.lorahub_avg_accuracy
              << "  lorahub_best=" << t.lorahub_best_accuracy << "\n";
  }
  std::cout << "wrote " << (out_dir / "results.csv").string() << ", "
            << (out_dir / "results.json").string() << "\n";
  return 0;
}

// -------------------------------------------------------------- analyze ---

struct AnalyzeArgs {
  std::string results = "results/results.json";
  std::string out_dir;  // empty -> directory of the results file
};

json analyze_args_json(const AnalyzeArgs& a) {
  return {{"results", a.results}, {"out_dir", a.out_dir}};
}

AnalyzeArgs analyze_args_from_json(const json& j) {
  AnalyzeArgs a;
  a.results = j.at("results").get<std::string>();
  a.out_dir = j.at("out_dir").get<std::string>();
  return a;
}

std::string format_double_csv(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::string percent(double v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
  return buf;
}

int run_analyze(const AnalyzeArgs& args) {
  Stopwatch watch;
  const ExperimentResults results = read_results_json(args.results);
  const fs::path out_dir =
      args.out_dir.empty() ? fs::path(args.results).parent_path() : fs::path(args.out_dir);
  fs::create_directories(out_dir.empty() ? fs::path(".") : out_dir);

  std::vector<AdaptReport> reports;
  for (const TaskResult& t : results.tasks) {
    for (const RunResult& r : t.runs) reports.push_back(r.report);
  }
  const std::vector<UsefulnessRow> table = usefulness(reports);

  const fs::path usefulness_path = out_dir / "usefulness.csv";
  {
    std::ofstream out(usefulness_path, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open '" + usefulness_path.string() + "'");
    out << "rank,module,mean_abs_weight\n";
    for (const UsefulnessRow& row : table) {
      out << row.rank << "," << row.module_name << "," << format_double_csv(row.mean_abs_weight)
          << "\n";
    }
  }

  const fs::path report_path = out_dir / "report.md";
  {
    std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open '" + report_path.string() + "'");
    out << "# Adaptation results\n\n";
    out << "Accuracy (%) per task: frozen base (Zero) vs composed adapters over "
        << results.spec.runs << " seeded runs.\n\n";
    out << "| Task | Zero | LoraHub_avg | LoraHub_best |\n";
    out << "|------|------|-------------|--------------|\n";
    double zero_sum = 0.0, avg_sum = 0.0, best_sum = 0.0;
    for (const TaskResult& t : results.tasks) {
      out << "| " << t.task_id << " | " << percent(t.zero_shot.accuracy) << " | "
          << percent(t.lorahub_avg_accuracy) << " | " << percent(t.lorahub_best_accuracy)
          << " |\n";
      zero_sum += t.zero_shot.accuracy;
      avg_sum += t.lorahub_avg_accuracy;
      best_sum += t.lorahub_best_accuracy;
    }
    const double n = results.tasks.empty() ? 1.0 : static_cast<double>(results.tasks.size());
    out << "| **mean** | " << percent(zero_sum / n) << " | " << percent(avg_sum / n) << " | "
        << percent(best_sum / n) << " |\n\n";
    out << "## Most useful modules (mean |w| across " << reports.size() << " runs)\n\n";
    out << "| Rank | Module | Usefulness |\n|------|--------|------------|\n";
    for (const UsefulnessRow& row : table) {
      if (row.rank > 5) break;
      out << "| " << row.rank << " | " << row.module_name << " | "
          << format_double_csv(row.mean_abs_weight) << " |\n";
    }
  }

  write_manifest(out_dir / "analyze.manifest.json", "analyze", analyze_args_json(args),
                 json::array({usefulness_path.string(), report_path.string()}), watch.ms());
  std::cout << "wrote " << usefulness_path.string() << ", " << report_path.string() << "\n";
  return 0;
}

// --------------------------------------------------------------- replay ---

int run_replay(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw NotFoundError("manifest '" + manifest_path + "' not found");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
  }
  const std::string command = manifest.at("command").get<std::string>();
  const json& args = manifest.at("args");
  if (command == "suite") return run_suite(suite_args_from_json(args));
  if (command == "train") return run_train(train_args_from_json(args));
  if (command == "adapt") return run_adapt(adapt_args_from_json(args));
  if (command == "analyze") return run_analyze(analyze_args_from_json(args));
  throw FormatError("manifest command '" + command + "' is not replayable");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compose trained low-rank adapters for unseen tasks via gradient-free search"};
  app.require_subcommand(0, 1);
  bool show_defaults = false;
  app.add_flag("--show-defaults", show_defaults, "print all configuration defaults and exit");

  SuiteArgs suite_args;
  CLI::App* suite_cmd = app.add_subcommand("suite", "generate a synthetic task suite");
  suite_cmd->add_option("--seed", suite_args.seed, "suite seed");
  suite_cmd->add_option("--upstream", suite_args.upstream, "number of upstream tasks")
      ->check(CLI::PositiveNumber);
  suite_cmd->add_option("--unseen", suite_args.unseen, "number of unseen tasks")
      ->check(CLI::PositiveNumber);
  suite_cmd->add_option("--n-train", suite_args.n_train, "train examples per task")
      ->check(CLI::PositiveNumber);
  suite_cmd->add_option("--n-eval", suite_args.n_eval, "eval examples per task")
      ->check(CLI::PositiveNumber);
  suite_cmd->add_option("--out", suite_args.out, "output path for suite.json");

  TrainArgs train_args;
  CLI::App* train_cmd =
      app.add_subcommand("train", "pretrain the base model and train upstream adapters");
  train_cmd->add_option("--suite", train_args.suite, "suite.json path");
  train_cmd->add_option("--registry", train_args.registry,
                        "registry dir (default $LORAHUB_HOME or ./registry)");
  train_cmd->add_option("--seed", train_args.seed, "training seed");
  train_cmd->add_option("--rank", train_args.rank, "adapter rank")->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", train_args.epochs, "adapter training epochs")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", train_args.batch_size, "minibatch size")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", train_args.lr, "adapter learning rate");
  train_cmd->add_option("--pretrain-lr", train_args.pretrain_lr, "base pretraining rate");
  train_cmd->add_option("--pretrain-epochs", train_args.pretrain_epochs,
                        "base pretraining epochs")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--timestamp", train_args.timestamp,
                        "ISO-8601 stamp for module metadata (default: now)");

  AdaptArgs adapt_args;
  CLI::App* adapt_cmd = app.add_subcommand("adapt", "adapt to unseen tasks and write results");
  adapt_cmd->add_option("--suite", adapt_args.suite, "suite.json path");
  adapt_cmd->add_option("--registry", adapt_args.registry,
                        "registry dir (default $LORAHUB_HOME or ./registry)");
  adapt_cmd->add_option("--out-dir", adapt_args.out_dir, "output directory");
  adapt_cmd->add_option("--tasks", adapt_args.tasks, "task ids (default: all unseen)");
  adapt_cmd->add_option("--shots", adapt_args.shots, "few-shot examples |Q|")
      ->check(CLI::PositiveNumber);
  adapt_cmd->add_option("--budget", adapt_args.budget, "max loss evaluations K")
      ->check(CLI::PositiveNumber);
  adapt_cmd->add_option("--alpha", adapt_args.alpha, "L1 coefficient")
      ->check(CLI::NonNegativeNumber);
  adapt_cmd->add_option("--bound", adapt_args.bound, "weight box bound")
      ->check(CLI::PositiveNumber);
  adapt_cmd->add_option("--candidates", adapt_args.candidates, "prefiltered candidate count")
      ->check(CLI::PositiveNumber);
  adapt_cmd->add_option("--runs", adapt_args.runs, "seeded runs per task")
      ->check(CLI::PositiveNumber);
  adapt_cmd->add_option("--seed", adapt_args.seed, "master seed");
  adapt_cmd->add_option("--jobs", adapt_args.jobs, "worker parallelism")
      ->check(CLI::PositiveNumber);
  adapt_cmd->add_flag("--select-raw", adapt_args.select_raw,
                      "select final weights by raw loss instead of the regularized objective");

  AnalyzeArgs analyze_args;
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "usefulness table and markdown report");
  analyze_cmd->add_option("--results", analyze_args.results, "results.json path");
  analyze_cmd->add_option("--out-dir", analyze_args.out_dir, "output directory");

  std::string manifest_path;
  CLI::App* replay_cmd = app.add_subcommand("replay", "re-execute a command from its manifest");
  replay_cmd->add_option("--manifest", manifest_path, "manifest.json path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (show_defaults) {
      std::cout << defaults::show_defaults_text();
      return 0;
    }
    if (suite_cmd->parsed()) return run_suite(suite_args);
    if (train_cmd->parsed()) return run_train(train_args);
    if (adapt_cmd->parsed()) return run_adapt(adapt_args);
    if (analyze_cmd->parsed()) return run_analyze(analyze_args);
    if (replay_cmd->parsed()) return run_replay(manifest_path);
    std::cerr << app.help();
    return 2;
  } catch (const EmptyRegistryError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NotFoundError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
