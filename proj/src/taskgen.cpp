// SPDX-License-Identifier: Apache-2.0
#include "lorahub/taskgen.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "lorahub/errors.hpp"

using json = nlohmann::json;

namespace lorahub {

namespace {

using taskdims::kClasses;
using taskdims::kInputDim;
using taskdims::kTeacherEffectiveDim;


constexpr int kCalibrationSamples = 2048;
constexpr int kBalanceIterations = 40;
constexpr double kMarginRejectQuantile = 0.65;
constexpr int kMaxBatchAttempts = 200;
constexpr int kMaxExampleAttempts = 1000;

// Seed-stream tags.
constexpr uint64_t kTagTeacherInit = 0x30;
constexpr uint64_t kTagSpaceInit = 0x34;
constexpr uint64_t kTagCalibration = 0x31;
constexpr uint64_t kTagTrainStream = 0x32;
constexpr uint64_t kTagEvalStream = 0x33;

// Labels come from directional anchor scoring in a low-dimensional
// projection of the input: score_c = mu_c . u + offset_c. Every gaussian
// anchor direction owns a cone, so no class can be dominated away.
struct TeacherNet {
  Matrix proj;     // in x eff
  Matrix anchors;  // eff x classes, one anchor column per class
  std::vector<double> offsets;
  double margin_tau = 0.0;
};

void teacher_logits(const TeacherNet& t, std::span<const double> x, std::span<double> out) {
  double u[kTeacherEffectiveDim];
  for (int e = 0; e < kTeacherEffectiveDim; ++e) {
    double s = 0.0;
    for (int i = 0; i < kInputDim; ++i) s += x[static_cast<size_t>(i)] * t.proj.at(i, e);
    u[e] = s;
  }
  for (int c = 0; c < kClasses; ++c) {
    double s = t.offsets[static_cast<size_t>(c)];
    for (int e = 0; e < kTeacherEffectiveDim; ++e) s += u[e] * t.anchors.at(e, c);
    out[static_cast<size_t>(c)] = s;
  }
}

// label plus top-2 margin in one pass
std::pair<int, double> teacher_label(const TeacherNet& t, std::span<const double> x) {
  double logits[kClasses];
  teacher_logits(t, x, logits);
  int best = 0;
  for (int c = 1; c < kClasses; ++c)
    if (logits[c] > logits[best]) best = c;
  double second = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < kClasses; ++c)
    if (c != best) second = std::max(second, logits[c]);
  return {best, logits[best] - second};
}

// Norms are targets in u-space; place_anchors takes per-coordinate stds.
constexpr double kSharedAnchorRadius = 1.2;
constexpr double kAnchorJitter = 0.7;
constexpr double kHeldOutJitter = 1.5;
constexpr double kMinAnchorDistance = 0.9;

double per_coord_std(double target_norm) {
  return target_norm / std::sqrt(static_cast<double>(kTeacherEffectiveDim));
}

double min_distance_to_previous(const Matrix& anchors, int c) {
  double best = std::numeric_limits<double>::infinity();
  for (int o = 0; o < c; ++o) {
    double d2 = 0.0;
    for (int e = 0; e < kTeacherEffectiveDim; ++e) {
      const double d = anchors.at(e, c) - anchors.at(e, o);
      d2 += d * d;
    }
    best = std::min(best, std::sqrt(d2));
  }
  return best;
}

// One anchor column per class, each at least kMinAnchorDistance from the
// ones placed before it; column c is centered on center(:, c) with
// gaussian jitter. Falls back to the widest draw seen if the cap is hit.
Matrix place_anchors(Rng& rng, const Matrix* center, double jitter) {
  Matrix anchors(kTeacherEffectiveDim, kClasses);
  for (int c = 0; c < kClasses; ++c) {
    double best_spread = -1.0;
    std::vector<double> best_column(kTeacherEffectiveDim);
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (int e = 0; e < kTeacherEffectiveDim; ++e) {
        anchors.at(e, c) = (center != nullptr ? center->at(e, c) : 0.0) +
                           jitter * rng.next_gaussian();
      }
      const double spread = c == 0 ? std::numeric_limits<double>::infinity()
                                   : min_distance_to_previous(anchors, c);
      if (spread >= kMinAnchorDistance) {
        best_spread = spread;
        break;
      }
      if (spread > best_spread) {
        best_spread = spread;
        for (int e = 0; e < kTeacherEffectiveDim; ++e) best_column[static_cast<size_t>(e)] = anchors.at(e, c);
      }
    }
    if (best_spread < kMinAnchorDistance && c > 0) {
      for (int e = 0; e < kTeacherEffectiveDim; ++e) anchors.at(e, c) = best_column[static_cast<size_t>(e)];
    }
  }
  return anchors;
}

TeacherNet make_teacher(uint64_t teacher_seed, uint64_t space_seed, double jitter) {
  TeacherNet t;
  // Suite-shared geometry: projection and common anchors.
  Rng space(seed_mix(space_seed, kTagSpaceInit));
  t.proj = gaussian_matrix(space, kInputDim, kTeacherEffectiveDim, 1.0 / std::sqrt(kInputDim));
  Matrix shared = place_anchors(space, nullptr, per_coord_std(kSharedAnchorRadius));

  // Per-task jitter around the shared anchors, kept well separated.
  Rng init(seed_mix(teacher_seed, kTagTeacherInit));
  t.anchors = place_anchors(init, &shared, per_coord_std(jitter));
  t.offsets.assign(kClasses, 0.0);

  // Calibration set; offsets are tuned so argmax shares come out balanced.
  Rng cal(seed_mix(teacher_seed, kTagCalibration));
  Matrix cal_inputs = gaussian_matrix(cal, kCalibrationSamples, kInputDim, 1.0);
  Matrix raw(kCalibrationSamples, kClasses);
  for (int r = 0; r < kCalibrationSamples; ++r) {
    std::span<const double> x(&cal_inputs.at(r, 0), kInputDim);
    teacher_logits(t, x, std::span<double>(&raw.at(r, 0), kClasses));
  }
  // Joint calibration: the offsets must balance the argmax shares of the
  // samples that survive the margin rejection, so the threshold and the
  // offsets are iterated together.
  const double target = 1.0 / kClasses;
  std::vector<int> labels(kCalibrationSamples);
  std::vector<double> margins(kCalibrationSamples);
  std::vector<double> sorted_margins(kCalibrationSamples);
  for (int iter = 0; iter < kBalanceIterations; ++iter) {
    for (int r = 0; r < kCalibrationSamples; ++r) {
      int best = 0;
      for (int c = 1; c < kClasses; ++c)
        if (raw.at(r, c) + t.offsets[static_cast<size_t>(c)] >
            raw.at(r, best) + t.offsets[static_cast<size_t>(best)])
          best = c;
      double second = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < kClasses; ++c)
        if (c != best)
          second = std::max(second, raw.at(r, c) + t.offsets[static_cast<size_t>(c)]);
      labels[static_cast<size_t>(r)] = best;
      margins[static_cast<size_t>(r)] = raw.at(r, best) + t.offsets[static_cast<size_t>(best)] - second;
    }
    sorted_margins = margins;
    std::sort(sorted_margins.begin(), sorted_margins.end());
    t.margin_tau =
        sorted_margins[static_cast<size_t>(kMarginRejectQuantile * kCalibrationSamples)];

    std::vector<int> counts(kClasses, 0);
    int accepted = 0;
    for (int r = 0; r < kCalibrationSamples; ++r) {
      if (margins[static_cast<size_t>(r)] >= t.margin_tau) {
        ++counts[static_cast<size_t>(labels[static_cast<size_t>(r)])];
        ++accepted;
      }
    }
    for (int c = 0; c < kClasses; ++c) {
      const double share =
          std::max(static_cast<double>(counts[static_cast<size_t>(c)]) / accepted,
                   0.25 / accepted);
      t.offsets[static_cast<size_t>(c)] +=
          0.4 / (1.0 + iter / 8.0) * (std::log(target) - std::log(share));
    }
    if (std::getenv("LORAHUB_CAL_DEBUG") != nullptr) {
      std::fprintf(stderr, "iter %d shares:", iter);
      for (int c = 0; c < kClasses; ++c)
        std::fprintf(stderr, " %.3f", static_cast<double>(counts[static_cast<size_t>(c)]) / accepted);
      std::fprintf(stderr, " tau=%.3f\n", t.margin_tau);
    }
  }

  // Final threshold under the final offsets.
  for (int r = 0; r < kCalibrationSamples; ++r) {
    int best = 0;
    for (int c = 1; c < kClasses; ++c)
      if (raw.at(r, c) + t.offsets[static_cast<size_t>(c)] >
          raw.at(r, best) + t.offsets[static_cast<size_t>(best)])
        best = c;
    double second = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < kClasses; ++c)
      if (c != best) second = std::max(second, raw.at(r, c) + t.offsets[static_cast<size_t>(c)]);
    margins[static_cast<size_t>(r)] = raw.at(r, best) + t.offsets[static_cast<size_t>(best)] - second;
  }
  sorted_margins = margins;
  std::sort(sorted_margins.begin(), sorted_margins.end());
  t.margin_tau =
      sorted_margins[static_cast<size_t>(kMarginRejectQuantile * kCalibrationSamples)];
  return t;
}

// A fully resolved labeling process for one non-mixture task.
struct Labeler {
  TeacherNet teacher;
  std::vector<RotationStep> rotation;
  std::vector<int> permutation;  // empty = identity

  // Draws one accepted (input, label) pair from the stream.
  int sample(Rng& rng, std::span<double> x_out) const {
    std::vector<double> rotated(static_cast<size_t>(kInputDim));
    for (int attempt = 0; attempt < kMaxExampleAttempts; ++attempt) {
      for (int i = 0; i < kInputDim; ++i) x_out[static_cast<size_t>(i)] = rng.next_gaussian();
      std::copy(x_out.begin(), x_out.end(), rotated.begin());
      for (const RotationStep& step : rotation) {
        const double c = std::cos(step.angle);
        const double s = std::sin(step.angle);
        const double xa = rotated[static_cast<size_t>(step.axis_a)];
        const double xb = rotated[static_cast<size_t>(step.axis_b)];
        rotated[static_cast<size_t>(step.axis_a)] = c * xa - s * xb;
        rotated[static_cast<size_t>(step.axis_b)] = s * xa + c * xb;
      }
      auto [label, margin] = teacher_label(teacher, rotated);
      if (margin < teacher.margin_tau) continue;
      return permutation.empty() ? label : permutation[static_cast<size_t>(label)];
    }
    throw SpecError("labeler rejected " + std::to_string(kMaxExampleAttempts) +
                    " consecutive draws; margin threshold is inconsistent");
  }
};

void validate_spec(const TaskSpec& spec) {
  if (spec.n_train < 1 || spec.n_eval < 1) {
    throw SpecError("task '" + spec.task_id + "': n_train and n_eval must be >= 1");
  }
  if (spec.anchor_jitter < 0.0) {
    throw SpecError("task '" + spec.task_id + "': anchor_jitter must be >= 0");
  }
  if (spec.kind == TaskKind::permutation) {
    if (static_cast<int>(spec.permutation.size()) != kClasses) {
      throw SpecError("task '" + spec.task_id + "': permutation must have " +
                      std::to_string(kClasses) + " entries");
    }
    std::vector<int> seen(kClasses, 0);
    for (int p : spec.permutation) {
      if (p < 0 || p >= kClasses || seen[static_cast<size_t>(p)]++) {
        throw SpecError("task '" + spec.task_id + "': not a permutation of 0.." +
                        std::to_string(kClasses - 1));
      }
    }
  }
  if (spec.kind == TaskKind::rotation) {
    for (const RotationStep& s : spec.rotation) {
      if (s.axis_a < 0 || s.axis_a >= kInputDim || s.axis_b < 0 || s.axis_b >= kInputDim ||
          s.axis_a == s.axis_b) {
        throw SpecError("task '" + spec.task_id + "': rotation axes out of range");
      }
    }
  }
  if (spec.kind == TaskKind::mixture) {
    if (spec.mixture.empty()) {
      throw SpecError("task '" + spec.task_id + "': mixture needs components");
    }
    double sum = 0.0;
    for (const MixtureComponent& c : spec.mixture) {
      if (c.weight < 0.0) throw SpecError("task '" + spec.task_id + "': negative mixture weight");
      sum += c.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw SpecError("task '" + spec.task_id + "': mixture weights sum to " +
                      std::to_string(sum) + ", expected 1");
    }
  }
}

Labeler labeler_for(const TaskSpec& spec) {
  Labeler lab;
  lab.teacher = make_teacher(spec.teacher_seed, spec.space_seed, spec.anchor_jitter);
  if (spec.kind == TaskKind::rotation) lab.rotation = spec.rotation;
  if (spec.kind == TaskKind::permutation) lab.permutation = spec.permutation;
  return lab;
}

Batch make_batch(const std::vector<Labeler>& labelers, std::span<const double> weights, int n,
                 Rng& rng, const std::string& task_id) {
  const bool check_balance = n >= 64 * kClasses;
  for (int attempt = 0; attempt < kMaxBatchAttempts; ++attempt) {
    Batch batch;
    batch.inputs = Matrix(n, kInputDim);
    batch.labels.resize(static_cast<size_t>(n));
    std::vector<int> counts(kClasses, 0);
    for (int r = 0; r < n; ++r) {
      size_t pick = 0;
      if (labelers.size() > 1) {
        const double u = rng.next_double();
        double acc = 0.0;
        pick = labelers.size() - 1;
        for (size_t c = 0; c < weights.size(); ++c) {
          acc += weights[c];
          if (u < acc) {
            pick = c;
            break;
          }
        }
      }
      std::span<double> row(&batch.inputs.at(r, 0), kInputDim);
      const int label = labelers[pick].sample(rng, row);
      batch.labels[static_cast<size_t>(r)] = label;
      ++counts[static_cast<size_t>(label)];
    }
    if (!check_balance) return batch;
    bool balanced = true;
    for (int c = 0; c < kClasses; ++c) {
      const double freq = static_cast<double>(counts[static_cast<size_t>(c)]) / n;
      if (freq < 0.5 / kClasses || freq > 2.0 / kClasses) {
        balanced = false;
        break;
      }
    }
    if (balanced) return batch;
  }
  throw SpecError("task '" + task_id + "': class balance unsatisfied after " +
                  std::to_string(kMaxBatchAttempts) + " batch draws");
}

json spec_to_json(const TaskSpec& spec) {
  json j{{"task_id", spec.task_id},
         {"kind", to_string(spec.kind)},
         {"seed", spec.seed},
         {"n_train", spec.n_train},
         {"n_eval", spec.n_eval},
         {"space_seed", spec.space_seed},
         {"anchor_jitter", spec.anchor_jitter}};
  switch (spec.kind) {
    case TaskKind::teacher:
      j["teacher_seed"] = spec.teacher_seed;
      break;
    case TaskKind::rotation: {
      j["teacher_seed"] = spec.teacher_seed;
      json steps = json::array();
      for (const RotationStep& s : spec.rotation) {
        steps.push_back({{"axis_a", s.axis_a}, {"axis_b", s.axis_b}, {"angle", s.angle}});
      }
      j["rotation"] = steps;
      break;
    }
    case TaskKind::permutation:
      j["teacher_seed"] = spec.teacher_seed;
      j["permutation"] = spec.permutation;
      break;
    case TaskKind::mixture: {
      json comps = json::array();
      for (const MixtureComponent& c : spec.mixture) {
        comps.push_back({{"task_id", c.task_id}, {"weight", c.weight}});
      }
      j["mixture"] = comps;
      break;
    }
  }
  return j;
}

TaskSpec spec_from_json(const json& j) {
  TaskSpec spec;
  spec.task_id = j.at("task_id").get<std::string>();
  spec.kind = task_kind_from_string(j.at("kind").get<std::string>());
  spec.seed = j.at("seed").get<uint64_t>();
  spec.n_train = j.at("n_train").get<int>();
  spec.n_eval = j.at("n_eval").get<int>();
  spec.space_seed = j.at("space_seed").get<uint64_t>();
  spec.anchor_jitter = j.at("anchor_jitter").get<double>();
  switch (spec.kind) {
    case TaskKind::teacher:
      spec.teacher_seed = j.at("teacher_seed").get<uint64_t>();
      break;
    case TaskKind::rotation: {
      spec.teacher_seed = j.at("teacher_seed").get<uint64_t>();
      for (const json& js : j.at("rotation")) {
        spec.rotation.push_back({js.at("axis_a").get<int>(), js.at("axis_b").get<int>(),
                                 js.at("angle").get<double>()});
      }
      break;
    }
    case TaskKind::permutation:
      spec.teacher_seed = j.at("teacher_seed").get<uint64_t>();
      spec.permutation = j.at("permutation").get<std::vector<int>>();
      break;
    case TaskKind::mixture: {
      for (const json& jc : j.at("mixture")) {
        spec.mixture.push_back(
            {jc.at("task_id").get<std::string>(), jc.at("weight").get<double>()});
      }
      break;
    }
  }
  return spec;
}

std::string padded_id(const char* prefix, int i) {
  std::string num = std::to_string(i);
  if (num.size() < 2) num.insert(num.begin(), '0');
  return std::string(prefix) + num;
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::teacher: return "teacher-network";
    case TaskKind::rotation: return "rotation-variant";
    case TaskKind::permutation: return "label-permutation";
    case TaskKind::mixture: return "mixture";
  }
  throw SpecError("unknown task kind value");
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "teacher-network") return TaskKind::teacher;
  if (s == "rotation-variant") return TaskKind::rotation;
  if (s == "label-permutation") return TaskKind::permutation;
  if (s == "mixture") return TaskKind::mixture;
  throw SpecError("unknown task kind '" + s + "'");
}

TaskData generate(const TaskSpec& spec, const TaskCatalog& catalog) {
  validate_spec(spec);

  std::vector<Labeler> labelers;
  std::vector<double> weights;
  if (spec.kind == TaskKind::mixture) {
    for (const MixtureComponent& c : spec.mixture) {
      auto it = catalog.find(c.task_id);
      if (it == catalog.end()) {
        throw SpecError("task '" + spec.task_id + "': mixture component '" + c.task_id +
                        "' is not in the catalog");
      }
      if (it->second.kind == TaskKind::mixture) {
        throw SpecError("task '" + spec.task_id + "': nested mixtures are not supported");
      }
      validate_spec(it->second);
      labelers.push_back(labeler_for(it->second));
      weights.push_back(c.weight);
    }
  } else {
    labelers.push_back(labeler_for(spec));
    weights.push_back(1.0);
  }

  TaskData data;
  Rng train_rng(seed_mix(spec.seed, kTagTrainStream));
  Rng eval_rng(seed_mix(spec.seed, kTagEvalStream));
  data.train = make_batch(labelers, weights, spec.n_train, train_rng, spec.task_id);
  data.eval = make_batch(labelers, weights, spec.n_eval, eval_rng, spec.task_id);
  return data;
}

Suite make_suite(uint64_t seed, int n_upstream, int n_unseen) {
  if (n_upstream < 1 || n_unseen < 1) {
    throw SpecError("make_suite: counts must be >= 1");
  }
  Suite suite;
  suite.seed = seed;

  // Upstream pattern, period 4: two fresh teachers, a rotation variant of
  // the first, a permutation variant of the second.
  std::vector<std::string> teacher_ids;
  std::vector<std::string> variant_ids;
  for (int i = 0; i < n_upstream; ++i) {
    TaskSpec spec;
    spec.task_id = padded_id("up", i);
    spec.space_seed = seed;
    spec.seed = seed_mix(seed, 2000 + static_cast<uint64_t>(i));
    const int phase = i % 4;
    if (phase <= 1 || i < 2) {
      spec.kind = TaskKind::teacher;
      spec.teacher_seed = seed_mix(seed, 1000 + static_cast<uint64_t>(i));
      teacher_ids.push_back(spec.task_id);
    } else if (phase == 2) {
      spec.kind = TaskKind::rotation;
      spec.teacher_seed = suite.upstream[static_cast<size_t>(i - 2)].teacher_seed;
      Rng rot(seed_mix(seed, 3000 + static_cast<uint64_t>(i)));
      for (int s = 0; s < 6; ++s) {
        const int a = rot.next_below(taskdims::kInputDim);
        int b = rot.next_below(taskdims::kInputDim - 1);
        if (b >= a) ++b;
        spec.rotation.push_back({a, b, 0.4 + 0.7 * rot.next_double()});
      }
      variant_ids.push_back(spec.task_id);
    } else {
      spec.kind = TaskKind::permutation;
      spec.teacher_seed = suite.upstream[static_cast<size_t>(i - 2)].teacher_seed;
      Rng perm(seed_mix(seed, 4000 + static_cast<uint64_t>(i)));
      spec.permutation.resize(taskdims::kClasses);
      std::iota(spec.permutation.begin(), spec.permutation.end(), 0);
      for (int k = taskdims::kClasses - 1; k > 0; --k) {
        std::swap(spec.permutation[static_cast<size_t>(k)],
                  spec.permutation[static_cast<size_t>(perm.next_below(k + 1))]);
      }
      bool identity = true;
      for (int k = 0; k < taskdims::kClasses; ++k) {
        if (spec.permutation[static_cast<size_t>(k)] != k) identity = false;
      }
      if (identity) std::rotate(spec.permutation.begin(), spec.permutation.begin() + 1,
                                spec.permutation.end());
      variant_ids.push_back(spec.task_id);
    }
    suite.upstream.push_back(std::move(spec));
  }

  for (int i = 0; i < n_unseen; ++i) {
    TaskSpec spec;
    spec.task_id = padded_id("un", i);
    spec.space_seed = seed;
    spec.seed = seed_mix(seed, 6000 + static_cast<uint64_t>(i));
    if (i % 4 == 3) {
      spec.kind = TaskKind::teacher;
      spec.teacher_seed = seed_mix(seed, 5000 + static_cast<uint64_t>(i));
      spec.anchor_jitter = kHeldOutJitter;
    } else {
      // The dominant component is a rotation or permutation variant:
      // tasks the frozen base is weakest at but some upstream adapter has
      // mastered, so composition has real room to help. The remainder is
      // split over plain teacher tasks.
      spec.kind = TaskKind::mixture;
      Rng mix(seed_mix(seed, 7000 + static_cast<uint64_t>(i)));
      const std::vector<std::string>& dominant_pool =
          variant_ids.empty() ? teacher_ids : variant_ids;
      const std::string dominant =
          dominant_pool[static_cast<size_t>(mix.next_below(static_cast<int>(dominant_pool.size())))];
      const double dominant_weight = 0.8 + 0.15 * mix.next_double();
      spec.mixture.push_back({dominant, dominant_weight});

      std::vector<std::string> rest = teacher_ids;
      std::erase(rest, dominant);
      const int extras = std::min<int>(2, static_cast<int>(rest.size()));
      double remaining = 1.0 - dominant_weight;
      for (int c = 0; c < extras; ++c) {
        const int j = c + mix.next_below(static_cast<int>(rest.size()) - c);
        std::swap(rest[static_cast<size_t>(c)], rest[static_cast<size_t>(j)]);
        const double share = c + 1 == extras ? remaining : remaining * (0.4 + 0.3 * mix.next_double());
        spec.mixture.push_back({rest[static_cast<size_t>(c)], share});
        remaining -= share;
      }
    }
    suite.unseen.push_back(std::move(spec));
  }
  return suite;
}

TaskCatalog catalog_of(const Suite& suite) {
  TaskCatalog catalog;
  for (const TaskSpec& s : suite.upstream) {
    if (!catalog.emplace(s.task_id, s).second) {
      throw SpecError("duplicate task_id '" + s.task_id + "' in suite");
    }
  }
  for (const TaskSpec& s : suite.unseen) {
    if (!catalog.emplace(s.task_id, s).second) {
      throw SpecError("duplicate task_id '" + s.task_id + "' in suite");
    }
  }
  return catalog;
}

void write_suite(const Suite& suite, const std::filesystem::path& path) {
  json upstream = json::array();
  for (const TaskSpec& s : suite.upstream) upstream.push_back(spec_to_json(s));
  json unseen = json::array();
  for (const TaskSpec& s : suite.unseen) unseen.push_back(spec_to_json(s));
  const json j{{"format_version", 1},
               {"seed", suite.seed},
               {"upstream", upstream},
               {"unseen", unseen}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw StorageError("short write to '" + path.string() + "'");
}

Suite read_suite(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("suite file '" + path.string() + "' not found");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("suite file is not valid JSON: " + std::string(e.what()));
  }
  Suite suite;
  try {
    if (j.at("format_version").get<int>() != 1) {
      throw FormatError("suite format_version not supported");
    }
    suite.seed = j.at("seed").get<uint64_t>();
    for (const json& js : j.at("upstream")) suite.upstream.push_back(spec_from_json(js));
    for (const json& js : j.at("unseen")) suite.unseen.push_back(spec_from_json(js));
  } catch (const json::exception& e) {
    throw FormatError("suite file is missing fields: " + std::string(e.what()));
  }
  return suite;
}

}  // namespace lorahub
