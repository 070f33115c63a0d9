// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lorahub/model.hpp"
#include "lorahub/tensor.hpp"

namespace lorahub {

enum class TaskKind { teacher, rotation, permutation, mixture };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

/// One Givens rotation applied to the input before the teacher labels it.
struct RotationStep {
  int axis_a = 0;
  int axis_b = 1;
  double angle = 0.0;
};

struct MixtureComponent {
  std::string task_id;
  double weight = 0.0;
};

/// Every task shares the N(0, I) input distribution and differs only in its
/// labeling process:
///   teacher      — argmax of a seeded random ReLU network, class-balanced
///                  by calibrated offsets, low-margin inputs rejected
///   rotation     — teacher labels of a rotated copy of the input
///   permutation  — teacher labels passed through a label permutation
///   mixture      — each example drawn from a weighted component task
struct TaskSpec {
  std::string task_id;
  TaskKind kind = TaskKind::teacher;
  uint64_t seed = 0;  // data stream seed
  int n_train = 512;
  int n_eval = 256;

  /// Tasks in one suite share a feature subspace and a common anchor set;
  /// teacher_seed jitters the anchors per task, which is what makes
  /// upstream adapters transferable.
  uint64_t space_seed = 0;
  uint64_t teacher_seed = 0;             // teacher, rotation, permutation
  /// Scale of the per-task anchor perturbation around the shared anchor
  /// set; held-out tasks use a larger value so they sit farther from
  /// every upstream task.
  double anchor_jitter = 0.7;
  std::vector<RotationStep> rotation;    // rotation only
  std::vector<int> permutation;          // permutation only, size = classes
  std::vector<MixtureComponent> mixture; // mixture only, weights sum to 1
};

struct TaskData {
  Batch train;
  Batch eval;
};

using TaskCatalog = std::map<std::string, TaskSpec>;

/// Labeled train/eval batches from the spec's generative process,
/// deterministic under spec.seed; train and eval use disjoint substreams.
/// The catalog resolves mixture components (unused for other kinds).
TaskData generate(const TaskSpec& spec, const TaskCatalog& catalog);

struct Suite {
  uint64_t seed = 0;
  std::vector<TaskSpec> upstream;
  std::vector<TaskSpec> unseen;
};

/// Upstream tasks cycle through teacher/teacher/rotation/permutation;
/// unseen tasks are mostly 3-component mixtures of upstream teachers plus
/// some fresh held-out teachers.
Suite make_suite(uint64_t seed, int n_upstream, int n_unseen);

TaskCatalog catalog_of(const Suite& suite);

void write_suite(const Suite& suite, const std::filesystem::path& path);
Suite read_suite(const std::filesystem::path& path);

namespace taskdims {
inline constexpr int kInputDim = 32;
inline constexpr int kClasses = 8;
// Teachers read a low-dimensional projection of the input; boundaries live
// in a small subspace so 512 examples pin them down.
inline constexpr int kTeacherEffectiveDim = 6;
}  // namespace taskdims

}  // namespace lorahub
