// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "lorahub/errors.hpp"
#include "lorahub/taskgen.hpp"
#include "test_util.hpp"

using namespace lorahub;
namespace fs = std::filesystem;

namespace {

bool batches_bit_equal(const Batch& a, const Batch& b) {
  if (a.labels != b.labels) return false;
  if (!a.inputs.same_shape(b.inputs)) return false;
  return std::memcmp(a.inputs.data().data(), b.inputs.data().data(),
                     a.inputs.data().size() * 8) == 0;
}

}  // namespace

TEST_CASE("generate is deterministic under the spec seed") {
  TaskSpec spec;
  spec.task_id = "t";
  spec.kind = TaskKind::teacher;
  spec.teacher_seed = 77;
  spec.seed = 5;
  spec.n_train = 128;
  spec.n_eval = 64;
  const TaskData a = generate(spec, {});
  const TaskData b = generate(spec, {});
  CHECK(batches_bit_equal(a.train, b.train));
  CHECK(batches_bit_equal(a.eval, b.eval));
  CHECK_FALSE(batches_bit_equal(a.train, a.eval));
}

TEST_CASE("identity label permutation reproduces the teacher task labels") {
  TaskSpec teacher;
  teacher.task_id = "base";
  teacher.kind = TaskKind::teacher;
  teacher.teacher_seed = 11;
  teacher.seed = 3;
  teacher.n_train = 96;
  teacher.n_eval = 48;

  TaskSpec permuted = teacher;
  permuted.task_id = "perm";
  permuted.kind = TaskKind::permutation;
  permuted.permutation.resize(taskdims::kClasses);
  for (int i = 0; i < taskdims::kClasses; ++i) permuted.permutation[static_cast<size_t>(i)] = i;

  const TaskData a = generate(teacher, {});
  const TaskData b = generate(permuted, {});
  CHECK(batches_bit_equal(a.train, b.train));
  CHECK(batches_bit_equal(a.eval, b.eval));
}

TEST_CASE("teacher tasks are learnable by full fine-tuning") {
  TaskSpec spec;
  spec.task_id = "learnable";
  spec.kind = TaskKind::teacher;
  spec.teacher_seed = 2024;
  spec.seed = 9;
  spec.n_train = 512;
  spec.n_eval = 256;
  const TaskData data = generate(spec, {});

  BaseModel model = init_model(default_arch(), 1);
  fit_full(model, data.train, 0.05, 40, 32, 7);
  const EvalMetrics metrics = evaluate(model, nullptr, data.eval);
  CHECK(metrics.accuracy >= 0.9);
}

TEST_CASE("class balance holds for large batches") {
  TaskSpec spec;
  spec.task_id = "balanced";
  spec.kind = TaskKind::teacher;
  spec.teacher_seed = 31;
  spec.seed = 4;
  spec.n_train = 64 * taskdims::kClasses;
  spec.n_eval = 64;
  const TaskData data = generate(spec, {});
  std::vector<int> counts(taskdims::kClasses, 0);
  for (int label : data.train.labels) ++counts[static_cast<size_t>(label)];
  for (int c : counts) {
    const double freq = static_cast<double>(c) / spec.n_train;
    CHECK(freq >= 0.5 / taskdims::kClasses);
    CHECK(freq <= 2.0 / taskdims::kClasses);
  }
}

TEST_CASE("train and eval inputs never collide") {
  TaskSpec spec;
  spec.task_id = "disjoint";
  spec.kind = TaskKind::teacher;
  spec.teacher_seed = 13;
  spec.seed = 21;
  spec.n_train = 128;
  spec.n_eval = 128;
  const TaskData data = generate(spec, {});
  for (int i = 0; i < data.train.size(); ++i) {
    for (int j = 0; j < data.eval.size(); ++j) {
      bool same = true;
      for (int k = 0; k < data.train.inputs.cols(); ++k) {
        if (data.train.inputs.at(i, k) != data.eval.inputs.at(j, k)) {
          same = false;
          break;
        }
      }
      CHECK_FALSE(same);
    }
  }
}

TEST_CASE("rotation task differs from its base teacher task") {
  TaskSpec teacher;
  teacher.task_id = "base";
  teacher.kind = TaskKind::teacher;
  teacher.teacher_seed = 55;
  teacher.seed = 8;
  teacher.n_train = 256;
  teacher.n_eval = 64;

  TaskSpec rotated = teacher;
  rotated.task_id = "rot";
  rotated.kind = TaskKind::rotation;
  rotated.rotation = {{0, 1, 0.8}, {2, 3, 1.1}, {4, 5, 0.6}};

  const TaskData a = generate(teacher, {});
  const TaskData b = generate(rotated, {});
  // same input stream geometry, different labels
  int diff = 0;
  for (size_t i = 0; i < a.train.labels.size(); ++i) {
    if (a.train.labels[i] != b.train.labels[i]) ++diff;
  }
  CHECK(diff > 0);
}

TEST_CASE("mixture of a task with itself reproduces its labeling process") {
  TaskSpec teacher;
  teacher.task_id = "solo";
  teacher.kind = TaskKind::teacher;
  teacher.teacher_seed = 99;
  teacher.seed = 12;
  teacher.n_train = 96;
  teacher.n_eval = 32;

  TaskSpec mix = teacher;
  mix.task_id = "mix";
  mix.kind = TaskKind::mixture;
  mix.mixture = {{"solo", 1.0}};

  TaskCatalog catalog{{"solo", teacher}};
  const TaskData a = generate(teacher, catalog);
  const TaskData b = generate(mix, catalog);
  CHECK(batches_bit_equal(a.train, b.train));
}

TEST_CASE("mixture validation") {
  TaskSpec bad;
  bad.task_id = "bad";
  bad.kind = TaskKind::mixture;
  bad.n_train = 16;
  bad.n_eval = 16;
  bad.mixture = {{"x", 0.5}, {"y", 0.6}};
  CHECK_THROWS_AS(generate(bad, {}), SpecError);

  bad.mixture = {{"x", 0.5}, {"y", 0.5}};
  CHECK_THROWS_AS(generate(bad, {}), SpecError);  // unknown component

  TaskSpec nested_base;
  nested_base.task_id = "x";
  nested_base.kind = TaskKind::mixture;
  nested_base.mixture = {{"y", 1.0}};
  TaskCatalog catalog{{"x", nested_base}};
  bad.mixture = {{"x", 1.0}};
  CHECK_THROWS_AS(generate(bad, catalog), SpecError);
}

TEST_CASE("make_suite: structure, disjoint ids, mixtures reference upstream teachers") {
  const Suite suite = make_suite(7, 40, 20);
  CHECK(suite.upstream.size() == 40);
  CHECK(suite.unseen.size() == 20);

  std::set<std::string> upstream_ids;
  for (const TaskSpec& s : suite.upstream) upstream_ids.insert(s.task_id);
  CHECK(upstream_ids.size() == 40);

  int mixtures = 0;
  for (const TaskSpec& s : suite.unseen) {
    CHECK(upstream_ids.count(s.task_id) == 0);
    if (s.kind == TaskKind::mixture) {
      ++mixtures;
      double sum = 0.0;
      for (const MixtureComponent& c : s.mixture) {
        CHECK(upstream_ids.count(c.task_id) == 1);
        sum += c.weight;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
  CHECK(mixtures >= 1);

  // unseen teacher seeds are held out from upstream teacher seeds
  std::set<uint64_t> upstream_teachers;
  for (const TaskSpec& s : suite.upstream) upstream_teachers.insert(s.teacher_seed);
  for (const TaskSpec& s : suite.unseen) {
    if (s.kind == TaskKind::teacher) CHECK(upstream_teachers.count(s.teacher_seed) == 0);
  }

  // catalog resolves every mixture component
  const TaskCatalog catalog = catalog_of(suite);
  CHECK(catalog.size() == 60);
}

TEST_CASE("suite json round-trips byte-identically") {
  const Suite suite = make_suite(123, 8, 5);
  const fs::path file =
      fs::temp_directory_path() / "lorahub_suite_test.json";
  write_suite(suite, file);
  const Suite back = read_suite(file);
  const fs::path file2 = fs::temp_directory_path() / "lorahub_suite_test2.json";
  write_suite(back, file2);

  std::ifstream a(file, std::ios::binary);
  std::ifstream b(file2, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK_FALSE(sa.empty());
  fs::remove(file);
  fs::remove(file2);

  CHECK_THROWS_AS(read_suite(fs::temp_directory_path() / "lorahub_nope.json"), NotFoundError);
}

TEST_CASE("unknown kind strings are rejected") {
  CHECK_THROWS_AS(task_kind_from_string("boolean-expressions"), SpecError);
  CHECK(task_kind_from_string("teacher-network") == TaskKind::teacher);
  CHECK(task_kind_from_string("rotation-variant") == TaskKind::rotation);
  CHECK(task_kind_from_string("label-permutation") == TaskKind::permutation);
  CHECK(task_kind_from_string("mixture") == TaskKind::mixture);
}
