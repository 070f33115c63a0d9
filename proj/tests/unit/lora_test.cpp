// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "lorahub/errors.hpp"
#include "lorahub/lora.hpp"
#include "test_util.hpp"

using namespace lorahub;
using testutil::double_sum_delta;
using testutil::random_module;
using testutil::rel_frobenius;

namespace {

std::vector<std::pair<std::string, std::pair<int, int>>> two_layers(int d1, int k1, int d2,
                                                                    int k2) {
  return {{"fc1", {d1, k1}}, {"fc2", {d2, k2}}};
}

}  // namespace

TEST_CASE("compose single module with weight one reproduces the module") {
  Rng rng(1);
  const LoraModule m = random_module(rng, "m0", 2, two_layers(4, 5, 5, 3));
  const std::vector<LoraModule> mods{m};
  const ComposedModule c = compose(mods, {{1.0}, 1.5});
  for (size_t l = 0; l < m.layers.size(); ++l) {
    CHECK(c.module.layers[l].factors.a == m.layers[l].factors.a);
    CHECK(c.module.layers[l].factors.b == m.layers[l].factors.b);
  }
  CHECK(rel_frobenius(effective_delta(c, "fc1"),
                      matmul(m.layers[0].factors.a, m.layers[0].factors.b)) == 0.0);
}

TEST_CASE("compose with all-zero weights gives the zero update") {
  Rng rng(2);
  std::vector<LoraModule> mods;
  for (int i = 0; i < 3; ++i) {
    mods.push_back(random_module(rng, "m" + std::to_string(i), 2, two_layers(4, 5, 5, 3)));
  }
  const ComposedModule c = compose(mods, {{0.0, 0.0, 0.0}, 1.5});
  for (const auto& layer : c.module.layers) {
    for (double v : layer.factors.a.data()) CHECK(v == 0.0);
    for (double v : layer.factors.b.data()) CHECK(v == 0.0);
  }
  const Matrix delta = effective_delta(c, "fc2");
  for (double v : delta.data()) CHECK(v == 0.0);
}

TEST_CASE("two modules, unit weights: explicit four-term expansion") {
  Rng rng(3);
  std::vector<LoraModule> mods;
  mods.push_back(random_module(rng, "a", 2, {{"fc", {6, 6}}}));
  mods.push_back(random_module(rng, "b", 2, {{"fc", {6, 6}}}));
  const ComposedModule c = compose(mods, {{1.0, 1.0}, 1.5});

  const Matrix& a1 = mods[0].layers[0].factors.a;
  const Matrix& b1 = mods[0].layers[0].factors.b;
  const Matrix& a2 = mods[1].layers[0].factors.a;
  const Matrix& b2 = mods[1].layers[0].factors.b;
  Matrix want = matmul(a1, b1);
  add_scaled(want, 1.0, matmul(a1, b2));
  add_scaled(want, 1.0, matmul(a2, b1));
  add_scaled(want, 1.0, matmul(a2, b2));

  CHECK(rel_frobenius(effective_delta(c, "fc"), want) < 1e-12);
}

TEST_CASE("effective_delta equals the brute-force double sum") {
  Rng rng(4);
  std::vector<LoraModule> mods;
  std::vector<double> w;
  for (int i = 0; i < 3; ++i) {
    mods.push_back(random_module(rng, "m" + std::to_string(i), 3, two_layers(8, 6, 6, 4)));
    w.push_back(3.0 * rng.next_double() - 1.5);
  }
  const ComposedModule c = compose(mods, {w, 1.5});
  CHECK(rel_frobenius(effective_delta(c, "fc1"), double_sum_delta(mods, w, "fc1")) < 1e-9);
  CHECK(rel_frobenius(effective_delta(c, "fc2"), double_sum_delta(mods, w, "fc2")) < 1e-9);
}

TEST_CASE("effective_delta rejects unknown layers") {
  Rng rng(5);
  const std::vector<LoraModule> mods{random_module(rng, "m", 2, two_layers(4, 4, 4, 4))};
  const ComposedModule c = compose(mods, {{0.5}, 1.5});
  CHECK_THROWS_AS(effective_delta(c, "nope"), LookupError);
}

TEST_CASE("compose errors: arity, rank mismatch, missing layer") {
  Rng rng(6);
  std::vector<LoraModule> mods;
  mods.push_back(random_module(rng, "m0", 4, two_layers(4, 5, 5, 3)));
  mods.push_back(random_module(rng, "m1", 4, two_layers(4, 5, 5, 3)));

  CHECK_THROWS_AS(compose(mods, {{1.0}, 1.5}), ArityError);
  CHECK_THROWS_AS(compose(std::span<const LoraModule>{}, {{}, 1.5}), ArityError);

  std::vector<LoraModule> bad_rank{mods[0], random_module(rng, "m8", 8, two_layers(4, 5, 5, 3))};
  try {
    compose(bad_rank, {{1.0, 1.0}, 1.5});
    FAIL("expected IncompatibleModulesError");
  } catch (const IncompatibleModulesError& e) {
    CHECK(std::string(e.what()).find("rank mismatch") != std::string::npos);
    CHECK(std::string(e.what()).find("m8") != std::string::npos);
  }

  LoraModule missing = random_module(rng, "mmiss", 4, {{"fc1", {4, 5}}});
  std::vector<LoraModule> bad_layers{mods[0], missing};
  try {
    compose(bad_layers, {{1.0, 1.0}, 1.5});
    FAIL("expected IncompatibleModulesError");
  } catch (const IncompatibleModulesError& e) {
    CHECK(std::string(e.what()).find("fc2") != std::string::npos);
  }
}

TEST_CASE("validate_compatibility reports without throwing") {
  Rng rng(7);
  std::vector<LoraModule> ok;
  ok.push_back(random_module(rng, "a", 4, two_layers(4, 5, 5, 3)));
  ok.push_back(random_module(rng, "b", 4, two_layers(4, 5, 5, 3)));
  CHECK(validate_compatibility(ok).ok);

  std::vector<LoraModule> bad;
  bad.push_back(random_module(rng, "r4", 4, two_layers(4, 5, 5, 3)));
  bad.push_back(random_module(rng, "r8", 8, two_layers(4, 5, 5, 3)));
  const CompatibilityReport report = validate_compatibility(bad);
  CHECK_FALSE(report.ok);
  REQUIRE_FALSE(report.problems.empty());
  CHECK(report.problems[0].module == "r8");
  CHECK(report.problems[0].reason.find("rank mismatch") != std::string::npos);

  std::vector<LoraModule> gap;
  gap.push_back(random_module(rng, "full", 4, two_layers(4, 5, 5, 3)));
  gap.push_back(random_module(rng, "partial", 4, {{"fc1", {4, 5}}}));
  const CompatibilityReport gap_report = validate_compatibility(gap);
  CHECK_FALSE(gap_report.ok);
  bool names_layer = false;
  for (const Incompatibility& p : gap_report.problems) {
    if (p.layer == "fc2") names_layer = true;
  }
  CHECK(names_layer);
}

TEST_CASE("property: brute-force equivalence on random shapes") {
  Rng rng(8);
  for (int rep = 0; rep < 60; ++rep) {
    const int n = 1 + rng.next_below(5);
    const int rank = 1 + rng.next_below(4);
    const int d = 1 + rng.next_below(16);
    const int k = 1 + rng.next_below(16);
    std::vector<LoraModule> mods;
    std::vector<double> w;
    for (int i = 0; i < n; ++i) {
      mods.push_back(random_module(rng, "m" + std::to_string(i), rank, {{"fc", {d, k}}}));
      w.push_back(3.0 * rng.next_double() - 1.5);
    }
    const ComposedModule c = compose(mods, {w, 1.5});
    CHECK(rel_frobenius(effective_delta(c, "fc"), double_sum_delta(mods, w, "fc")) < 1e-9);
  }
}

TEST_CASE("property: degree-2 homogeneity in the weights") {
  Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 1 + rng.next_below(4);
    std::vector<LoraModule> mods;
    std::vector<double> w;
    for (int i = 0; i < n; ++i) {
      mods.push_back(random_module(rng, "m" + std::to_string(i), 2, {{"fc", {6, 5}}}));
      w.push_back(2.0 * rng.next_double() - 1.0);
    }
    const double scale = 0.25 + 2.0 * rng.next_double();
    std::vector<double> sw = w;
    for (double& v : sw) v *= scale;
    const Matrix base = effective_delta(compose(mods, {w, 10.0}), "fc");
    const Matrix scaled_delta = effective_delta(compose(mods, {sw, 10.0}), "fc");
    CHECK(rel_frobenius(scaled_delta, scaled(scale * scale, base)) < 1e-12);
  }
}

TEST_CASE("property: one-hot weights recover a module bit-for-bit") {
  Rng rng(10);
  std::vector<LoraModule> mods;
  for (int i = 0; i < 4; ++i) {
    mods.push_back(random_module(rng, "m" + std::to_string(i), 3, two_layers(5, 6, 6, 4)));
  }
  // stress values that ordinary sums would perturb
  mods[2].layers[0].factors.a.at(0, 0) = -0.0;
  mods[2].layers[0].factors.a.at(0, 1) = std::numeric_limits<double>::denorm_min();
  mods[2].layers[1].factors.b.at(1, 1) = -std::numeric_limits<double>::denorm_min();

  for (size_t target = 0; target < mods.size(); ++target) {
    std::vector<double> w(mods.size(), 0.0);
    w[target] = 1.0;
    const ComposedModule c = compose(mods, {w, 1.5});
    for (size_t l = 0; l < mods[target].layers.size(); ++l) {
      const auto bits_equal = [](const Matrix& x, const Matrix& y) {
        if (!x.same_shape(y)) return false;
        for (size_t i = 0; i < x.data().size(); ++i) {
          if (std::memcmp(&x.data()[i], &y.data()[i], sizeof(double)) != 0) return false;
        }
        return true;
      };
      CHECK(bits_equal(c.module.layers[l].factors.a, mods[target].layers[l].factors.a));
      CHECK(bits_equal(c.module.layers[l].factors.b, mods[target].layers[l].factors.b));
    }
  }
}

TEST_CASE("property: joint permutation leaves the composition unchanged") {
  Rng rng(11);
  std::vector<LoraModule> mods;
  std::vector<double> w;
  for (int i = 0; i < 5; ++i) {
    mods.push_back(random_module(rng, "m" + std::to_string(i), 2, two_layers(5, 4, 4, 6)));
    w.push_back(3.0 * rng.next_double() - 1.5);
  }
  const ComposedModule base = compose(mods, {w, 1.5});

  std::vector<size_t> perm{3, 0, 4, 1, 2};
  std::vector<LoraModule> pm;
  std::vector<double> pw;
  for (size_t idx : perm) {
    pm.push_back(mods[idx]);
    pw.push_back(w[idx]);
  }
  const ComposedModule permuted = compose(pm, {pw, 1.5});
  for (size_t l = 0; l < base.module.layers.size(); ++l) {
    CHECK(base.module.layers[l].factors.a == permuted.module.layers[l].factors.a);
    CHECK(base.module.layers[l].factors.b == permuted.module.layers[l].factors.b);
  }
}
