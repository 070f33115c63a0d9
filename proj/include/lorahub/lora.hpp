// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lorahub/tensor.hpp"

namespace lorahub {

/// One layer's low-rank factors: a is d x r, b is r x k, delta = a*b.
struct FactorPair {
  Matrix a;
  Matrix b;
};

struct ModuleMeta {
  uint64_t seed = 0;
  std::string config_digest;
  std::string created;  // ISO-8601, supplied by the caller
};

struct LoraLayer {
  std::string name;
  FactorPair factors;
};

/// A trained low-rank adapter: one (A, B) pair per adapted layer, ordered to
/// match the base model architecture it was trained against.
struct LoraModule {
  std::string name;
  std::string task_id;
  int rank = 0;
  std::vector<LoraLayer> layers;
  ModuleMeta meta;

  /// nullptr when the layer is absent.
  const FactorPair* find_layer(const std::string& layer_name) const;
};

/// Throws FormatError if any layer violates a.cols == b.rows == rank.
void check_module_invariants(const LoraModule& m);

/// The coefficients searched during adaptation, one per candidate module.
struct WeightVector {
  std::vector<double> values;
  double bound = 1.5;
};

struct Provenance {
  std::vector<std::string> source_names;
  WeightVector weights;
};

/// Result of combining candidate modules: structurally a LoraModule whose
/// factors are the weighted sums A_hat = sum_i w_i A_i, B_hat = sum_i w_i B_i.
/// The effective update A_hat * B_hat is materialized on demand.
struct ComposedModule {
  LoraModule module;
  Provenance provenance;
};

struct Incompatibility {
  std::string module;
  std::string layer;  // empty when the problem is module-wide
  std::string reason;
};

struct CompatibilityReport {
  bool ok = true;
  std::vector<Incompatibility> problems;
};

/// Checks that all modules share rank, layer names and per-layer shapes.
/// Report-returning; never throws on incompatible inputs.
CompatibilityReport validate_compatibility(std::span<const LoraModule> modules);

/// Weighted element-wise composition. Factor sums are accumulated in a
/// canonical order (stable sort by module name) so jointly permuting
/// (modules, w) gives bit-identical results, and exact-zero weights are
/// skipped so w = e_i reproduces module i bit-for-bit.
ComposedModule compose(std::span<const LoraModule> modules, const WeightVector& w);

/// A_hat * B_hat for one layer, as a dense d x k matrix.
Matrix effective_delta(const ComposedModule& composed, const std::string& layer);

}  // namespace lorahub
