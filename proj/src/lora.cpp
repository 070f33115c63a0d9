// SPDX-License-Identifier: Apache-2.0
#include "lorahub/lora.hpp"

#include <algorithm>
#include <numeric>

#include "lorahub/errors.hpp"

namespace lorahub {

const FactorPair* LoraModule::find_layer(const std::string& layer_name) const {
  for (const auto& l : layers) {
    if (l.name == layer_name) return &l.factors;
  }
  return nullptr;
}

void check_module_invariants(const LoraModule& m) {
  if (m.rank < 1) {
    throw FormatError("module '" + m.name + "': rank must be positive, got " +
                      std::to_string(m.rank));
  }
  for (const auto& l : m.layers) {
    const Matrix& a = l.factors.a;
    const Matrix& b = l.factors.b;
    if (a.cols() != m.rank || b.rows() != m.rank) {
      throw FormatError("module '" + m.name + "', layer '" + l.name +
                        "': factor ranks disagree with module rank " + std::to_string(m.rank) +
                        " (A is " + a.shape_str() + ", B is " + b.shape_str() + ")");
    }
  }
}

CompatibilityReport validate_compatibility(std::span<const LoraModule> modules) {
  CompatibilityReport report;
  if (modules.empty()) return report;

  const LoraModule& ref = modules[0];
  auto add = [&](const std::string& mod, const std::string& layer, std::string reason) {
    report.ok = false;
    report.problems.push_back({mod, layer, std::move(reason)});
  };

  for (const auto& m : modules) {
    for (const auto& l : m.layers) {
      if (l.factors.a.cols() != m.rank || l.factors.b.rows() != m.rank) {
        add(m.name, l.name, "factor shapes disagree with module rank");
      }
    }
  }
  for (size_t i = 1; i < modules.size(); ++i) {
    const LoraModule& m = modules[i];
    if (m.rank != ref.rank) {
      add(m.name, "",
          "rank mismatch: " + std::to_string(m.rank) + " vs " + std::to_string(ref.rank) +
              " of '" + ref.name + "'");
      continue;
    }
    for (const auto& rl : ref.layers) {
      const FactorPair* f = m.find_layer(rl.name);
      if (f == nullptr) {
        add(m.name, rl.name, "missing layer '" + rl.name + "'");
        continue;
      }
      if (!f->a.same_shape(rl.factors.a) || !f->b.same_shape(rl.factors.b)) {
        add(m.name, rl.name,
            "layer shape mismatch: A " + f->a.shape_str() + " vs " + rl.factors.a.shape_str() +
                ", B " + f->b.shape_str() + " vs " + rl.factors.b.shape_str());
      }
    }
    for (const auto& l : m.layers) {
      if (ref.find_layer(l.name) == nullptr) {
        add(m.name, l.name, "extra layer '" + l.name + "' not present in '" + ref.name + "'");
      }
    }
  }
  return report;
}

ComposedModule compose(std::span<const LoraModule> modules, const WeightVector& w) {
  if (modules.empty()) {
    throw ArityError("compose: need at least one module");
  }
  if (w.values.size() != modules.size()) {
    throw ArityError("compose: " + std::to_string(w.values.size()) + " weights for " +
                     std::to_string(modules.size()) + " modules");
  }
  const CompatibilityReport report = validate_compatibility(modules);
  if (!report.ok) {
    const Incompatibility& p = report.problems.front();
    throw IncompatibleModulesError("compose: module '" + p.module + "'" +
                                   (p.layer.empty() ? "" : ", layer '" + p.layer + "'") + ": " +
                                   p.reason + (report.problems.size() > 1
                                                   ? " (+" +
                                                         std::to_string(report.problems.size() - 1) +
                                                         " more)"
                                                   : ""));
  }

  // Canonical accumulation order: stable sort by module name.
  std::vector<size_t> order(modules.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    return modules[x].name < modules[y].name;
  });

  const LoraModule& ref = modules[0];
  ComposedModule out;
  out.module.name = "composed";
  out.module.task_id = "";
  out.module.rank = ref.rank;
  out.module.meta = ModuleMeta{};
  out.provenance.weights = w;
  for (const auto& m : modules) out.provenance.source_names.push_back(m.name);

  for (const auto& rl : ref.layers) {
    Matrix a_hat;
    Matrix b_hat;
    bool first = true;
    for (size_t idx : order) {
      const double wi = w.values[idx];
      if (wi == 0.0) continue;  // keeps one-hot composition bit-exact
      const FactorPair* f = modules[idx].find_layer(rl.name);
      if (first) {
        a_hat = scaled(wi, f->a);
        b_hat = scaled(wi, f->b);
        first = false;
      } else {
        add_scaled(a_hat, wi, f->a);
        add_scaled(b_hat, wi, f->b);
      }
    }
    if (first) {
      a_hat = Matrix::zeros(rl.factors.a.rows(), rl.factors.a.cols());
      b_hat = Matrix::zeros(rl.factors.b.rows(), rl.factors.b.cols());
    }
    out.module.layers.push_back({rl.name, {std::move(a_hat), std::move(b_hat)}});
  }
  return out;
}

Matrix effective_delta(const ComposedModule& composed, const std::string& layer) {
  const FactorPair* f = composed.module.find_layer(layer);
  if (f == nullptr) {
    throw LookupError("effective_delta: no layer named '" + layer + "'");
  }
  return matmul(f->a, f->b);
}

}  // namespace lorahub
