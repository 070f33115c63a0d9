// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lorahub/lora.hpp"
#include "lorahub/tensor.hpp"

namespace lorahub {

enum class Activation { relu, none };

struct LayerSpec {
  std::string name;
  int in_dim = 0;
  int out_dim = 0;
  Activation activation = Activation::none;
};

/// Frozen feed-forward classifier. Weights are stored per layer in spec
/// order; each weight is in_dim x out_dim so a batch row maps as
/// x -> x*W + bias.
struct BaseModel {
  std::vector<LayerSpec> layer_specs;
  std::vector<Matrix> weights;              // aligned with layer_specs
  std::vector<std::vector<double>> biases;  // aligned with layer_specs
  bool frozen = false;

  int input_dim() const;
  int num_classes() const;
  int layer_index(const std::string& name) const;  // LookupError if absent
};

/// Validates dim chaining, logits-layer activation, and weight/bias shapes.
void check_model_invariants(const BaseModel& model);

struct Batch {
  Matrix inputs;            // n_examples x in_dim
  std::vector<int> labels;  // class indices, length n_examples
  int size() const { return inputs.rows(); }
};

/// Per-layer (dA, dB), shapes mirroring the module exactly.
struct LoraGradients {
  std::vector<LoraLayer> layers;
};

/// Logits for a batch. adapter may be nullptr (plain base forward); an
/// adapted layer computes x*(W + A_hat*B_hat) + bias via the factored path
/// x*W + (x*A_hat)*B_hat.
Matrix forward(const BaseModel& model, const LoraModule* adapter, const Matrix& inputs);
inline Matrix forward(const BaseModel& model, const Matrix& inputs) {
  return forward(model, nullptr, inputs);
}
inline Matrix forward(const BaseModel& model, const ComposedModule& adapter,
                      const Matrix& inputs) {
  return forward(model, &adapter.module, inputs);
}

/// Mean over examples of -log softmax(logits)[label], max-subtraction
/// stabilized. Throws LabelError on out-of-range labels.
double cross_entropy(const Matrix& logits, std::span<const int> labels);

struct BackwardResult {
  double loss = 0.0;
  LoraGradients grads;
};

/// Exact gradients of cross_entropy w.r.t. every A and B entry of `module`;
/// the base weights receive no gradient.
BackwardResult lora_backward(const BaseModel& model, const LoraModule& module,
                             const Batch& batch);

struct TrainConfig {
  double lr = 0.3;
  int epochs = 10;
  int batch_size = 64;
  int rank = 16;
  uint64_t seed = 0;
};

/// Minibatch SGD on the LoRA factors only. Init: A ~ Normal(0, 0.02^2),
/// B = 0, so the effective update starts at zero. `created` is the
/// ISO-8601 creation stamp recorded in the module metadata.
LoraModule train_lora(const BaseModel& model, const Batch& task_data, const TrainConfig& config,
                      const std::string& name, const std::string& task_id,
                      const std::string& created);

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double exact_match = 0.0;  // == accuracy for argmax classification
};

EvalMetrics evaluate(const BaseModel& model, const LoraModule* adapter, const Batch& batch);
inline EvalMetrics evaluate(const BaseModel& model, const Batch& batch) {
  return evaluate(model, nullptr, batch);
}
inline EvalMetrics evaluate(const BaseModel& model, const ComposedModule& adapter,
                            const Batch& batch) {
  return evaluate(model, &adapter.module, batch);
}

struct PretrainConfig {
  double lr = 0.05;
  int epochs = 4;
  int batch_size = 64;
  uint64_t seed = 0;
};

/// Fresh model with the given architecture, He-style gaussian init.
BaseModel init_model(const std::vector<LayerSpec>& arch, uint64_t seed);

/// One-shot full-parameter SGD on the union of the given task batches;
/// the returned model is frozen.
BaseModel pretrain_base(const std::vector<LayerSpec>& arch, const std::vector<Batch>& tasks,
                        const PretrainConfig& config);

/// Full-parameter SGD on a single batch stream, mutating `model` in place.
/// Used by pretrain_base and by the task-learnability check.
void fit_full(BaseModel& model, const Batch& data, double lr, int epochs, int batch_size,
              uint64_t seed);

/// The default desk-scale architecture: 32 -> 64 -> 64 -> 8, ReLU hidden
/// layers, logits output.
std::vector<LayerSpec> default_arch();

}  // namespace lorahub
