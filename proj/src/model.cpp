// SPDX-License-Identifier: Apache-2.0
#include "lorahub/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lorahub/digest.hpp"
#include "lorahub/errors.hpp"

namespace lorahub {

namespace {

void apply_relu(Matrix& m) {
  for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
}

void add_bias_rows(Matrix& m, const std::vector<double>& bias) {
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) m.at(i, j) += bias[static_cast<size_t>(j)];
}

// adapter layers must exist in the model with matching (d, k) shapes.
void check_adapter(const BaseModel& model, const LoraModule& adapter) {
  for (const auto& l : adapter.layers) {
    int idx = -1;
    for (size_t i = 0; i < model.layer_specs.size(); ++i) {
      if (model.layer_specs[i].name == l.name) {
        idx = static_cast<int>(i);
        break;
      }
    }
    if (idx < 0) {
      throw IncompatibleModulesError("adapter '" + adapter.name + "' targets layer '" + l.name +
                                     "' which the model does not have");
    }
    const LayerSpec& spec = model.layer_specs[static_cast<size_t>(idx)];
    if (l.factors.a.rows() != spec.in_dim || l.factors.b.cols() != spec.out_dim) {
      throw IncompatibleModulesError(
          "adapter '" + adapter.name + "', layer '" + l.name + "': factors " +
          l.factors.a.shape_str() + " * " + l.factors.b.shape_str() + " do not match layer dims " +
          std::to_string(spec.in_dim) + "x" + std::to_string(spec.out_dim));
    }
    if (l.factors.a.cols() != adapter.rank || l.factors.b.rows() != adapter.rank) {
      throw IncompatibleModulesError("adapter '" + adapter.name + "', layer '" + l.name +
                                     "': factor ranks disagree with module rank " +
                                     std::to_string(adapter.rank));
    }
  }
}

// dLoss/dlogits for mean cross-entropy: (softmax - onehot) / n.
Matrix logits_grad(const Matrix& logits, std::span<const int> labels) {
  Matrix g(logits.rows(), logits.cols());
  const double inv_n = 1.0 / logits.rows();
  for (int i = 0; i < logits.rows(); ++i) {
    double mx = logits.at(i, 0);
    for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < logits.cols(); ++j) denom += std::exp(logits.at(i, j) - mx);
    for (int j = 0; j < logits.cols(); ++j) {
      g.at(i, j) = std::exp(logits.at(i, j) - mx) / denom * inv_n;
    }
    g.at(i, labels[static_cast<size_t>(i)]) -= inv_n;
  }
  return g;
}

void check_labels(std::span<const int> labels, int num_classes, int rows) {
  if (static_cast<int>(labels.size()) != rows) {
    throw ArityError("labels length " + std::to_string(labels.size()) + " != batch rows " +
                     std::to_string(rows));
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw LabelError("label " + std::to_string(y) + " out of range [0, " +
                       std::to_string(num_classes) + ")");
    }
  }
}

Batch take_rows(const Batch& b, std::span<const int> idx) {
  Batch out;
  out.inputs = Matrix(static_cast<int>(idx.size()), b.inputs.cols());
  out.labels.resize(idx.size());
  for (size_t r = 0; r < idx.size(); ++r) {
    for (int j = 0; j < b.inputs.cols(); ++j) out.inputs.at(static_cast<int>(r), j) = b.inputs.at(idx[r], j);
    out.labels[r] = b.labels[static_cast<size_t>(idx[r])];
  }
  return out;
}

std::string train_config_digest(const TrainConfig& c) {
  const std::string s = "lr=" + std::to_string(c.lr) + ";epochs=" + std::to_string(c.epochs) +
                        ";batch=" + std::to_string(c.batch_size) +
                        ";rank=" + std::to_string(c.rank) + ";seed=" + std::to_string(c.seed);
  return to_hex(fnv1a64(s));
}

}  // namespace

int BaseModel::input_dim() const { return layer_specs.front().in_dim; }
int BaseModel::num_classes() const { return layer_specs.back().out_dim; }

int BaseModel::layer_index(const std::string& name) const {
  for (size_t i = 0; i < layer_specs.size(); ++i) {
    if (layer_specs[i].name == name) return static_cast<int>(i);
  }
  throw LookupError("model has no layer named '" + name + "'");
}

void check_model_invariants(const BaseModel& model) {
  if (model.layer_specs.empty()) throw ShapeError("model needs at least one layer");
  if (model.weights.size() != model.layer_specs.size() ||
      model.biases.size() != model.layer_specs.size()) {
    throw ShapeError("model weights/biases not aligned with layer specs");
  }
  for (size_t l = 0; l < model.layer_specs.size(); ++l) {
    const LayerSpec& s = model.layer_specs[l];
    if (model.weights[l].rows() != s.in_dim || model.weights[l].cols() != s.out_dim) {
      throw ShapeError("layer '" + s.name + "': weight is " + model.weights[l].shape_str() +
                       ", spec says " + std::to_string(s.in_dim) + "x" +
                       std::to_string(s.out_dim));
    }
    if (static_cast<int>(model.biases[l].size()) != s.out_dim) {
      throw ShapeError("layer '" + s.name + "': bias length mismatch");
    }
    if (l + 1 < model.layer_specs.size() &&
        s.out_dim != model.layer_specs[l + 1].in_dim) {
      throw ShapeError("layer dims do not chain at '" + s.name + "'");
    }
  }
  if (model.layer_specs.back().activation != Activation::none) {
    throw ShapeError("final layer must emit raw logits");
  }
}

Matrix forward(const BaseModel& model, const LoraModule* adapter, const Matrix& inputs) {
  if (inputs.cols() != model.input_dim()) {
    throw ShapeError("forward: inputs are " + inputs.shape_str() + " but model expects " +
                     std::to_string(model.input_dim()) + " columns");
  }
  if (adapter != nullptr) check_adapter(model, *adapter);
  const Matrix* x = &inputs;
  Matrix h;
  for (size_t l = 0; l < model.layer_specs.size(); ++l) {
    Matrix z = matmul(*x, model.weights[l]);
    if (adapter != nullptr) {
      const FactorPair* f = adapter->find_layer(model.layer_specs[l].name);
      if (f != nullptr) add_scaled(z, 1.0, matmul(matmul(*x, f->a), f->b));
    }
    add_bias_rows(z, model.biases[l]);
    if (model.layer_specs[l].activation == Activation::relu) apply_relu(z);
    h = std::move(z);
    x = &h;
  }
  return h;
}

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.cols(), logits.rows());
  double total = 0.0;
  for (int i = 0; i < logits.rows(); ++i) {
    double mx = logits.at(i, 0);
    for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < logits.cols(); ++j) denom += std::exp(logits.at(i, j) - mx);
    total += std::log(denom) - (logits.at(i, labels[static_cast<size_t>(i)]) - mx);
  }
  return total / logits.rows();
}

BackwardResult lora_backward(const BaseModel& model, const LoraModule& module,
                             const Batch& batch) {
  check_adapter(model, module);
  if (batch.inputs.cols() != model.input_dim()) {
    throw ShapeError("lora_backward: inputs are " + batch.inputs.shape_str() +
                     " but model expects " + std::to_string(model.input_dim()) + " columns");
  }
  const size_t num_layers = model.layer_specs.size();

  // Forward pass, keeping pre- and post-activations.
  std::vector<Matrix> pre(num_layers);
  std::vector<Matrix> post(num_layers);
  const Matrix* x = &batch.inputs;
  for (size_t l = 0; l < num_layers; ++l) {
    Matrix z = matmul(*x, model.weights[l]);
    const FactorPair* f = module.find_layer(model.layer_specs[l].name);
    if (f != nullptr) add_scaled(z, 1.0, matmul(matmul(*x, f->a), f->b));
    add_bias_rows(z, model.biases[l]);
    pre[l] = z;
    post[l] = std::move(z);
    if (model.layer_specs[l].activation == Activation::relu) apply_relu(post[l]);
    x = &post[l];
  }

  check_labels(batch.labels, model.num_classes(), batch.size());
  BackwardResult result;
  result.loss = cross_entropy(post.back(), batch.labels);

  // dZ for the logits layer, then walk backwards.
  Matrix dz = logits_grad(post.back(), batch.labels);
  result.grads.layers.resize(module.layers.size());
  for (size_t i = 0; i < module.layers.size(); ++i) {
    result.grads.layers[i].name = module.layers[i].name;
  }

  for (size_t l = num_layers; l-- > 0;) {
    const Matrix& input = l == 0 ? batch.inputs : post[l - 1];
    const FactorPair* f = module.find_layer(model.layer_specs[l].name);
    if (f != nullptr) {
      // dA = input^T (dZ B^T), dB = (input A)^T dZ
      Matrix da = matmul(transpose(input), matmul(dz, transpose(f->b)));
      Matrix db = matmul(transpose(matmul(input, f->a)), dz);
      for (size_t i = 0; i < module.layers.size(); ++i) {
        if (module.layers[i].name == model.layer_specs[l].name) {
          result.grads.layers[i].factors = {std::move(da), std::move(db)};
          break;
        }
      }
    }
    if (l == 0) break;
    // dH = dZ (W + A B)^T, via the factored path.
    Matrix dh = matmul(dz, transpose(model.weights[l]));
    if (f != nullptr) add_scaled(dh, 1.0, matmul(matmul(dz, transpose(f->b)), transpose(f->a)));
    if (model.layer_specs[l - 1].activation == Activation::relu) {
      for (int i = 0; i < dh.rows(); ++i)
        for (int j = 0; j < dh.cols(); ++j)
          if (pre[l - 1].at(i, j) <= 0.0) dh.at(i, j) = 0.0;
    }
    dz = std::move(dh);
  }
  return result;
}

LoraModule train_lora(const BaseModel& model, const Batch& task_data, const TrainConfig& config,
                      const std::string& name, const std::string& task_id,
                      const std::string& created) {
  if (task_data.size() == 0) throw DataError("train_lora: empty task data");
  if (config.rank < 1) throw ShapeError("train_lora: rank must be >= 1");
  check_model_invariants(model);

  Rng rng(seed_mix(config.seed, 0x10 + 0));
  LoraModule module;
  module.name = name;
  module.task_id = task_id;
  module.rank = config.rank;
  module.meta = {config.seed, train_config_digest(config), created};
  for (size_t l = 0; l < model.layer_specs.size(); ++l) {
    const LayerSpec& s = model.layer_specs[l];
    Matrix a = gaussian_matrix(rng, s.in_dim, config.rank, 0.02);
    Matrix b = Matrix::zeros(config.rank, s.out_dim);
    module.layers.push_back({s.name, {std::move(a), std::move(b)}});
  }

  Rng shuffle_rng(seed_mix(config.seed, 0x10 + 1));
  std::vector<int> idx(static_cast<size_t>(task_data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const int n = task_data.size();
  const int bs = std::max(1, config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(shuffle_rng.next_below(i + 1))]);
    for (int start = 0; start < n; start += bs) {
      const int stop = std::min(n, start + bs);
      Batch mini = take_rows(task_data, std::span<const int>(idx.data() + start,
                                                             static_cast<size_t>(stop - start)));
      BackwardResult back = lora_backward(model, module, mini);
      for (size_t l = 0; l < module.layers.size(); ++l) {
        add_scaled(module.layers[l].factors.a, -config.lr, back.grads.layers[l].factors.a);
        add_scaled(module.layers[l].factors.b, -config.lr, back.grads.layers[l].factors.b);
      }
    }
  }
  return module;
}

EvalMetrics evaluate(const BaseModel& model, const LoraModule* adapter, const Batch& batch) {
  const Matrix logits = forward(model, adapter, batch.inputs);
  check_labels(batch.labels, logits.cols(), logits.rows());
  EvalMetrics m;
  m.loss = cross_entropy(logits, batch.labels);
  int hits = 0;
  for (int i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    if (best == batch.labels[static_cast<size_t>(i)]) ++hits;
  }
  m.accuracy = static_cast<double>(hits) / logits.rows();
  m.exact_match = m.accuracy;
  return m;
}

BaseModel init_model(const std::vector<LayerSpec>& arch, uint64_t seed) {
  BaseModel model;
  model.layer_specs = arch;
  Rng rng(seed_mix(seed, 0x20));
  for (const LayerSpec& s : arch) {
    model.weights.push_back(
        gaussian_matrix(rng, s.in_dim, s.out_dim, std::sqrt(2.0 / s.in_dim)));
    model.biases.emplace_back(static_cast<size_t>(s.out_dim), 0.0);
  }
  check_model_invariants(model);
  return model;
}

void fit_full(BaseModel& model, const Batch& data, double lr, int epochs, int batch_size,
              uint64_t seed) {
  if (data.size() == 0) throw DataError("fit_full: empty data");
  Rng shuffle_rng(seed_mix(seed, 0x21));
  std::vector<int> idx(static_cast<size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const int n = data.size();
  const int bs = std::max(1, batch_size);
  const size_t num_layers = model.layer_specs.size();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(shuffle_rng.next_below(i + 1))]);
    for (int start = 0; start < n; start += bs) {
      const int stop = std::min(n, start + bs);
      Batch mini = take_rows(data, std::span<const int>(idx.data() + start,
                                                        static_cast<size_t>(stop - start)));
      // forward
      std::vector<Matrix> pre(num_layers), post(num_layers);
      const Matrix* x = &mini.inputs;
      for (size_t l = 0; l < num_layers; ++l) {
        Matrix z = matmul(*x, model.weights[l]);
        add_bias_rows(z, model.biases[l]);
        pre[l] = z;
        post[l] = std::move(z);
        if (model.layer_specs[l].activation == Activation::relu) apply_relu(post[l]);
        x = &post[l];
      }
      check_labels(mini.labels, model.num_classes(), mini.size());
      Matrix dz = logits_grad(post.back(), mini.labels);
      for (size_t l = num_layers; l-- > 0;) {
        const Matrix& input = l == 0 ? mini.inputs : post[l - 1];
        Matrix dw = matmul(transpose(input), dz);
        std::vector<double> db(static_cast<size_t>(dz.cols()), 0.0);
        for (int i = 0; i < dz.rows(); ++i)
          for (int j = 0; j < dz.cols(); ++j) db[static_cast<size_t>(j)] += dz.at(i, j);
        Matrix dh;
        if (l > 0) {
          dh = matmul(dz, transpose(model.weights[l]));
          if (model.layer_specs[l - 1].activation == Activation::relu) {
            for (int i = 0; i < dh.rows(); ++i)
              for (int j = 0; j < dh.cols(); ++j)
                if (pre[l - 1].at(i, j) <= 0.0) dh.at(i, j) = 0.0;
          }
        }
        add_scaled(model.weights[l], -lr, dw);
        for (int j = 0; j < dz.cols(); ++j) model.biases[l][static_cast<size_t>(j)] -= lr * db[static_cast<size_t>(j)];
        if (l == 0) break;
        dz = std::move(dh);
      }
    }
  }
}

BaseModel pretrain_base(const std::vector<LayerSpec>& arch, const std::vector<Batch>& tasks,
                        const PretrainConfig& config) {
  if (tasks.empty()) throw DataError("pretrain_base: no tasks");
  BaseModel model = init_model(arch, config.seed);

  // Union of all task data.
  int total = 0;
  for (const Batch& b : tasks) total += b.size();
  if (total == 0) throw DataError("pretrain_base: all tasks empty");
  Batch all;
  all.inputs = Matrix(total, arch.front().in_dim);
  all.labels.reserve(static_cast<size_t>(total));
  int row = 0;
  for (const Batch& b : tasks) {
    for (int i = 0; i < b.size(); ++i, ++row) {
      for (int j = 0; j < b.inputs.cols(); ++j) all.inputs.at(row, j) = b.inputs.at(i, j);
      all.labels.push_back(b.labels[static_cast<size_t>(i)]);
    }
  }

  fit_full(model, all, config.lr, config.epochs, config.batch_size, config.seed);
  model.frozen = true;
  return model;
}

std::vector<LayerSpec> default_arch() {
  return {{"fc1", 32, 64, Activation::relu},
          {"fc2", 64, 64, Activation::relu},
          {"fc3", 64, 8, Activation::none}};
}

}  // namespace lorahub
