// Copyright (c) 2026 The DVFL Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Small dense network engine and the split model built from it: per-party
// bottom stacks, a linear interactive layer over the concatenated bottom
// outputs, and the active party's top stack ending in one sigmoid unit.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dvfl {

class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Tensor2&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a · bᵀ
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);
// a · b
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
// aᵀ · b
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);
Tensor2 hconcat(const Tensor2& a, const Tensor2& b);
// Columns [begin, end).
Tensor2 column_slice(const Tensor2& a, std::size_t begin, std::size_t end);
double max_abs(const Tensor2& a);

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1, kSigmoid = 2, kGelu = 3 };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

struct DenseLayer {
  Tensor2 weights;            // out × in
  std::vector<double> bias;   // out
  Activation activation = Activation::kIdentity;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act)
      : weights(out, in), bias(out, 0.0), activation(act) {}

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }
};

using LayerStack = std::vector<DenseLayer>;

struct LayerCache {
  Tensor2 input;
  Tensor2 pre;  // affine output before the activation
};
using StackCache = std::vector<LayerCache>;

struct LayerGrads {
  Tensor2 weights;
  std::vector<double> bias;
};

// Affine map x·Wᵀ + b followed by the activation.
Tensor2 layer_forward(const DenseLayer& layer, const Tensor2& input, LayerCache* cache = nullptr);
// Returns dL/dinput and writes the parameter gradients.
Tensor2 layer_backward(const DenseLayer& layer, const LayerCache& cache, const Tensor2& upstream, LayerGrads& grads);

std::pair<Tensor2, StackCache> forward(const LayerStack& stack, const Tensor2& input);
std::pair<std::vector<LayerGrads>, Tensor2> backward(const LayerStack& stack, const StackCache& cache,
                                                     const Tensor2& upstream);

struct LossResult {
  double loss = 0;
  Tensor2 grad;  // d loss / d pred
};

inline constexpr double kBceClamp = 1e-12;

// Mean binary cross-entropy over the batch; pred is batch × 1, clamped to
// [1e-12, 1 - 1e-12].
LossResult bce_loss(const Tensor2& pred, const std::vector<int>& labels);

// ---- split model -------------------------------------------------------------

struct ModelConfig {
  std::size_t active_in = 0;
  std::size_t passive_in = 0;
  std::vector<std::size_t> bottom_hidden{32, 16};
  Activation bottom_activation = Activation::kRelu;
  std::size_t interactive_out = 32;
  std::vector<std::size_t> top_hidden{16};
  Activation top_activation = Activation::kRelu;
  std::uint64_t seed = 42;

  bool operator==(const ModelConfig&) const = default;
};

struct SplitModel {
  LayerStack active_bottom;
  LayerStack passive_bottom;
  DenseLayer interactive;  // identity, in = active out + passive out
  LayerStack top;          // ends in one sigmoid unit

  std::size_t active_out() const;
  std::size_t passive_out() const;
  // Throws kShape when the components do not chain.
  void validate() const;
};

// Glorot-uniform weights, zero biases. Each component draws from its own
// stream derived from config.seed, so either party can build its half alone.
SplitModel init_split_model(const ModelConfig& config);

enum class Party { kActive, kPassive, kAll };

struct SplitGrads {
  std::vector<LayerGrads> active_bottom;
  std::vector<LayerGrads> passive_bottom;
  LayerGrads interactive;
  std::vector<LayerGrads> top;
};

// ---- flat parameter vectors --------------------------------------------------

struct LayoutEntry {
  std::string name;  // e.g. "top.1.weight"
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  Activation activation = Activation::kIdentity;

  bool operator==(const LayoutEntry&) const = default;
};

struct WeightVector {
  std::vector<LayoutEntry> layout;
  std::vector<double> values;

  bool operator==(const WeightVector&) const = default;
};

// Party-owned parameters in canonical order: active = active bottom,
// interactive, top; passive = passive bottom; all = both.
WeightVector flatten(const SplitModel& model, Party party);
WeightVector flatten_grads(const SplitModel& model, const SplitGrads& grads, Party party);
// Layout must match flatten(model, party).
void unflatten(SplitModel& model, const WeightVector& weights, Party party);

// params - lr * grads; layouts must agree.
WeightVector sgd_step(const WeightVector& params, const WeightVector& grads, double lr);

// Layout header followed by big-endian IEEE-754 values.
std::vector<std::uint8_t> serialize_weights(const WeightVector& weights);
WeightVector deserialize_weights(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::string& path, const WeightVector& weights);
WeightVector load_checkpoint(const std::string& path);
// Rebuilds a model from a checkpoint holding every component.
SplitModel model_from_weights(const WeightVector& weights);
// Concatenates disjoint layer sets, e.g. one checkpoint per party.
WeightVector merge_weights(const WeightVector& a, const WeightVector& b);

// ---- whole-model passes ------------------------------------------------------

struct SplitBatch {
  Tensor2 active_x;
  Tensor2 passive_x;
  std::vector<int> labels;
};

// Plaintext forward over the joined model; returns batch × 1 predictions.
Tensor2 predict(const SplitModel& model, const Tensor2& active_x, const Tensor2& passive_x);

struct SplitForward {
  StackCache active_cache;
  StackCache passive_cache;
  LayerCache interactive_cache;
  StackCache top_cache;
  Tensor2 pred;
};

SplitForward split_forward(const SplitModel& model, const SplitBatch& batch);
// Returns the loss and fills the gradients of every parameter.
double split_backward(const SplitModel& model, const SplitForward& fwd, const std::vector<int>& labels,
                      SplitGrads& grads);

// Single-process forward, backward and SGD over the whole model with the
// interactive layer applied to the concatenation. Returns the pre-step loss.
double centralized_reference_step(SplitModel& model, const SplitBatch& batch, double lr);

}  // namespace dvfl
