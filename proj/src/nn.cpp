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

#include "dvfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <random>

#include "dvfl/error.hpp"
#include "dvfl/wire.hpp"

namespace dvfl {

namespace {

[[noreturn]] void shape_error(const std::string& what) { throw Error(ErrorCode::kShape, what); }

std::string dims(const Tensor2& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

double apply(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0 ? x : 0.0;
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::kGelu: return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  }
  return x;
}

double derivative(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return x > 0 ? 1.0 : 0.0;
    case Activation::kSigmoid: {
      double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case Activation::kGelu: {
      constexpr double kInvSqrt2Pi = 0.3989422804014327;
      return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    }
  }
  return 1.0;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

void glorot(DenseLayer& layer, std::mt19937_64& gen) {
  const double bound = std::sqrt(6.0 / static_cast<double>(layer.in_dim() + layer.out_dim()));
  for (double& w : layer.weights.data()) {
    double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
    w = (2.0 * u - 1.0) * bound;
  }
}

LayerStack make_stack(std::size_t in, const std::vector<std::size_t>& widths, Activation act, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  LayerStack stack;
  for (std::size_t w : widths) {
    stack.emplace_back(in, w, act);
    glorot(stack.back(), gen);
    in = w;
  }
  return stack;
}

std::size_t stack_out(const LayerStack& stack, std::size_t in) { return stack.empty() ? in : stack.back().out_dim(); }

// Visits party-owned layers in canonical order together with their names.
template <typename Model, typename F>
void for_each_layer(Model& model, Party party, F&& f) {
  auto stack = [&](auto& layers, const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) f(prefix + "." + std::to_string(i), layers[i]);
  };
  if (party != Party::kPassive) {
    stack(model.active_bottom, "active_bottom");
    f(std::string("interactive"), model.interactive);
    stack(model.top, "top");
  }
  if (party != Party::kActive) stack(model.passive_bottom, "passive_bottom");
}

std::vector<LayoutEntry> layout_of(const SplitModel& model, Party party) {
  std::vector<LayoutEntry> layout;
  std::size_t offset = 0;
  for_each_layer(model, party, [&](const std::string& name, const DenseLayer& layer) {
    layout.push_back({name + ".weight", layer.out_dim(), layer.in_dim(), offset, layer.activation});
    offset += layer.out_dim() * layer.in_dim();
    layout.push_back({name + ".bias", layer.out_dim(), 1, offset, layer.activation});
    offset += layer.out_dim();
  });
  return layout;
}

void check_same_layout(const WeightVector& a, const WeightVector& b, const char* what) {
  if (a.layout != b.layout || a.values.size() != b.values.size()) {
    throw Error(ErrorCode::kShape, std::string(what) + ": weight layouts differ");
  }
}

void append(std::vector<double>& out, const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); }

constexpr char kCheckpointMagic[8] = {'D', 'V', 'F', 'L', 'W', 'T', 'S', '1'};

}  // namespace

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) shape_error("tensor data length does not match its shape");
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt " + dims(a) + " by " + dims(b) + "^T");
  Tensor2 out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j);
      double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) shape_error("matmul " + dims(a) + " by " + dims(b));
  Tensor2 out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows()) shape_error("matmul_tn " + dims(a) + "^T by " + dims(b));
  Tensor2 out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ar = a.row(k);
    const double* br = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      double* o = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += ar[i] * br[j];
    }
  }
  return out;
}

Tensor2 hconcat(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows()) shape_error("hconcat " + dims(a) + " with " + dims(b));
  Tensor2 out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i), a.row(i) + a.cols(), out.row(i));
    std::copy(b.row(i), b.row(i) + b.cols(), out.row(i) + a.cols());
  }
  return out;
}

Tensor2 column_slice(const Tensor2& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) shape_error("column slice out of range for " + dims(a));
  Tensor2 out(a.rows(), end - begin);
  for (std::size_t i = 0; i < a.rows(); ++i) std::copy(a.row(i) + begin, a.row(i) + end, out.row(i));
  return out;
}

double max_abs(const Tensor2& a) {
  double m = 0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kGelu: return "gelu";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  for (auto a : {Activation::kIdentity, Activation::kRelu, Activation::kSigmoid, Activation::kGelu}) {
    if (name == activation_name(a)) return a;
  }
  throw Error(ErrorCode::kConfig, "unknown activation '" + name + "'");
}

Tensor2 layer_forward(const DenseLayer& layer, const Tensor2& input, LayerCache* cache) {
  if (input.cols() != layer.in_dim()) {
    shape_error("layer expects " + std::to_string(layer.in_dim()) + " inputs, got " + dims(input));
  }
  Tensor2 pre = matmul_nt(input, layer.weights);
  for (std::size_t i = 0; i < pre.rows(); ++i) {
    double* r = pre.row(i);
    for (std::size_t j = 0; j < pre.cols(); ++j) r[j] += layer.bias[j];
  }
  Tensor2 out = pre;
  if (layer.activation != Activation::kIdentity) {
    for (double& v : out.data()) v = apply(layer.activation, v);
  }
  if (cache) {
    cache->input = input;
    cache->pre = std::move(pre);
  }
  return out;
}

Tensor2 layer_backward(const DenseLayer& layer, const LayerCache& cache, const Tensor2& upstream, LayerGrads& grads) {
  if (upstream.rows() != cache.pre.rows() || upstream.cols() != cache.pre.cols()) {
    shape_error("upstream gradient " + dims(upstream) + " does not match layer output " + dims(cache.pre));
  }
  Tensor2 dpre = upstream;
  if (layer.activation != Activation::kIdentity) {
    for (std::size_t k = 0; k < dpre.size(); ++k) dpre.data()[k] *= derivative(layer.activation, cache.pre.data()[k]);
  }
  grads.weights = matmul_tn(dpre, cache.input);
  grads.bias.assign(layer.out_dim(), 0.0);
  for (std::size_t i = 0; i < dpre.rows(); ++i) {
    for (std::size_t j = 0; j < dpre.cols(); ++j) grads.bias[j] += dpre(i, j);
  }
  return matmul(dpre, layer.weights);
}

std::pair<Tensor2, StackCache> forward(const LayerStack& stack, const Tensor2& input) {
  StackCache cache(stack.size());
  Tensor2 x = input;
  for (std::size_t i = 0; i < stack.size(); ++i) x = layer_forward(stack[i], x, &cache[i]);
  return {std::move(x), std::move(cache)};
}

std::pair<std::vector<LayerGrads>, Tensor2> backward(const LayerStack& stack, const StackCache& cache,
                                                     const Tensor2& upstream) {
  if (cache.size() != stack.size()) shape_error("cache does not belong to this stack");
  std::vector<LayerGrads> grads(stack.size());
  Tensor2 g = upstream;
  for (std::size_t i = stack.size(); i-- > 0;) g = layer_backward(stack[i], cache[i], g, grads[i]);
  return {std::move(grads), std::move(g)};
}

LossResult bce_loss(const Tensor2& pred, const std::vector<int>& labels) {
  if (pred.cols() != 1 || pred.rows() != labels.size()) {
    shape_error("bce expects batch x 1 predictions matching " + std::to_string(labels.size()) + " labels, got " +
                dims(pred));
  }
  const double batch = static_cast<double>(labels.size());
  LossResult out{0.0, Tensor2(pred.rows(), 1)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorCode::kData, "label outside {0, 1}");
    const double p = std::clamp(pred(i, 0), kBceClamp, 1.0 - kBceClamp);
    const double y = labels[i];
    out.loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    out.grad(i, 0) = (p - y) / (p * (1.0 - p)) / batch;
  }
  if (!labels.empty()) out.loss /= batch;
  return out;
}

// ---- split model ---------------------------------------------------------------

std::size_t SplitModel::active_out() const {
  return stack_out(active_bottom, active_bottom.empty() ? 0 : active_bottom.front().in_dim());
}

std::size_t SplitModel::passive_out() const {
  return stack_out(passive_bottom, passive_bottom.empty() ? 0 : passive_bottom.front().in_dim());
}

void SplitModel::validate() const {
  auto chain = [](const LayerStack& s, const char* name) {
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (s[i].in_dim() != s[i - 1].out_dim()) shape_error(std::string(name) + " layers do not chain");
    }
  };
  chain(active_bottom, "active bottom");
  chain(passive_bottom, "passive bottom");
  chain(top, "top");
  if (active_bottom.empty() || passive_bottom.empty()) shape_error("both bottom stacks need at least one layer");
  if (interactive.in_dim() != active_out() + passive_out()) {
    shape_error("interactive layer input must equal the concatenated bottom outputs");
  }
  if (interactive.activation != Activation::kIdentity) shape_error("interactive layer must be linear");
  if (top.empty() || top.front().in_dim() != interactive.out_dim()) shape_error("top input must match interactive");
  if (top.back().out_dim() != 1 || top.back().activation != Activation::kSigmoid) {
    shape_error("top stack must end in one sigmoid unit");
  }
}

SplitModel init_split_model(const ModelConfig& c) {
  if (c.active_in == 0 || c.passive_in == 0) throw Error(ErrorCode::kConfig, "both parties need input features");
  if (c.bottom_hidden.empty()) throw Error(ErrorCode::kConfig, "bottom stacks need at least one layer");
  SplitModel m;
  m.active_bottom = make_stack(c.active_in, c.bottom_hidden, c.bottom_activation, splitmix(c.seed ^ 1));
  m.passive_bottom = make_stack(c.passive_in, c.bottom_hidden, c.bottom_activation, splitmix(c.seed ^ 2));
  m.interactive = DenseLayer(m.active_out() + m.passive_out(), c.interactive_out, Activation::kIdentity);
  std::mt19937_64 gen(splitmix(c.seed ^ 3));
  glorot(m.interactive, gen);
  m.top = make_stack(c.interactive_out, c.top_hidden, c.top_activation, splitmix(c.seed ^ 4));
  DenseLayer head(c.top_hidden.empty() ? c.interactive_out : c.top_hidden.back(), 1, Activation::kSigmoid);
  std::mt19937_64 head_gen(splitmix(c.seed ^ 5));
  glorot(head, head_gen);
  m.top.push_back(std::move(head));
  m.validate();
  return m;
}

WeightVector flatten(const SplitModel& model, Party party) {
  WeightVector out{layout_of(model, party), {}};
  for_each_layer(model, party, [&](const std::string&, const DenseLayer& layer) {
    append(out.values, layer.weights.data());
    append(out.values, layer.bias);
  });
  return out;
}

WeightVector flatten_grads(const SplitModel& model, const SplitGrads& grads, Party party) {
  WeightVector out{layout_of(model, party), {}};
  auto put = [&](const LayerGrads& g) {
    append(out.values, g.weights.data());
    append(out.values, g.bias);
  };
  if (party != Party::kPassive) {
    for (const auto& g : grads.active_bottom) put(g);
    put(grads.interactive);
    for (const auto& g : grads.top) put(g);
  }
  if (party != Party::kActive) {
    for (const auto& g : grads.passive_bottom) put(g);
  }
  if (out.values.size() != (out.layout.empty() ? 0 : out.layout.back().offset + out.layout.back().rows)) {
    shape_error("gradient set does not match the model layout");
  }
  return out;
}

void unflatten(SplitModel& model, const WeightVector& weights, Party party) {
  check_same_layout(flatten(model, party), weights, "unflatten");
  std::size_t pos = 0;
  for_each_layer(model, party, [&](const std::string&, DenseLayer& layer) {
    auto& w = layer.weights.data();
    std::copy_n(weights.values.begin() + static_cast<std::ptrdiff_t>(pos), w.size(), w.begin());
    pos += w.size();
    std::copy_n(weights.values.begin() + static_cast<std::ptrdiff_t>(pos), layer.bias.size(), layer.bias.begin());
    pos += layer.bias.size();
  });
}

WeightVector sgd_step(const WeightVector& params, const WeightVector& grads, double lr) {
  check_same_layout(params, grads, "sgd_step");
  WeightVector out = params;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= lr * grads.values[i];
  return out;
}

std::vector<std::uint8_t> serialize_weights(const WeightVector& weights) {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kCheckpointMagic), sizeof(kCheckpointMagic)});
  w.u32(static_cast<std::uint32_t>(weights.layout.size()));
  for (const auto& e : weights.layout) {
    w.str(e.name);
    w.u64(e.rows);
    w.u64(e.cols);
    w.u8(static_cast<std::uint8_t>(e.activation));
  }
  w.u64(weights.values.size());
  w.f64s(weights.values);
  return w.take();
}

WeightVector deserialize_weights(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(sizeof(kCheckpointMagic));
  if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kCheckpointMagic))) {
    throw Error(ErrorCode::kData, "not a weight checkpoint");
  }
  WeightVector out;
  const std::uint32_t n = r.u32();
  std::size_t offset = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    LayoutEntry e;
    e.name = r.str();
    e.rows = r.u64();
    e.cols = r.u64();
    const std::uint8_t act = r.u8();
    if (act > static_cast<std::uint8_t>(Activation::kGelu)) throw Error(ErrorCode::kData, "bad activation code");
    e.activation = static_cast<Activation>(act);
    e.offset = offset;
    offset += e.rows * e.cols;
    out.layout.push_back(std::move(e));
  }
  const std::uint64_t count = r.u64();
  if (count != offset) throw Error(ErrorCode::kData, "checkpoint value count disagrees with its layout");
  out.values = r.f64s(count);
  r.expect_done();
  return out;
}

void save_checkpoint(const std::string& path, const WeightVector& weights) {
  auto bytes = serialize_weights(weights);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kData, "cannot write checkpoint " + path);
}

WeightVector load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kData, "cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

WeightVector merge_weights(const WeightVector& a, const WeightVector& b) {
  WeightVector out = a;
  for (const auto& e : b.layout) {
    for (const auto& existing : a.layout) {
      if (existing.name == e.name) throw Error(ErrorCode::kData, "layer " + e.name + " present in both checkpoints");
    }
    LayoutEntry moved = e;
    moved.offset += a.values.size();
    out.layout.push_back(std::move(moved));
  }
  append(out.values, b.values);
  return out;
}

SplitModel model_from_weights(const WeightVector& weights) {
  // name prefix -> index -> (weight entry, bias entry)
  std::map<std::string, std::map<std::size_t, std::pair<const LayoutEntry*, const LayoutEntry*>>> stacks;
  std::pair<const LayoutEntry*, const LayoutEntry*> interactive{nullptr, nullptr};
  for (const auto& e : weights.layout) {
    const auto last_dot = e.name.rfind('.');
    const std::string head = e.name.substr(0, last_dot);
    const std::string kind = e.name.substr(last_dot + 1);
    if (kind != "weight" && kind != "bias") throw Error(ErrorCode::kData, "unexpected entry " + e.name);
    auto& slot = [&]() -> std::pair<const LayoutEntry*, const LayoutEntry*>& {
      if (head == "interactive") return interactive;
      const auto dot = head.rfind('.');
      if (dot == std::string::npos) throw Error(ErrorCode::kData, "unexpected entry " + e.name);
      return stacks[head.substr(0, dot)][std::stoul(head.substr(dot + 1))];
    }();
    (kind == "weight" ? slot.first : slot.second) = &e;
  }

  auto build = [&](const std::pair<const LayoutEntry*, const LayoutEntry*>& p, const std::string& name) {
    if (!p.first || !p.second) throw Error(ErrorCode::kData, "checkpoint is missing part of " + name);
    DenseLayer layer(p.first->cols, p.first->rows, p.first->activation);
    auto begin = weights.values.begin();
    std::copy_n(begin + static_cast<std::ptrdiff_t>(p.first->offset), layer.weights.size(), layer.weights.data().begin());
    std::copy_n(begin + static_cast<std::ptrdiff_t>(p.second->offset), layer.bias.size(), layer.bias.begin());
    return layer;
  };
  auto build_stack = [&](const std::string& prefix) {
    LayerStack s;
    auto it = stacks.find(prefix);
    if (it == stacks.end()) throw Error(ErrorCode::kData, "checkpoint has no " + prefix + " layers");
    std::size_t expect = 0;
    for (const auto& [idx, entries] : it->second) {
      if (idx != expect++) throw Error(ErrorCode::kData, prefix + " layer indices are not contiguous");
      s.push_back(build(entries, prefix + "." + std::to_string(idx)));
    }
    return s;
  };

  SplitModel m;
  m.active_bottom = build_stack("active_bottom");
  m.passive_bottom = build_stack("passive_bottom");
  m.interactive = build(interactive, "interactive");
  m.top = build_stack("top");
  m.validate();
  return m;
}

// ---- whole-model passes ----------------------------------------------------------

Tensor2 predict(const SplitModel& model, const Tensor2& active_x, const Tensor2& passive_x) {
  SplitBatch batch{active_x, passive_x, {}};
  return split_forward(model, batch).pred;
}

SplitForward split_forward(const SplitModel& model, const SplitBatch& batch) {
  if (batch.active_x.rows() != batch.passive_x.rows()) shape_error("party batches differ in length");
  SplitForward f;
  auto [ha, ca] = forward(model.active_bottom, batch.active_x);
  auto [hp, cp] = forward(model.passive_bottom, batch.passive_x);
  f.active_cache = std::move(ca);
  f.passive_cache = std::move(cp);
  Tensor2 z = layer_forward(model.interactive, hconcat(ha, hp), &f.interactive_cache);
  auto [pred, ct] = forward(model.top, z);
  f.top_cache = std::move(ct);
  f.pred = std::move(pred);
  return f;
}

double split_backward(const SplitModel& model, const SplitForward& fwd, const std::vector<int>& labels,
                      SplitGrads& grads) {
  LossResult loss = bce_loss(fwd.pred, labels);
  auto [top_grads, dz] = backward(model.top, fwd.top_cache, loss.grad);
  grads.top = std::move(top_grads);
  Tensor2 dh = layer_backward(model.interactive, fwd.interactive_cache, dz, grads.interactive);
  const std::size_t a_out = model.active_out();
  grads.active_bottom = backward(model.active_bottom, fwd.active_cache, column_slice(dh, 0, a_out)).first;
  grads.passive_bottom = backward(model.passive_bottom, fwd.passive_cache, column_slice(dh, a_out, dh.cols())).first;
  return loss.loss;
}

double centralized_reference_step(SplitModel& model, const SplitBatch& batch, double lr) {
  SplitForward fwd = split_forward(model, batch);
  SplitGrads grads;
  const double loss = split_backward(model, fwd, batch.labels, grads);
  unflatten(model, sgd_step(flatten(model, Party::kAll), flatten_grads(model, grads, Party::kAll), lr), Party::kAll);
  return loss;
}

}  // namespace dvfl
