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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dvfl/error.hpp"

namespace dvfl {
namespace {

void PrintTo(Activation a, std::ostream* os) { *os << activation_name(a); }

Tensor2 random_tensor(std::size_t r, std::size_t c, std::mt19937_64& gen, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor2 t(r, c);
  for (double& v : t.data()) v = u(gen);
  return t;
}

DenseLayer random_layer(std::size_t in, std::size_t out, Activation act, std::mt19937_64& gen) {
  DenseLayer l(in, out, act);
  l.weights = random_tensor(out, in, gen, 0.8);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (double& b : l.bias) b = u(gen);
  return l;
}

// Straight-line reference for one layer, written without the library helpers.
std::vector<std::vector<double>> reference_layer(const DenseLayer& l, const std::vector<std::vector<double>>& x) {
  std::vector<std::vector<double>> out;
  for (const auto& row : x) {
    std::vector<double> o;
    for (std::size_t j = 0; j < l.out_dim(); ++j) {
      double s = l.bias[j];
      for (std::size_t i = 0; i < l.in_dim(); ++i) s += l.weights(j, i) * row[i];
      switch (l.activation) {
        case Activation::kIdentity: break;
        case Activation::kRelu: s = std::max(0.0, s); break;
        case Activation::kSigmoid: s = 1 / (1 + std::exp(-s)); break;
        case Activation::kGelu: s = s * 0.5 * std::erfc(-s / std::sqrt(2.0)); break;
      }
      o.push_back(s);
    }
    out.push_back(o);
  }
  return out;
}

double relative_error(double a, double b) {
  const double m = std::max(std::abs(a), std::abs(b));
  if (m < 1e-8) return std::abs(a - b);
  return std::abs(a - b) / m;
}

double weighted_sum(const Tensor2& out, const Tensor2& r) {
  double s = 0;
  for (std::size_t k = 0; k < out.size(); ++k) s += out.data()[k] * r.data()[k];
  return s;
}

ModelConfig small_config() {
  ModelConfig c;
  c.active_in = 5;
  c.passive_in = 4;
  c.bottom_hidden = {6, 3};
  c.interactive_out = 5;
  c.top_hidden = {4};
  c.seed = 9;
  return c;
}

SplitBatch random_batch(std::size_t rows, const ModelConfig& c, std::mt19937_64& gen) {
  SplitBatch b{random_tensor(rows, c.active_in, gen), random_tensor(rows, c.passive_in, gen), {}};
  for (std::size_t i = 0; i < rows; ++i) b.labels.push_back(static_cast<int>(gen() & 1));
  return b;
}

TEST(Tensor, Products) {
  Tensor2 a(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor2 b(2, 3, {1, 0, 1, 0, 1, 0});
  EXPECT_EQ(matmul_nt(a, b), Tensor2(2, 2, {4, 2, 10, 5}));
  EXPECT_EQ(matmul_tn(a, b), Tensor2(3, 3, {1, 4, 1, 2, 5, 2, 3, 6, 3}));
  EXPECT_EQ(matmul(a, Tensor2(3, 1, {1, 1, 1})), Tensor2(2, 1, {6, 15}));
  EXPECT_EQ(hconcat(a, b).cols(), 6u);
  EXPECT_EQ(column_slice(hconcat(a, b), 3, 6), b);
  EXPECT_THROW(matmul(a, b), Error);
  EXPECT_THROW(Tensor2(2, 2, {1, 2, 3}), Error);
}

TEST(Forward, ZeroSigmoidLayerGivesHalf) {
  DenseLayer l(4, 3, Activation::kSigmoid);
  Tensor2 x(5, 4, 2.5);
  Tensor2 y = layer_forward(l, x);
  for (double v : y.data()) EXPECT_EQ(v, 0.5);
}

TEST(Forward, IdentityIsAffine) {
  DenseLayer l(2, 2, Activation::kIdentity);
  l.weights = Tensor2(2, 2, {1, 2, 3, 4});
  l.bias = {10, 20};
  EXPECT_EQ(layer_forward(l, Tensor2(1, 2, {1, 1})), Tensor2(1, 2, {13, 27}));
  EXPECT_THROW(layer_forward(l, Tensor2(1, 3)), Error);
}

TEST(Forward, MatchesStraightLineReference) {
  std::mt19937_64 gen(1);
  for (Activation act : {Activation::kIdentity, Activation::kRelu, Activation::kSigmoid, Activation::kGelu}) {
    LayerStack stack{random_layer(7, 5, act, gen), random_layer(5, 4, Activation::kRelu, gen),
                     random_layer(4, 2, act, gen)};
    Tensor2 x = random_tensor(6, 7, gen, 2.0);
    std::vector<std::vector<double>> ref;
    for (std::size_t i = 0; i < 6; ++i) ref.emplace_back(x.row(i), x.row(i) + 7);
    for (const auto& l : stack) ref = reference_layer(l, ref);
    auto [y, cache] = forward(stack, x);
    ASSERT_EQ(cache.size(), 3u);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(y(i, j), ref[i][j], 1e-12);
    }
  }
}

class GradientCheck : public ::testing::TestWithParam<Activation> {};

TEST_P(GradientCheck, StackMatchesFiniteDifferences) {
  std::mt19937_64 gen(static_cast<std::uint64_t>(GetParam()) + 11);
  LayerStack stack{random_layer(6, 8, GetParam(), gen), random_layer(8, 5, GetParam(), gen),
                   random_layer(5, 3, GetParam(), gen)};
  Tensor2 x = random_tensor(4, 6, gen, 1.5);
  Tensor2 r = random_tensor(4, 3, gen);
  auto [y, cache] = forward(stack, x);
  auto [grads, dx] = backward(stack, cache, r);

  const double h = 1e-5;
  auto objective = [&] { return weighted_sum(forward(stack, x).first, r); };
  std::uniform_int_distribution<std::size_t> pick_layer(0, stack.size() - 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t li = pick_layer(gen);
    bool use_bias = gen() % 4 == 0;
    auto& params = use_bias ? stack[li].bias : stack[li].weights.data();
    std::size_t k = gen() % params.size();
    const double saved = params[k];
    params[k] = saved + h;
    const double up = objective();
    params[k] = saved - h;
    const double down = objective();
    params[k] = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = use_bias ? grads[li].bias[k] : grads[li].weights.data()[k];
    EXPECT_LT(relative_error(analytic, numeric), 1e-4) << "layer " << li << " param " << k;
  }
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x.data()[k];
    x.data()[k] = saved + h;
    const double up = objective();
    x.data()[k] = saved - h;
    const double down = objective();
    x.data()[k] = saved;
    EXPECT_LT(relative_error(dx.data()[k], (up - down) / (2 * h)), 1e-4);
  }
}

INSTANTIATE_TEST_SUITE_P(AllActivations, GradientCheck,
                         ::testing::Values(Activation::kIdentity, Activation::kRelu, Activation::kSigmoid,
                                           Activation::kGelu),
                         [](const auto& info) { return std::string(activation_name(info.param)); });

TEST(Backward, ZeroUpstreamAndLinearity) {
  std::mt19937_64 gen(3);
  LayerStack stack{random_layer(4, 6, Activation::kGelu, gen), random_layer(6, 2, Activation::kSigmoid, gen)};
  Tensor2 x = random_tensor(3, 4, gen);
  auto [y, cache] = forward(stack, x);
  auto [zero_grads, zero_dx] = backward(stack, cache, Tensor2(3, 2));
  for (const auto& g : zero_grads) {
    for (double v : g.weights.data()) EXPECT_EQ(v, 0.0);
    for (double v : g.bias) EXPECT_EQ(v, 0.0);
  }
  for (double v : zero_dx.data()) EXPECT_EQ(v, 0.0);

  Tensor2 g = random_tensor(3, 2, gen);
  Tensor2 g2 = g;
  for (double& v : g2.data()) v *= 2;
  auto [a, adx] = backward(stack, cache, g);
  auto [b, bdx] = backward(stack, cache, g2);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t k = 0; k < a[l].weights.size(); ++k) {
      EXPECT_DOUBLE_EQ(b[l].weights.data()[k], 2 * a[l].weights.data()[k]);
    }
  }
  for (std::size_t k = 0; k < adx.size(); ++k) EXPECT_DOUBLE_EQ(bdx.data()[k], 2 * adx.data()[k]);
  EXPECT_THROW(backward(stack, cache, Tensor2(2, 2)), Error);
}

TEST(Bce, AnalyticCases) {
  auto half = bce_loss(Tensor2(4, 1, 0.5), {0, 1, 1, 0});
  EXPECT_NEAR(half.loss, std::log(2.0), 1e-15);
  auto exact = bce_loss(Tensor2(3, 1, {1, 0, 1}), {1, 0, 1});
  EXPECT_LT(exact.loss, 1e-11);
  EXPECT_THROW(bce_loss(Tensor2(1, 1, 0.5), {2}), Error);
  EXPECT_THROW(bce_loss(Tensor2(2, 1, 0.5), {1}), Error);
}

TEST(Bce, MatchesScalarLoop) {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  Tensor2 pred(50, 1);
  std::vector<int> y;
  double expect = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    pred(i, 0) = u(gen);
    y.push_back(static_cast<int>(gen() & 1));
    expect += y[i] ? -std::log(pred(i, 0)) : -std::log(1 - pred(i, 0));
  }
  auto got = bce_loss(pred, y);
  EXPECT_NEAR(got.loss, expect / 50, 1e-12);
  for (std::size_t i = 0; i < 50; ++i) {
    const double p = pred(i, 0);
    const double g = y[i] ? -1 / p : 1 / (1 - p);
    EXPECT_NEAR(got.grad(i, 0), g / 50, 1e-12);
  }
}

TEST(Sgd, Arithmetic) {
  WeightVector p{{{"x.weight", 2, 1, 0, Activation::kIdentity}}, {1, 2}};
  WeightVector g{p.layout, {10, -10}};
  EXPECT_EQ(sgd_step(p, g, 0.0), p);
  EXPECT_EQ(sgd_step(p, g, 0.05).values, (std::vector<double>{0.5, 2.5}));
  auto two = sgd_step(sgd_step(p, g, 0.025), g, 0.025);
  auto one = sgd_step(p, g, 0.05);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(two.values[i], one.values[i]);
  WeightVector other{{{"y.weight", 2, 1, 0, Activation::kIdentity}}, {1, 2}};
  EXPECT_THROW(sgd_step(p, other, 0.1), Error);
}

TEST(SplitModel, DefaultArchitecture) {
  ModelConfig c;
  c.active_in = 62;
  c.passive_in = 61;
  SplitModel m = init_split_model(c);
  EXPECT_EQ(m.active_bottom.size(), 2u);
  EXPECT_EQ(m.active_out(), 16u);
  EXPECT_EQ(m.passive_out(), 16u);
  EXPECT_EQ(m.interactive.in_dim(), 32u);
  EXPECT_EQ(m.interactive.out_dim(), 32u);
  EXPECT_EQ(m.top.size(), 2u);
  EXPECT_EQ(m.top[0].out_dim(), 16u);
  EXPECT_EQ(m.top[1].activation, Activation::kSigmoid);
  const double bound = std::sqrt(6.0 / (62 + 32));
  for (double w : m.active_bottom[0].weights.data()) EXPECT_LE(std::abs(w), bound);
  for (double b : m.active_bottom[0].bias) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(flatten(init_split_model(c), Party::kAll), flatten(m, Party::kAll));
}

TEST(SplitModel, PartyHalvesAreIndependentOfEachOther) {
  ModelConfig c = small_config();
  SplitModel a = init_split_model(c);
  c.active_in = 7;
  SplitModel b = init_split_model(c);
  EXPECT_EQ(flatten(a, Party::kPassive), flatten(b, Party::kPassive));
}

TEST(SplitModel, FullModelGradientCheck) {
  std::mt19937_64 gen(5);
  ModelConfig c = small_config();
  c.bottom_activation = Activation::kGelu;
  SplitModel model = init_split_model(c);
  SplitBatch batch = random_batch(8, c, gen);
  SplitGrads grads;
  split_backward(model, split_forward(model, batch), batch.labels, grads);
  WeightVector analytic = flatten_grads(model, grads, Party::kAll);
  WeightVector params = flatten(model, Party::kAll);

  auto loss_at = [&](const WeightVector& w) {
    SplitModel m = model;
    unflatten(m, w, Party::kAll);
    return bce_loss(split_forward(m, batch).pred, batch.labels).loss;
  };
  const double h = 1e-5;
  for (std::size_t k = 0; k < params.values.size(); ++k) {
    WeightVector up = params, down = params;
    up.values[k] += h;
    down.values[k] -= h;
    const double numeric = (loss_at(up) - loss_at(down)) / (2 * h);
    EXPECT_LT(relative_error(analytic.values[k], numeric), 1e-4) << "param " << k;
  }
}

TEST(Weights, FlattenRoundTripAndCheckpoint) {
  SplitModel m = init_split_model(small_config());
  WeightVector all = flatten(m, Party::kAll);
  WeightVector active = flatten(m, Party::kActive);
  WeightVector passive = flatten(m, Party::kPassive);
  EXPECT_EQ(all.values.size(), active.values.size() + passive.values.size());
  EXPECT_EQ(merge_weights(active, passive), all);
  EXPECT_THROW(merge_weights(active, active), Error);

  SplitModel zeroed = m;
  WeightVector z = all;
  std::fill(z.values.begin(), z.values.end(), 0.0);
  unflatten(zeroed, z, Party::kAll);
  unflatten(zeroed, all, Party::kAll);
  EXPECT_EQ(flatten(zeroed, Party::kAll), all);
  EXPECT_THROW(unflatten(zeroed, active, Party::kAll), Error);

  auto path = (std::filesystem::temp_directory_path() / "dvfl_nn_test.ckpt").string();
  save_checkpoint(path, all);
  WeightVector loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded, all);
  EXPECT_EQ(flatten(model_from_weights(loaded), Party::kAll), all);

  auto bytes = serialize_weights(all);
  bytes.pop_back();
  EXPECT_THROW(deserialize_weights(bytes), Error);
}

TEST(Weights, CheckpointValuesAreBigEndian) {
  WeightVector w{{{"x.bias", 1, 1, 0, Activation::kRelu}}, {1.0}};
  auto bytes = serialize_weights(w);
  std::vector<std::uint8_t> tail(bytes.end() - 8, bytes.end());
  EXPECT_EQ(tail, (std::vector<std::uint8_t>{0x3F, 0xF0, 0, 0, 0, 0, 0, 0}));
}

TEST(Centralized, DeterministicAndLearnsSeparableData) {
  ModelConfig c = small_config();
  std::mt19937_64 gen(6);
  std::vector<SplitBatch> batches;
  for (int i = 0; i < 50; ++i) {
    SplitBatch b = random_batch(16, c, gen);
    // Class decided by the sign of one feature on each side, with a margin.
    for (std::size_t r = 0; r < 16; ++r) {
      const double sign = b.labels[r] ? 1.0 : -1.0;
      b.active_x(r, 0) = sign * (0.5 + 0.5 * std::abs(b.active_x(r, 0)));
      b.passive_x(r, 0) = sign * (0.5 + 0.5 * std::abs(b.passive_x(r, 0)));
    }
    batches.push_back(std::move(b));
  }
  auto run = [&](double lr) {
    SplitModel m = init_split_model(c);
    std::vector<double> losses;
    for (int epoch = 0; epoch < 2; ++epoch) {
      for (const auto& b : batches) losses.push_back(centralized_reference_step(m, b, lr));
    }
    return std::make_pair(losses, flatten(m, Party::kAll));
  };
  auto [losses, weights] = run(0.5);
  auto [losses2, weights2] = run(0.5);
  EXPECT_EQ(weights, weights2);
  EXPECT_EQ(losses, losses2);
  double first = 0, last = 0;
  for (int i = 0; i < 50; ++i) {
    first += losses[i];
    last += losses[losses.size() - 50 + i];
  }
  EXPECT_LT(last / 50, 0.2);
  EXPECT_LT(last, first);

  auto [frozen_losses, frozen] = run(0.0);
  EXPECT_EQ(frozen, flatten(init_split_model(c), Party::kAll));
}

}  // namespace
}  // namespace dvfl
