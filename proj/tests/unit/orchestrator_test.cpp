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

#include "dvfl/orchestrator.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <thread>

#include "dvfl/error.hpp"

namespace dvfl {
namespace {

std::string row_id(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix.c_str(), i);
  return buf;
}

// Label = [x_a0 + x_p0 > 0] with a margin of 0.5 on either side.
VerticalParts toy_parts(std::size_t rows, std::uint64_t seed, const std::string& prefix = "r") {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0, 1);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  VerticalParts parts;
  for (std::size_t i = 0; i < rows; ++i) {
    const int label = static_cast<int>(gen() & 1);
    const double sign = label ? 1 : -1;
    const double s = sign * u(gen);
    const double split = std::uniform_real_distribution<double>(0, 1)(gen);
    Record a{row_id(prefix, i), {s * split, noise(gen), noise(gen)}, label};
    Record p{row_id(prefix, i), {s * (1 - split), noise(gen), noise(gen)}, std::nullopt};
    parts.active.push_back(a);
    parts.passive.push_back(p);
  }
  return parts;
}

RunConfig plain_config(std::size_t workers) {
  RunConfig c;
  c.n_workers = workers;
  c.he = false;
  c.batch = 8;
  c.epochs = 2;
  c.lr = 0.1;
  c.model.bottom_hidden = {6, 4};
  c.model.interactive_out = 5;
  c.model.top_hidden = {4};
  return c;
}

RunConfig he_config(std::size_t workers) {
  RunConfig c = plain_config(workers);
  c.he = true;
  c.key_bits = 128;
  return c;
}

TEST(RunDvfl, SingleWorkerPlaintextMatchesCentralizedTrainer) {
  VerticalParts parts = toy_parts(150, 1);
  // The passive party misses some rows and holds extras the active party lacks.
  VerticalParts input;
  input.active = parts.active;
  for (std::size_t i = 0; i < parts.passive.size(); ++i) {
    if (i % 7 != 3) input.passive.push_back(parts.passive[i]);
  }
  for (std::size_t i = 0; i < 20; ++i) input.passive.push_back({row_id("x", i), {1, 2, 3}, std::nullopt});

  RunConfig c = plain_config(1);
  c.epochs = 3;
  const RunResult result = run_dvfl(c, input);

  // Oracle: joined table restricted to common ids, in id order.
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < parts.active.size(); ++i) {
    if (i % 7 != 3) kept.push_back(i);
  }
  ASSERT_EQ(result.intersection.size(), kept.size());
  ModelConfig mc = c.model;
  mc.active_in = 3;
  mc.passive_in = 3;
  SplitModel model = init_split_model(mc);
  std::vector<double> expected;
  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    for (std::size_t lo = 0; lo < kept.size(); lo += c.batch) {
      const std::size_t hi = std::min(kept.size(), lo + c.batch);
      SplitBatch b{Tensor2(hi - lo, 3), Tensor2(hi - lo, 3), {}};
      for (std::size_t r = lo; r < hi; ++r) {
        for (std::size_t j = 0; j < 3; ++j) {
          b.active_x(r - lo, j) = parts.active[kept[r]].features[j];
          b.passive_x(r - lo, j) = parts.passive[kept[r]].features[j];
        }
        b.labels.push_back(*parts.active[kept[r]].label);
      }
      expected.push_back(centralized_reference_step(model, b, c.lr));
    }
  }
  ASSERT_EQ(result.round_losses.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(result.round_losses[i], expected[i], 1e-9) << i;
  const auto central = flatten(model, Party::kAll).values;
  ASSERT_EQ(result.weights.values.size(), central.size());
  for (std::size_t i = 0; i < central.size(); ++i) EXPECT_NEAR(result.weights.values[i], central[i], 1e-9);
}

TEST(RunDvfl, IdenticalFullBatchShardsGiveTheSameTrajectoryForAnyWorkerCount) {
  const VerticalParts base = toy_parts(24, 2);
  std::vector<RunResult> results;
  for (std::size_t n : {1u, 2u, 4u}) {
    VerticalParts parts;
    for (std::size_t copy = 0; copy < n; ++copy) {
      for (std::size_t i = 0; i < base.active.size(); ++i) {
        Record a = base.active[i], p = base.passive[i];
        a.id = p.id = "c" + std::to_string(copy) + "-" + base.active[i].id;
        parts.active.push_back(a);
        parts.passive.push_back(p);
      }
    }
    RunConfig c = plain_config(n);
    c.batch = base.active.size();
    c.epochs = 5;
    results.push_back(run_dvfl(c, parts));
  }
  for (std::size_t i = 1; i < results.size(); ++i) {
    EXPECT_EQ(results[i].weights, results[0].weights);
    EXPECT_EQ(results[i].round_losses, results[0].round_losses);
  }
  EXPECT_EQ(results[0].rounds, 5u);
}

TEST(RunDvfl, ZeroLearningRateKeepsTheInitialWeights) {
  RunConfig c = plain_config(2);
  c.lr = 0;
  const RunResult r = run_dvfl(c, toy_parts(40, 3));
  ModelConfig mc = c.model;
  mc.active_in = 3;
  mc.passive_in = 3;
  EXPECT_EQ(r.weights.values, flatten(init_split_model(mc), Party::kAll).values);
  EXPECT_EQ(r.rounds, 2u * 3u);
}

TEST(RunDvfl, ToySeparableRunLearns) {
  RunConfig c = plain_config(1);
  c.batch = 16;
  c.epochs = 2;
  c.lr = 0.5;
  const RunResult r = run_dvfl(c, toy_parts(400, 4));
  ASSERT_EQ(r.round_losses.size(), 50u);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += r.round_losses[i] / 10;
    tail += r.round_losses[40 + i] / 10;
  }
  EXPECT_LT(tail, head);
  EXPECT_LT(r.round_losses.back(), 0.2);
}

TEST(RunDvfl, EncryptedFirstStepLossTracksPlaintext) {
  const VerticalParts parts = toy_parts(64, 5);
  RunConfig plain = plain_config(2);
  plain.max_rounds = 1;
  RunConfig enc = he_config(2);
  enc.max_rounds = 1;
  const RunResult a = run_dvfl(plain, parts);
  const RunResult b = run_dvfl(enc, parts);
  ASSERT_EQ(a.round_losses.size(), 1u);
  ASSERT_EQ(b.round_losses.size(), 1u);
  EXPECT_NEAR(a.round_losses[0], b.round_losses[0], 1e-3);
  for (std::size_t i = 0; i < a.weights.values.size(); ++i) {
    EXPECT_NEAR(a.weights.values[i], b.weights.values[i], 1e-3);
  }
}

TEST(RunDvfl, ShortShardsTakeEmptySteps) {
  // 33 rows over 2 workers: shards of 17 and 16, so worker 1's second step is empty.
  RunConfig c = he_config(2);
  c.batch = 16;
  c.epochs = 1;
  const RunResult r = run_dvfl(c, toy_parts(33, 6));
  EXPECT_EQ(r.rounds, 2u);
  EXPECT_EQ(r.rows_processed, 33u);
  std::size_t empty = 0;
  for (const auto& m : r.metrics) empty += m.rows == 0 ? 1 : 0;
  EXPECT_EQ(empty, 2u);  // one per party

  // More workers than rows: worker 3 never sees data.
  RunConfig wide = plain_config(4);
  const RunResult w = run_dvfl(wide, toy_parts(3, 7));
  EXPECT_EQ(w.rows_processed, 3u * wide.epochs);
}

TEST(RunDvfl, LossThresholdStopsBothParties) {
  for (bool he : {false, true}) {
    RunConfig c = he ? he_config(2) : plain_config(2);
    c.stop.kind = StopCondition::Kind::kLossBelow;
    c.stop.threshold = 100;  // any finite loss qualifies, so the first check stops
    const RunResult r = run_dvfl(c, toy_parts(48, 8));
    EXPECT_EQ(r.rounds, 1u) << he;
    std::size_t passive_steps = 0;
    for (const auto& m : r.metrics) passive_steps += m.party == Party::kPassive ? 1 : 0;
    EXPECT_EQ(passive_steps, 2u);
  }
  RunConfig never = plain_config(1);
  never.stop.kind = StopCondition::Kind::kLossBelow;
  never.stop.threshold = 0;
  EXPECT_EQ(run_dvfl(never, toy_parts(16, 9)).rounds, 2u * 2u);
}

TEST(RunDvfl, PerEpochAggregationWithOneWorkerEqualsPerBatch) {
  const VerticalParts parts = toy_parts(40, 10);
  RunConfig batch = plain_config(1);
  batch.epochs = 3;
  RunConfig epoch = batch;
  epoch.aggregation = Aggregation::kPerEpoch;
  const RunResult a = run_dvfl(batch, parts);
  const RunResult b = run_dvfl(epoch, parts);
  EXPECT_EQ(b.rounds, 3u);
  EXPECT_EQ(a.rounds, 15u);
  EXPECT_EQ(a.weights, b.weights);
}

TEST(RunDvfl, RepeatedRunsAreBitIdentical) {
  const VerticalParts parts = toy_parts(90, 11);
  RunConfig c = plain_config(3);
  const auto first = serialize_weights(run_dvfl(c, parts).weights);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(serialize_weights(run_dvfl(c, parts).weights), first);
}

TEST(RunDvfl, TcpAndInProcessRunsAgree) {
  const VerticalParts parts = toy_parts(50, 12);
  RunConfig c = plain_config(2);
  RunOptions opts{true};
  const RunResult local = run_dvfl(c, parts, opts);
  c.transport = TransportKind::kTcp;
  const RunResult tcp = run_dvfl(c, parts, opts);
  EXPECT_EQ(local.weights, tcp.weights);
  EXPECT_EQ(local.message_log, tcp.message_log);
  ASSERT_TRUE(local.message_log.count("pair1.passive"));
  ASSERT_TRUE(local.message_log.count("ps0.active"));
  const auto& control = local.message_log.at("control.active");
  EXPECT_EQ(control, std::vector<MsgType>{MsgType::kHandshake});
  const auto& pair = local.message_log.at("pair0.passive");
  ASSERT_FALSE(pair.empty());
  EXPECT_EQ(pair.front(), MsgType::kPsiParams);
  EXPECT_EQ(pair.back(), MsgType::kPlainAct);
}

TEST(RunDvfl, HandshakeRejectsMismatchedSettings) {
  const VerticalParts parts = toy_parts(20, 13);
  RunConfig a = plain_config(1);
  RunConfig p = a;
  p.lr = 0.2;
  auto [ca, cp] = make_in_process_pair();
  auto [wa, wp] = make_in_process_pair();
  std::string passive_error;
  std::thread t([&] {
    try {
      run_party(p, Role::kPassive, parts.passive, {cp.get(), {wp.get()}});
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kConfig) passive_error = e.what();
    }
  });
  try {
    run_party(a, Role::kActive, parts.active, {ca.get(), {wa.get()}});
    ADD_FAILURE() << "active party accepted the mismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos) << e.what();
  }
  t.join();
  EXPECT_NE(passive_error.find("lr"), std::string::npos);
}

TEST(RunDvfl, DisjointIdsAreADataError) {
  VerticalParts parts = toy_parts(10, 14);
  for (auto& r : parts.passive) r.id = "other-" + r.id;
  try {
    run_dvfl(plain_config(2), parts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kData);
  }
}

TEST(RunDvfl, MetricsCsvHasOneLinePerStep) {
  RunConfig c = plain_config(2);
  const RunResult r = run_dvfl(c, toy_parts(30, 15));
  const std::string path = testing::TempDir() + "/metrics.csv";
  write_metrics_csv(path, r.metrics);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kMetricsCsvHeader);
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, r.metrics.size());
  EXPECT_EQ(r.metrics.size(), 2u * 2u * 2u * 2u);  // parties x workers x epochs x steps
  for (const auto& m : r.metrics) {
    EXPECT_GE(m.forward_bottom_ms, 0);
    EXPECT_GE(m.ps_sync_ms, 0);
    EXPECT_LE(m.rows, c.batch);
  }
  std::remove(path.c_str());
}

TEST(RunNetworkedParty, TwoProcessModeMatchesSingleProcess) {
  const VerticalParts parts = toy_parts(40, 16);
  const std::string dir = testing::TempDir();
  RunConfig c = plain_config(2);
  c.active_csv = dir + "/active.csv";
  c.passive_csv = dir + "/passive.csv";
  write_csv(c.active_csv, parts.active);
  write_csv(c.passive_csv, parts.passive);
  std::uint16_t port;
  {
    TcpListener probe("127.0.0.1", 0);
    port = probe.port();
  }
  c.listen = {"127.0.0.1", port};
  c.peer = {"127.0.0.1", port};

  PartyOutcome passive;
  std::thread t([&] { passive = run_networked_party(c, Role::kPassive); });
  PartyOutcome active = run_networked_party(c, Role::kActive);
  t.join();

  const RunResult local = run_dvfl(c, parts);
  EXPECT_EQ(merge_weights(active.weights, passive.weights), local.weights);
  EXPECT_EQ(active.intersection, passive.intersection);
}

}  // namespace
}  // namespace dvfl
