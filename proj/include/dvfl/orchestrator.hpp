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

// End-to-end driver: configuration handshake, hash-partitioned PSI over the
// worker pair channels, alignment and sequential sharding, then
// bulk-synchronous split training with one parameter server per party.
//
// Worker i of the active party and worker i of the passive party share a
// peer channel and walk the same step schedule: ceil(|shard 0| / batch)
// steps per epoch, rows [s·B, (s+1)·B) of the worker's shard at step s.
// A shard that runs out early still takes part in every step with an empty
// batch, so every round sees a push from every worker.

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dvfl/config.hpp"
#include "dvfl/data.hpp"
#include "dvfl/nn.hpp"
#include "dvfl/paillier.hpp"
#include "dvfl/psi.hpp"
#include "dvfl/transport.hpp"

namespace dvfl {

struct StepMetrics {
  Party party = Party::kActive;
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::size_t worker = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();  // active side only
  double forward_bottom_ms = 0;
  double he_exchange_ms = 0;
  double top_ms = 0;
  double backward_ms = 0;
  double ps_sync_ms = 0;
  std::size_t rows = 0;
};

extern const char* const kMetricsCsvHeader;
// One line per worker step; loss is empty for passive rows.
void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& metrics);

// ---- data --------------------------------------------------------------------

// Both parties' training records: the configured LIBSVM file split
// vertically, or the two party CSVs. max_rows and replicate are applied.
VerticalParts load_training_parts(const RunConfig& config);
// The records of one party only.
std::vector<Record> load_party_records(const RunConfig& config, Role role);
// Test split of the configured LIBSVM file, padded to `dim` columns and
// divided with the training column split.
VerticalParts load_test_parts(const RunConfig& config, std::size_t dim);

// ---- handshake -----------------------------------------------------------------

struct PeerInfo {
  std::size_t feature_dim = 0;
  std::optional<paillier::PublicKey> public_key;  // from the passive party when HE is on
};

// Both sides send HANDSHAKE with every setting that must agree plus their
// own feature count; the passive party appends its public key. Throws
// kConfig naming the first setting that differs.
PeerInfo negotiate(Channel& control, const RunConfig& config, Role role, std::size_t feature_dim,
                   const paillier::PublicKey* own_key);

// ---- one party -----------------------------------------------------------------

struct PartyLinks {
  Channel* control = nullptr;
  std::vector<Channel*> pairs;  // pairs[i] connects worker i to the peer's worker i
};

struct PartyOutcome {
  WeightVector weights;  // final global weights of this party's PS
  std::vector<StepMetrics> metrics;
  IdSet intersection;
  std::uint64_t rounds = 0;
  std::vector<double> round_losses;  // active only: mean loss of each round
  double psi_ms = 0;
  double train_ms = 0;
  double aggregate_ms = 0;
  std::size_t rows_processed = 0;
  std::map<std::string, std::vector<MsgType>> message_log;  // worker-side PS channels
};

// Runs one party's side of the pipeline over established links. `role` is
// kActive or kPassive.
PartyOutcome run_party(const RunConfig& config, Role role, std::vector<Record> records, const PartyLinks& links,
                       bool record_messages = false);

// Two-process mode: the active party listens on config.listen and accepts
// the control connection followed by one connection per worker; the passive
// party dials config.peer in the same order.
PartyOutcome run_networked_party(const RunConfig& config, Role role);

// ---- single process --------------------------------------------------------------

struct RunOptions {
  bool record_messages = false;
};

struct RunResult {
  SplitModel model;
  WeightVector weights;  // both parties, active layers first
  std::vector<StepMetrics> metrics;
  IdSet intersection;
  std::uint64_t rounds = 0;
  std::vector<double> round_losses;
  double psi_ms = 0;
  double train_ms = 0;
  double wall_ms = 0;
  std::size_t rows_processed = 0;
  std::size_t active_dim = 0;
  std::size_t passive_dim = 0;
  // Frame types sent on each channel, keyed "<channel>.<side>".
  std::map<std::string, std::vector<MsgType>> message_log;
};

// Both parties and all workers in one process over config.transport.
RunResult run_dvfl(const RunConfig& config, const RunOptions& options = {});
// Same with caller-supplied party records.
RunResult run_dvfl(const RunConfig& config, VerticalParts parts, const RunOptions& options = {});

}  // namespace dvfl
