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

// Per-party parameter server with bulk-synchronous aggregation. Workers push
// their locally updated weights for round r; once every worker has pushed,
// the global vector becomes the elementwise mean and the round advances.
// Pull blocks until the requested round has been published.

#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "dvfl/nn.hpp"
#include "dvfl/transport.hpp"

namespace dvfl {

inline constexpr std::size_t kChunkThreshold = 4096;
inline constexpr double kNoMetric = std::numeric_limits<double>::quiet_NaN();

struct WeightChunk {
  std::uint32_t key = 0;
  std::vector<double> values;
  std::uint64_t round = 0;
};

// Vectors longer than `chunk_size` become ceil(len / chunk_size) numbered
// chunks; shorter ones a single chunk.
std::vector<WeightChunk> split_into_chunks(const std::vector<double>& values, std::uint64_t round,
                                           std::size_t chunk_size = kChunkThreshold);
// Chunks must be complete and keyed 0..k-1 (any order).
std::vector<double> assemble_chunks(std::vector<WeightChunk> chunks);

// Elementwise mean of the pushes in ascending worker order, summed pairwise.
std::vector<double> aggregate(const std::map<std::size_t, std::vector<double>>& pending);

class ParameterServer {
 public:
  ParameterServer(WeightVector initial, std::size_t n_workers);

  // Throws kProtocol on a duplicate push, a round other than the current
  // one, or a length mismatch. `metric` (e.g. the worker's batch loss) is
  // averaged over the workers that supplied one.
  void push(std::size_t worker_id, std::vector<double> values, std::uint64_t round, double metric = kNoMetric);
  // Blocks until round() >= round. Throws kShutdown once shut down and
  // kProtocol when the round has already been superseded.
  std::vector<double> pull(std::size_t worker_id, std::uint64_t round);
  void shutdown();

  std::uint64_t round() const;
  // Mean metric of the aggregation that published `round`; NaN for round 0.
  double round_metric(std::uint64_t round) const;
  std::size_t aggregations() const;
  std::size_t n_workers() const { return n_workers_; }
  WeightVector global() const;
  // Wall time spent inside aggregate(), in milliseconds.
  double aggregate_ms() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<LayoutEntry> layout_;
  std::vector<double> global_;
  std::map<std::size_t, std::vector<double>> pending_;
  std::map<std::size_t, double> pending_metrics_;
  std::vector<double> round_metrics_;
  std::size_t n_workers_;
  std::uint64_t round_ = 0;
  std::size_t aggregations_ = 0;
  double aggregate_ms_ = 0;
  bool shutdown_ = false;
};

// Worker-side handle.
class PsClient {
 public:
  virtual ~PsClient() = default;
  virtual void push(const std::vector<double>& values, std::uint64_t round, double metric = kNoMetric) = 0;
  virtual std::vector<double> pull(std::uint64_t round) = 0;
  // Round metric delivered with the most recent pull.
  double last_metric() const { return last_metric_; }

 protected:
  double last_metric_ = kNoMetric;
};

class LocalPsClient final : public PsClient {
 public:
  LocalPsClient(ParameterServer& server, std::size_t worker_id) : server_(server), worker_id_(worker_id) {}
  void push(const std::vector<double>& values, std::uint64_t round, double metric = kNoMetric) override;
  std::vector<double> pull(std::uint64_t round) override;

 private:
  ParameterServer& server_;
  std::size_t worker_id_;
};

// PUSH:      worker u32, round u64, metric f64, key u32, n_chunks u32, count u32, f64s
// PULL_REQ:  worker u32, round u64
// PULL_RESP: round u64, metric f64, key u32, n_chunks u32, count u32, f64s
// Large vectors travel as one frame per chunk.
class RemotePsClient final : public PsClient {
 public:
  RemotePsClient(Channel& channel, std::size_t worker_id) : channel_(channel), worker_id_(worker_id) {}
  void push(const std::vector<double>& values, std::uint64_t round, double metric = kNoMetric) override;
  std::vector<double> pull(std::uint64_t round) override;

 private:
  Channel& channel_;
  std::size_t worker_id_;
};

// Serves PUSH / PULL_REQ frames from worker channels until each channel
// sends SHUTDOWN or closes.
class PsService {
 public:
  explicit PsService(ParameterServer& server) : server_(server) {}
  ~PsService();

  // The service takes ownership of the channel and serves it on its own thread.
  void serve(std::unique_ptr<Channel> worker_channel);
  // Joins every connection thread; rethrows the first connection failure.
  void join();

 private:
  void run(Channel& ch);

  ParameterServer& server_;
  std::mutex mu_;
  std::vector<std::unique_ptr<Channel>> channels_;
  std::vector<std::thread> threads_;
  std::exception_ptr error_;
};

}  // namespace dvfl
