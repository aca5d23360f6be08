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

#include "dvfl/parameter_server.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "dvfl/error.hpp"

namespace dvfl {

namespace {

void sum_range(const std::vector<const std::vector<double>*>& vs, std::size_t lo, std::size_t hi,
               std::vector<double>& out) {
  if (hi - lo == 1) {
    out = *vs[lo];
    return;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  std::vector<double> right;
  sum_range(vs, lo, mid, out);
  sum_range(vs, mid, hi, right);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += right[i];
}

void write_chunk(ByteWriter& w, const WeightChunk& c, std::uint32_t n_chunks) {
  w.u32(c.key);
  w.u32(n_chunks);
  w.u32(static_cast<std::uint32_t>(c.values.size()));
  w.f64s(c.values);
}

std::pair<WeightChunk, std::uint32_t> read_chunk(ByteReader& r, std::uint64_t round) {
  WeightChunk c;
  c.round = round;
  c.key = r.u32();
  const std::uint32_t n_chunks = r.u32();
  c.values = r.f64s(r.u32());
  r.expect_done();
  if (c.key >= n_chunks) throw Error(ErrorCode::kProtocol, "chunk key out of range");
  return {std::move(c), n_chunks};
}

}  // namespace

std::vector<WeightChunk> split_into_chunks(const std::vector<double>& values, std::uint64_t round,
                                           std::size_t chunk_size) {
  if (chunk_size == 0) throw Error(ErrorCode::kInvalidArgument, "chunk size must be positive");
  std::vector<WeightChunk> out;
  if (values.size() <= chunk_size) {
    out.push_back({0, values, round});
    return out;
  }
  for (std::size_t pos = 0, key = 0; pos < values.size(); pos += chunk_size, ++key) {
    const std::size_t end = std::min(values.size(), pos + chunk_size);
    out.push_back({static_cast<std::uint32_t>(key),
                   std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(pos),
                                       values.begin() + static_cast<std::ptrdiff_t>(end)),
                   round});
  }
  return out;
}

std::vector<double> assemble_chunks(std::vector<WeightChunk> chunks) {
  std::sort(chunks.begin(), chunks.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  std::vector<double> out;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (chunks[i].key != i) throw Error(ErrorCode::kProtocol, "weight chunks are missing or duplicated");
    if (chunks[i].round != chunks[0].round) throw Error(ErrorCode::kProtocol, "weight chunks from different rounds");
    out.insert(out.end(), chunks[i].values.begin(), chunks[i].values.end());
  }
  return out;
}

std::vector<double> aggregate(const std::map<std::size_t, std::vector<double>>& pending) {
  if (pending.empty()) throw Error(ErrorCode::kInvalidArgument, "nothing to aggregate");
  std::vector<const std::vector<double>*> vs;
  for (const auto& [worker, v] : pending) {
    if (!vs.empty() && v.size() != vs.front()->size()) {
      throw Error(ErrorCode::kProtocol, "pushed vectors differ in length");
    }
    vs.push_back(&v);
  }
  std::vector<double> out;
  sum_range(vs, 0, vs.size(), out);
  const double n = static_cast<double>(vs.size());
  for (double& x : out) x /= n;
  return out;
}

ParameterServer::ParameterServer(WeightVector initial, std::size_t n_workers)
    : layout_(std::move(initial.layout)), global_(std::move(initial.values)), n_workers_(n_workers) {
  if (n_workers == 0) throw Error(ErrorCode::kInvalidArgument, "parameter server needs at least one worker");
}

void ParameterServer::push(std::size_t worker_id, std::vector<double> values, std::uint64_t round, double metric) {
  std::lock_guard lock(mu_);
  if (shutdown_) throw Error(ErrorCode::kShutdown, "parameter server is shut down");
  if (worker_id >= n_workers_) throw Error(ErrorCode::kProtocol, "unknown worker " + std::to_string(worker_id));
  if (round != round_) {
    throw Error(ErrorCode::kProtocol, "worker " + std::to_string(worker_id) + " pushed round " +
                                          std::to_string(round) + " while the server is at " + std::to_string(round_));
  }
  if (values.size() != global_.size()) throw Error(ErrorCode::kProtocol, "pushed vector has the wrong length");
  if (!pending_.emplace(worker_id, std::move(values)).second) {
    throw Error(ErrorCode::kProtocol, "worker " + std::to_string(worker_id) + " pushed twice in one round");
  }
  if (!std::isnan(metric)) pending_metrics_[worker_id] = metric;
  if (pending_.size() == n_workers_) {
    auto start = std::chrono::steady_clock::now();
    global_ = aggregate(pending_);
    aggregate_ms_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    double sum = 0;
    for (const auto& [w, m] : pending_metrics_) sum += m;
    round_metrics_.push_back(pending_metrics_.empty() ? kNoMetric : sum / static_cast<double>(pending_metrics_.size()));
    pending_.clear();
    pending_metrics_.clear();
    ++round_;
    ++aggregations_;
    cv_.notify_all();
  }
}

std::vector<double> ParameterServer::pull(std::size_t worker_id, std::uint64_t round) {
  std::unique_lock lock(mu_);
  if (worker_id >= n_workers_) throw Error(ErrorCode::kProtocol, "unknown worker " + std::to_string(worker_id));
  cv_.wait(lock, [&] { return shutdown_ || round_ >= round; });
  if (round_ < round) throw Error(ErrorCode::kShutdown, "parameter server shut down during pull");
  if (round_ > round) throw Error(ErrorCode::kProtocol, "pull for superseded round " + std::to_string(round));
  return global_;
}

void ParameterServer::shutdown() {
  std::lock_guard lock(mu_);
  shutdown_ = true;
  cv_.notify_all();
}

std::uint64_t ParameterServer::round() const {
  std::lock_guard lock(mu_);
  return round_;
}

double ParameterServer::round_metric(std::uint64_t round) const {
  std::lock_guard lock(mu_);
  if (round == 0 || round > round_metrics_.size()) return kNoMetric;
  return round_metrics_[round - 1];
}

std::size_t ParameterServer::aggregations() const {
  std::lock_guard lock(mu_);
  return aggregations_;
}

WeightVector ParameterServer::global() const {
  std::lock_guard lock(mu_);
  return {layout_, global_};
}

double ParameterServer::aggregate_ms() const {
  std::lock_guard lock(mu_);
  return aggregate_ms_;
}

void LocalPsClient::push(const std::vector<double>& values, std::uint64_t round, double metric) {
  server_.push(worker_id_, values, round, metric);
}

std::vector<double> LocalPsClient::pull(std::uint64_t round) {
  auto out = server_.pull(worker_id_, round);
  last_metric_ = server_.round_metric(round);
  return out;
}

void RemotePsClient::push(const std::vector<double>& values, std::uint64_t round, double metric) {
  auto chunks = split_into_chunks(values, round);
  for (const auto& c : chunks) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(worker_id_));
    w.u64(round);
    w.f64(metric);
    write_chunk(w, c, static_cast<std::uint32_t>(chunks.size()));
    channel_.send({MsgType::kPush, w.take()});
  }
}

std::vector<double> RemotePsClient::pull(std::uint64_t round) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(worker_id_));
  w.u64(round);
  channel_.send({MsgType::kPullReq, w.take()});
  std::vector<WeightChunk> chunks;
  std::uint32_t expected = 1;
  while (chunks.size() < expected) {
    Frame f = expect_frame(channel_, MsgType::kPullResp);
    ByteReader r(f.payload);
    const std::uint64_t got_round = r.u64();
    if (got_round != round) throw Error(ErrorCode::kProtocol, "pull response for the wrong round");
    last_metric_ = r.f64();
    auto [chunk, n_chunks] = read_chunk(r, got_round);
    expected = n_chunks;
    chunks.push_back(std::move(chunk));
  }
  return assemble_chunks(std::move(chunks));
}

PsService::~PsService() {
  bool running = false;
  for (auto& t : threads_) running |= t.joinable();
  if (running) server_.shutdown();
  for (auto& ch : channels_) ch->close();
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
}

void PsService::serve(std::unique_ptr<Channel> worker_channel) {
  std::lock_guard lock(mu_);
  Channel& ch = *worker_channel;
  channels_.push_back(std::move(worker_channel));
  threads_.emplace_back([this, &ch] {
    try {
      run(ch);
    } catch (...) {
      {
        std::lock_guard lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      server_.shutdown();
      ch.close();
    }
  });
}

void PsService::join() {
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  if (error_) std::rethrow_exception(error_);
}

void PsService::run(Channel& ch) {
  std::map<std::uint64_t, std::vector<WeightChunk>> partial;  // round -> chunks
  for (;;) {
    Frame f;
    try {
      f = ch.recv();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kChannelClosed) return;
      throw;
    }
    if (f.type == MsgType::kShutdown) return;
    ByteReader r(f.payload);
    const std::size_t worker = r.u32();
    const std::uint64_t round = r.u64();
    if (f.type == MsgType::kPush) {
      const double metric = r.f64();
      auto [chunk, n_chunks] = read_chunk(r, round);
      auto& parts = partial[round];
      parts.push_back(std::move(chunk));
      if (parts.size() == n_chunks) {
        auto values = assemble_chunks(std::move(parts));
        partial.erase(round);
        server_.push(worker, std::move(values), round, metric);
      }
    } else if (f.type == MsgType::kPullReq) {
      r.expect_done();
      auto chunks = split_into_chunks(server_.pull(worker, round), round);
      const double metric = server_.round_metric(round);
      for (const auto& c : chunks) {
        ByteWriter w;
        w.u64(round);
        w.f64(metric);
        write_chunk(w, c, static_cast<std::uint32_t>(chunks.size()));
        ch.send({MsgType::kPullResp, w.take()});
      }
    } else {
      throw Error(ErrorCode::kProtocol, std::string("parameter server got ") + msg_type_name(f.type));
    }
  }
}

}  // namespace dvfl
