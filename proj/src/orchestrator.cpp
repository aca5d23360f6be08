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

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "dvfl/error.hpp"
#include "dvfl/parameter_server.hpp"
#include "dvfl/secure_interactive.hpp"

namespace dvfl {

const char* const kMetricsCsvHeader =
    "party,epoch,step,worker,loss,forward_bottom_ms,he_exchange_ms,top_ms,backward_ms,ps_sync_ms,rows";

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string exact(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

VerticalSplitSpec split_spec(const RunConfig& c, std::size_t dim) {
  return c.active_cols.empty() ? VerticalSplitSpec::halves(dim) : VerticalSplitSpec::from_range(c.active_cols, dim);
}

void truncate_rows(std::vector<Record>& rows, std::size_t max_rows) {
  if (max_rows > 0 && rows.size() > max_rows) rows.resize(max_rows);
}

// ---- handshake ----------------------------------------------------------------

using Settings = std::vector<std::pair<std::string, std::string>>;

Settings shared_settings(const RunConfig& c) {
  Settings s = {
      {"protocol", "dvfl/1"},
      {"n_workers", std::to_string(c.n_workers)},
      {"he", c.he ? "on" : "off"},
      {"key_bits", c.he ? std::to_string(c.key_bits) : "-"},
      {"frac_bits", std::to_string(c.frac_bits)},
      {"lr", exact(c.lr)},
      {"batch", std::to_string(c.batch)},
      {"epochs", std::to_string(c.epochs)},
      {"stop", c.stop.kind == StopCondition::Kind::kEpochs ? "epochs" : "loss_below " + exact(c.stop.threshold)},
      {"aggregation", c.aggregation == Aggregation::kPerBatch ? "batch" : "epoch"},
      {"max_rounds", std::to_string(c.max_rounds)},
      {"bottom_hidden", join_sizes(c.model.bottom_hidden)},
      {"bottom_activation", activation_name(c.model.bottom_activation)},
      {"interactive_out", std::to_string(c.model.interactive_out)},
      {"top_hidden", join_sizes(c.model.top_hidden)},
      {"top_activation", activation_name(c.model.top_activation)},
      {"seed", std::to_string(c.model.seed)},
      {"psi_bucket_seed", std::to_string(c.psi_bucket_seed)},
      {"psi_hash_seed", std::to_string(c.psi_hash_seed)},
      {"psi_rng_seed", std::to_string(c.psi_rng_seed)},
      {"psi_fp", exact(c.psi_fp)},
  };
  return s;
}

// ---- training data ---------------------------------------------------------------

struct ShardTensors {
  Tensor2 x;
  std::vector<int> labels;
};

ShardTensors to_tensors(const std::vector<Record>& shard, std::size_t dim, bool with_labels) {
  ShardTensors t{Tensor2(shard.size(), dim), {}};
  for (std::size_t r = 0; r < shard.size(); ++r) {
    if (shard[r].features.size() != dim) throw Error(ErrorCode::kData, "record " + shard[r].id + " has the wrong width");
    std::copy(shard[r].features.begin(), shard[r].features.end(), t.x.row(r));
    if (with_labels) {
      if (!shard[r].label) throw Error(ErrorCode::kData, "record " + shard[r].id + " has no label");
      t.labels.push_back(*shard[r].label);
    }
  }
  return t;
}

Tensor2 row_slice(const Tensor2& t, std::size_t lo, std::size_t hi) {
  return Tensor2(hi - lo, t.cols(),
                 std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(lo * t.cols()),
                                     t.data().begin() + static_cast<std::ptrdiff_t>(hi * t.cols())));
}

struct Schedule {
  std::size_t epochs = 0;
  std::size_t steps_per_epoch = 0;
  std::uint64_t total_rounds = 0;
  bool per_epoch = false;
};

Schedule make_schedule(const RunConfig& c, std::size_t largest_shard) {
  Schedule s;
  s.epochs = c.epochs;
  s.steps_per_epoch = std::max<std::size_t>(1, (largest_shard + c.batch - 1) / c.batch);
  s.per_epoch = c.aggregation == Aggregation::kPerEpoch;
  s.total_rounds = s.per_epoch ? c.epochs : c.epochs * s.steps_per_epoch;
  if (c.max_rounds > 0) s.total_rounds = std::min<std::uint64_t>(s.total_rounds, c.max_rounds);
  return s;
}

// ---- workers ---------------------------------------------------------------------

struct WorkerSetup {
  const RunConfig* config = nullptr;
  std::size_t worker = 0;
  Schedule schedule;
  SplitModel model;
  const ShardTensors* data = nullptr;
  PsClient* ps = nullptr;
  Channel* peer = nullptr;
  const paillier::Keypair* keys = nullptr;
  std::optional<paillier::PublicKey> peer_key;
};

struct WorkerReport {
  std::vector<StepMetrics> metrics;
  std::size_t rows = 0;
};

// Shared round bookkeeping: pull at the start of a round, push at its end.
class RoundDriver {
 public:
  RoundDriver(WorkerSetup& s, Party party) : s_(s), party_(party), layout_(flatten(s.model, party).layout) {}

  // False once the schedule is exhausted.
  bool begin_step(std::size_t step, StepMetrics& m) {
    if (s_.schedule.per_epoch && step != 0) return true;
    if (round_ == s_.schedule.total_rounds) return false;
    auto t = Clock::now();
    unflatten(s_.model, {layout_, s_.ps->pull(round_)}, party_);
    m.ps_sync_ms += ms_since(t);
    return true;
  }

  void end_step(std::size_t step, double loss, StepMetrics& m) {
    if (!std::isnan(loss)) {
      loss_sum_ += loss;
      ++loss_count_;
    }
    if (s_.schedule.per_epoch && step + 1 != s_.schedule.steps_per_epoch) return;
    const double metric = loss_count_ ? loss_sum_ / static_cast<double>(loss_count_) : kNoMetric;
    auto t = Clock::now();
    s_.ps->push(flatten(s_.model, party_).values, round_, metric);
    m.ps_sync_ms += ms_since(t);
    loss_sum_ = 0;
    loss_count_ = 0;
    ++round_;
  }

  std::uint64_t round() const { return round_; }

 private:
  WorkerSetup& s_;
  Party party_;
  std::vector<LayoutEntry> layout_;
  std::uint64_t round_ = 0;
  double loss_sum_ = 0;
  std::size_t loss_count_ = 0;
};

std::pair<std::size_t, std::size_t> batch_bounds(std::size_t step, std::size_t batch, std::size_t rows) {
  const std::size_t lo = std::min(rows, step * batch);
  return {lo, std::min(rows, lo + batch)};
}

WorkerReport active_worker(WorkerSetup& s) {
  const RunConfig& c = *s.config;
  ActiveInteractivePeer peer(*s.peer, c.he, s.peer_key, c.frac_bits, derive_seed(c.he_seed, 2 * s.worker + 1));
  SplitModel& m = s.model;
  const std::size_t a_out = m.active_out();
  const std::size_t p_out = m.passive_out();
  const bool stop_on_loss = c.stop.kind == StopCondition::Kind::kLossBelow;
  RoundDriver rounds(s, Party::kActive);
  WorkerReport report;

  for (std::size_t epoch = 0; epoch < s.schedule.epochs; ++epoch) {
    for (std::size_t step = 0; step < s.schedule.steps_per_epoch; ++step) {
      StepMetrics sm{Party::kActive, epoch, step, s.worker};
      const bool round_start = !s.schedule.per_epoch || step == 0;
      if (!rounds.begin_step(step, sm)) return report;
      if (round_start && stop_on_loss && rounds.round() > 0 && s.ps->last_metric() < c.stop.threshold) {
        s.peer->send({MsgType::kShutdown, {}});
        return report;
      }
      const std::uint64_t step_id = epoch * s.schedule.steps_per_epoch + step;
      auto [lo, hi] = batch_bounds(step, c.batch, s.data->x.rows());
      sm.rows = hi - lo;

      auto t = Clock::now();
      Tensor2 xa = row_slice(s.data->x, lo, hi);
      std::vector<int> labels(s.data->labels.begin() + static_cast<std::ptrdiff_t>(lo),
                              s.data->labels.begin() + static_cast<std::ptrdiff_t>(hi));
      auto [ha, active_cache] = forward(m.active_bottom, xa);
      sm.forward_bottom_ms = ms_since(t);

      const Tensor2 wa = column_slice(m.interactive.weights, 0, a_out);
      const Tensor2 wp = column_slice(m.interactive.weights, a_out, a_out + p_out);
      t = Clock::now();
      Tensor2 zp = peer.forward(step_id, wp);
      sm.he_exchange_ms = ms_since(t);

      t = Clock::now();
      Tensor2 z = matmul_nt(ha, wa);
      for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t o = 0; o < z.cols(); ++o) z(r, o) += zp(r, o) + m.interactive.bias[o];
      }
      auto [pred, top_cache] = forward(m.top, z);
      LossResult loss = sm.rows ? bce_loss(pred, labels) : LossResult{kNoMetric, Tensor2(0, 1)};
      sm.loss = loss.loss;
      auto [top_grads, dz] = backward(m.top, top_cache, loss.grad);
      sm.top_ms = ms_since(t);

      t = Clock::now();
      Tensor2 dwp = peer.weight_grad(dz);
      peer.send_grad(matmul(dz, wp));
      sm.he_exchange_ms += ms_since(t);

      t = Clock::now();
      SplitGrads g;
      g.interactive.weights = hconcat(matmul_tn(dz, ha), dwp);
      g.interactive.bias.assign(dz.cols(), 0.0);
      for (std::size_t r = 0; r < dz.rows(); ++r) {
        for (std::size_t o = 0; o < dz.cols(); ++o) g.interactive.bias[o] += dz(r, o);
      }
      g.active_bottom = backward(m.active_bottom, active_cache, matmul(dz, wa)).first;
      g.top = std::move(top_grads);
      unflatten(m, sgd_step(flatten(m, Party::kActive), flatten_grads(m, g, Party::kActive), c.lr), Party::kActive);
      sm.backward_ms = ms_since(t);

      rounds.end_step(step, sm.loss, sm);
      report.rows += sm.rows;
      report.metrics.push_back(sm);
    }
  }
  return report;
}

WorkerReport passive_worker(WorkerSetup& s) {
  const RunConfig& c = *s.config;
  PassiveInteractivePeer peer(*s.peer, c.he, s.keys, c.frac_bits, derive_seed(c.he_seed, 2 * s.worker + 2));
  SplitModel& m = s.model;
  RoundDriver rounds(s, Party::kPassive);
  WorkerReport report;

  for (std::size_t epoch = 0; epoch < s.schedule.epochs; ++epoch) {
    for (std::size_t step = 0; step < s.schedule.steps_per_epoch; ++step) {
      StepMetrics sm{Party::kPassive, epoch, step, s.worker};
      if (!rounds.begin_step(step, sm)) return report;
      const std::uint64_t step_id = epoch * s.schedule.steps_per_epoch + step;
      auto [lo, hi] = batch_bounds(step, c.batch, s.data->x.rows());
      sm.rows = hi - lo;

      auto t = Clock::now();
      auto [hp, passive_cache] = forward(m.passive_bottom, row_slice(s.data->x, lo, hi));
      sm.forward_bottom_ms = ms_since(t);

      t = Clock::now();
      Tensor2 dhp;
      try {
        peer.send_activation(step_id, hp);
        dhp = peer.serve_until_grad();
      } catch (const Error& e) {
        // The active side ends a loss-triggered stop with SHUTDOWN.
        if (e.code() == ErrorCode::kShutdown) return report;
        throw;
      }
      sm.he_exchange_ms = ms_since(t);

      t = Clock::now();
      SplitGrads g;
      g.passive_bottom = backward(m.passive_bottom, passive_cache, dhp).first;
      unflatten(m, sgd_step(flatten(m, Party::kPassive), flatten_grads(m, g, Party::kPassive), c.lr), Party::kPassive);
      sm.backward_ms = ms_since(t);

      rounds.end_step(step, kNoMetric, sm);
      report.rows += sm.rows;
      report.metrics.push_back(sm);
    }
  }
  return report;
}

// First failure wins; later ones are usually fallout from closing channels.
class FirstError {
 public:
  void record(std::exception_ptr e) {
    std::lock_guard lock(mu_);
    if (!error_) error_ = std::move(e);
  }
  bool any() {
    std::lock_guard lock(mu_);
    return static_cast<bool>(error_);
  }
  void rethrow() {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::mutex mu_;
  std::exception_ptr error_;
};

void close_links(const PartyLinks& links) {
  if (links.control) links.control->close();
  for (Channel* ch : links.pairs) ch->close();
}

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_pair(TransportKind kind) {
  return kind == TransportKind::kTcp ? make_tcp_loopback_pair() : make_in_process_pair();
}

IdSet wire_psi(const RunConfig& c, Role role, const IdSet& ids, const PartyLinks& links) {
  const std::size_t n = links.pairs.size();
  auto buckets = hash_partition(ids, n, c.psi_bucket_seed);
  PsiParams base{c.psi_fp, kDefaultSigma, c.psi_hash_seed, c.psi_rng_seed};
  std::vector<IdSet> results(n);
  FirstError failure;
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < n; ++i) {
    threads.emplace_back([&, i] {
      try {
        const PsiParams p = bucket_params(base, i);
        results[i] = role == Role::kActive ? run_psi_client(*links.pairs[i], buckets[i], p)
                                           : run_psi_server(*links.pairs[i], buckets[i], p);
      } catch (const Error& e) {
        failure.record(std::make_exception_ptr(Error(e.code(), "PSI bucket " + std::to_string(i) + ": " + e.what())));
      }
    });
  }
  for (auto& t : threads) t.join();
  failure.rethrow();
  IdSet all;
  for (auto& r : results) all.insert(all.end(), r.begin(), r.end());
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kData, "cannot write " + path);
  out << kMetricsCsvHeader << '\n';
  for (const auto& m : metrics) {
    out << (m.party == Party::kActive ? "active" : "passive") << ',' << m.epoch << ',' << m.step << ',' << m.worker
        << ',' << (std::isnan(m.loss) ? "" : exact(m.loss)) << ',' << m.forward_bottom_ms << ',' << m.he_exchange_ms
        << ',' << m.top_ms << ',' << m.backward_ms << ',' << m.ps_sync_ms << ',' << m.rows << '\n';
  }
}

VerticalParts load_training_parts(const RunConfig& c) {
  VerticalParts parts;
  if (!c.train_libsvm.empty()) {
    auto rows = load_libsvm(c.train_libsvm, c.feature_dim ? std::optional(c.feature_dim) : std::nullopt);
    truncate_rows(rows, c.max_rows);
    if (rows.empty()) throw Error(ErrorCode::kData, c.train_libsvm + " has no rows");
    parts = vertical_split(rows, split_spec(c, rows.front().features.size()));
  } else if (!c.active_csv.empty() && !c.passive_csv.empty()) {
    parts.active = read_csv(c.active_csv);
    parts.passive = read_csv(c.passive_csv);
    truncate_rows(parts.active, c.max_rows);
    truncate_rows(parts.passive, c.max_rows);
  } else {
    throw Error(ErrorCode::kConfig, "no training data: set train, or active_data and passive_data");
  }
  if (c.replicate > 1) {
    parts.active = replicate(parts.active, c.replicate);
    parts.passive = replicate(parts.passive, c.replicate);
  }
  return parts;
}

std::vector<Record> load_party_records(const RunConfig& c, Role role) {
  if (role == Role::kLocal) throw Error(ErrorCode::kInvalidArgument, "load_party_records needs a party role");
  const std::string& csv = role == Role::kActive ? c.active_csv : c.passive_csv;
  if (c.train_libsvm.empty() && !csv.empty()) {
    auto rows = read_csv(csv);
    truncate_rows(rows, c.max_rows);
    return c.replicate > 1 ? replicate(rows, c.replicate) : rows;
  }
  auto parts = load_training_parts(c);
  return role == Role::kActive ? std::move(parts.active) : std::move(parts.passive);
}

VerticalParts load_test_parts(const RunConfig& c, std::size_t dim) {
  if (c.test_libsvm.empty()) throw Error(ErrorCode::kConfig, "no test data configured");
  return vertical_split(load_libsvm(c.test_libsvm, dim), split_spec(c, dim));
}

PeerInfo negotiate(Channel& control, const RunConfig& config, Role role, std::size_t feature_dim,
                   const paillier::PublicKey* own_key) {
  if (role == Role::kLocal) throw Error(ErrorCode::kInvalidArgument, "negotiate needs a party role");
  const Settings mine = shared_settings(config);
  ByteWriter w;
  w.u8(role == Role::kActive ? 1 : 2);
  w.u64(feature_dim);
  w.u32(static_cast<std::uint32_t>(mine.size()));
  for (const auto& [k, v] : mine) {
    w.str(k);
    w.str(v);
  }
  w.u8(own_key ? 1 : 0);
  if (own_key) paillier::write_public_key(w, *own_key);
  control.send({MsgType::kHandshake, w.take()});

  Frame f = expect_frame(control, MsgType::kHandshake);
  ByteReader r(f.payload);
  const std::uint8_t peer_role = r.u8();
  if (peer_role != (role == Role::kActive ? 2 : 1)) throw Error(ErrorCode::kConfig, "both sides claim the same role");
  PeerInfo info;
  info.feature_dim = r.u64();
  Settings theirs(r.u32());
  for (auto& [k, v] : theirs) {
    k = r.str();
    v = r.str();
  }
  if (r.u8()) info.public_key = paillier::read_public_key(r);
  r.expect_done();

  for (std::size_t i = 0; i < std::max(mine.size(), theirs.size()); ++i) {
    if (i >= mine.size() || i >= theirs.size() || mine[i] != theirs[i]) {
      const auto& key = i < mine.size() ? mine[i].first : theirs[i].first;
      const std::string ours = i < mine.size() ? mine[i].second : "<absent>";
      const std::string peer = i < theirs.size() && theirs[i].first == key ? theirs[i].second : "<absent>";
      throw Error(ErrorCode::kConfig, "handshake mismatch on " + key + ": " + ours + " here, " + peer + " at the peer");
    }
  }
  if (info.feature_dim == 0) throw Error(ErrorCode::kConfig, "peer reports no features");
  if (config.he && role == Role::kActive && !info.public_key) {
    throw Error(ErrorCode::kProtocol, "passive party sent no public key");
  }
  return info;
}

PartyOutcome run_party(const RunConfig& config, Role role, std::vector<Record> records, const PartyLinks& links,
                       bool record_messages) {
  if (role == Role::kLocal) throw Error(ErrorCode::kInvalidArgument, "run_party needs a party role");
  if (!links.control || links.pairs.size() != config.n_workers) {
    throw Error(ErrorCode::kInvalidArgument, "need a control channel and one pair channel per worker");
  }
  if (records.empty()) throw Error(ErrorCode::kData, std::string(role_name(role)) + " party has no records");
  const bool active = role == Role::kActive;
  const Party party = active ? Party::kActive : Party::kPassive;
  const std::size_t dim = records.front().features.size();
  PartyOutcome out;

  std::optional<paillier::Keypair> keys;
  if (config.he && !active) keys = paillier::keygen(config.key_bits, config.he_seed);
  const PeerInfo peer = negotiate(*links.control, config, role, dim, keys ? &keys->pub : nullptr);

  auto t = Clock::now();
  out.intersection = wire_psi(config, role, make_id_set(ids_of(records)), links);
  out.psi_ms = ms_since(t);
  if (out.intersection.empty()) throw Error(ErrorCode::kData, "the parties share no sample ids");
  spdlog::info("{} party: {} of {} ids in the intersection", role_name(role), out.intersection.size(), records.size());

  const PartitionedDataset shards = sequential_partition(align_to_intersection(records, out.intersection),
                                                         config.n_workers);
  records.clear();
  std::vector<ShardTensors> data;
  for (const auto& shard : shards.shards) data.push_back(to_tensors(shard, dim, active));

  ModelConfig mc = config.model;
  mc.active_in = active ? dim : peer.feature_dim;
  mc.passive_in = active ? peer.feature_dim : dim;
  const SplitModel model = init_split_model(mc);
  const Schedule schedule = make_schedule(config, shards.shards.front().size());

  ParameterServer ps(flatten(model, party), config.n_workers);
  PsService service(ps);
  std::vector<std::unique_ptr<Channel>> ps_ends;
  std::vector<RecordingChannel*> recorders;
  std::vector<std::unique_ptr<PsClient>> clients;
  for (std::size_t i = 0; i < config.n_workers; ++i) {
    auto [worker_end, server_end] = make_pair(config.transport);
    if (record_messages) {
      auto rec = std::make_unique<RecordingChannel>(std::move(worker_end));
      recorders.push_back(rec.get());
      worker_end = std::move(rec);
    }
    service.serve(std::move(server_end));
    clients.push_back(std::make_unique<RemotePsClient>(*worker_end, i));
    ps_ends.push_back(std::move(worker_end));
  }

  std::vector<WorkerReport> reports(config.n_workers);
  FirstError failure;
  t = Clock::now();
  {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < config.n_workers; ++i) {
      threads.emplace_back([&, i] {
        WorkerSetup s{&config, i, schedule, model, &data[i], clients[i].get(), links.pairs[i],
                      keys ? &*keys : nullptr, peer.public_key};
        try {
          reports[i] = active ? active_worker(s) : passive_worker(s);
          ps_ends[i]->send({MsgType::kShutdown, {}});
        } catch (...) {
          failure.record(std::current_exception());
          ps.shutdown();
          close_links(links);
          for (auto& ch : ps_ends) ch->close();
        }
      });
    }
    for (auto& th : threads) th.join();
  }
  out.train_ms = ms_since(t);
  failure.rethrow();
  service.join();

  out.weights = ps.global();
  out.rounds = ps.round();
  out.aggregate_ms = ps.aggregate_ms();
  if (active) {
    for (std::uint64_t r = 1; r <= out.rounds; ++r) out.round_losses.push_back(ps.round_metric(r));
  }
  for (auto& rep : reports) {
    out.rows_processed += rep.rows;
    out.metrics.insert(out.metrics.end(), rep.metrics.begin(), rep.metrics.end());
  }
  for (std::size_t i = 0; i < recorders.size(); ++i) {
    out.message_log["ps" + std::to_string(i) + "." + role_name(role)] = recorders[i]->sent_types();
  }
  return out;
}

PartyOutcome run_networked_party(const RunConfig& config, Role role) {
  validate(config);
  std::vector<std::unique_ptr<Channel>> channels;
  if (role == Role::kActive) {
    TcpListener listener(config.listen.host, config.listen.port);
    spdlog::info("active party listening on {}:{}", config.listen.host, listener.port());
    for (std::size_t i = 0; i <= config.n_workers; ++i) channels.push_back(listener.accept());
  } else if (role == Role::kPassive) {
    for (std::size_t i = 0; i <= config.n_workers; ++i) {
      channels.push_back(tcp_connect(config.peer.host, config.peer.port, 60000));
    }
  } else {
    throw Error(ErrorCode::kInvalidArgument, "run_networked_party needs a party role");
  }
  PartyLinks links{channels[0].get(), {}};
  for (std::size_t i = 1; i < channels.size(); ++i) links.pairs.push_back(channels[i].get());
  return run_party(config, role, load_party_records(config, role), links);
}

RunResult run_dvfl(const RunConfig& config, const RunOptions& options) {
  return run_dvfl(config, load_training_parts(config), options);
}

RunResult run_dvfl(const RunConfig& config, VerticalParts parts, const RunOptions& options) {
  validate(config);
  const auto start = Clock::now();
  RunResult result;
  result.active_dim = parts.active.empty() ? 0 : parts.active.front().features.size();
  result.passive_dim = parts.passive.empty() ? 0 : parts.passive.front().features.size();

  // Index 0 is the control channel, 1..n the worker pairs.
  std::vector<std::unique_ptr<Channel>> a_ends, p_ends;
  std::vector<std::pair<std::string, RecordingChannel*>> recorders;
  for (std::size_t i = 0; i <= config.n_workers; ++i) {
    auto [a, p] = make_pair(config.transport);
    if (options.record_messages) {
      const std::string name = i == 0 ? "control" : "pair" + std::to_string(i - 1);
      auto ra = std::make_unique<RecordingChannel>(std::move(a));
      auto rp = std::make_unique<RecordingChannel>(std::move(p));
      recorders.emplace_back(name + ".active", ra.get());
      recorders.emplace_back(name + ".passive", rp.get());
      a = std::move(ra);
      p = std::move(rp);
    }
    a_ends.push_back(std::move(a));
    p_ends.push_back(std::move(p));
  }
  auto links_of = [&](std::vector<std::unique_ptr<Channel>>& ends) {
    PartyLinks links{ends[0].get(), {}};
    for (std::size_t i = 1; i < ends.size(); ++i) links.pairs.push_back(ends[i].get());
    return links;
  };
  const PartyLinks a_links = links_of(a_ends);
  const PartyLinks p_links = links_of(p_ends);

  PartyOutcome a_out, p_out;
  std::exception_ptr a_err, p_err;
  std::thread passive([&] {
    try {
      p_out = run_party(config, Role::kPassive, std::move(parts.passive), p_links, options.record_messages);
    } catch (...) {
      p_err = std::current_exception();
      close_links(p_links);
    }
  });
  try {
    a_out = run_party(config, Role::kActive, std::move(parts.active), a_links, options.record_messages);
  } catch (...) {
    a_err = std::current_exception();
    close_links(a_links);
  }
  passive.join();
  // Prefer the root cause over the peer's channel-closed fallout.
  auto is_fallout = [](const std::exception_ptr& e) {
    try {
      std::rethrow_exception(e);
    } catch (const Error& err) {
      return err.code() == ErrorCode::kChannelClosed || err.code() == ErrorCode::kShutdown;
    } catch (...) {
      return false;
    }
  };
  if (a_err && p_err && is_fallout(a_err) && !is_fallout(p_err)) std::rethrow_exception(p_err);
  if (a_err) std::rethrow_exception(a_err);
  if (p_err) std::rethrow_exception(p_err);

  result.weights = merge_weights(a_out.weights, p_out.weights);
  result.model = model_from_weights(result.weights);
  result.metrics = std::move(a_out.metrics);
  result.metrics.insert(result.metrics.end(), p_out.metrics.begin(), p_out.metrics.end());
  result.intersection = std::move(a_out.intersection);
  result.rounds = a_out.rounds;
  result.round_losses = std::move(a_out.round_losses);
  result.psi_ms = a_out.psi_ms;
  result.train_ms = a_out.train_ms;
  result.rows_processed = a_out.rows_processed;
  result.message_log = std::move(a_out.message_log);
  result.message_log.merge(p_out.message_log);
  for (const auto& [name, rec] : recorders) result.message_log[name] = rec->sent_types();
  result.wall_ms = ms_since(start);
  return result;
}

}  // namespace dvfl
