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

#include "dvfl/psi.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <exception>
#include <thread>

#include "dvfl/error.hpp"
#include "dvfl/hashing.hpp"
#include "dvfl/transport.hpp"

namespace dvfl {

namespace {

constexpr std::uint64_t kIntersectionStream = 0x1000;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

IdSet query_client_items(const IdSet& client_set, const GarbledBloomFilter& intersection) {
  IdSet out;
  for (const auto& id : client_set) {
    if (intersection.query(id)) out.push_back(id);
  }
  return out;
}

}  // namespace

IdSet make_id_set(std::vector<std::string> ids) {
  const std::size_t before = ids.size();
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() != before) {
    spdlog::warn("dropped {} duplicate ids before PSI", before - ids.size());
  }
  return ids;
}

std::size_t bucket_of(std::string_view id, std::size_t n_buckets, std::uint64_t shared_seed) {
  return static_cast<std::size_t>(keyed_hash64(HashDomain::kBucket, shared_seed, as_bytes(id)) % n_buckets);
}

std::vector<IdSet> hash_partition(const IdSet& ids, std::size_t n_buckets, std::uint64_t shared_seed) {
  if (n_buckets == 0) throw Error(ErrorCode::kInvalidArgument, "n_buckets must be >= 1");
  std::vector<IdSet> buckets(n_buckets);
  if (n_buckets == 1) {
    buckets[0] = ids;
    return buckets;
  }
  for (const auto& id : ids) buckets[bucket_of(id, n_buckets, shared_seed)].push_back(id);
  return buckets;
}

GarbledBloomFilter DirectTransfer::transfer(const GarbledBloomFilter& server_gbf, const BloomFilter& client_bf,
                                            std::uint64_t rng_seed) {
  return build_intersection_gbf(server_gbf, client_bf, rng_seed);
}

GarbledBloomFilter build_intersection_gbf(const GarbledBloomFilter& server_gbf, const BloomFilter& client_bf,
                                          std::uint64_t rng_seed) {
  if (server_gbf.m() != client_bf.m() || server_gbf.k() != client_bf.k() ||
      server_gbf.hash_seed() != client_bf.hash_seed()) {
    throw Error(ErrorCode::kProtocol, "filter parameter mismatch between GBF and BF");
  }
  GarbledBloomFilter out(server_gbf.m(), server_gbf.k(), server_gbf.sigma(), server_gbf.hash_seed());
  fill_random(rng_seed, kIntersectionStream, out.raw_slots());
  for (std::uint64_t i = 0; i < server_gbf.m(); ++i) {
    if (client_bf.bit(i)) {
      auto src = server_gbf.slot(i);
      std::copy(src.begin(), src.end(), out.slot(i).begin());
    }
  }
  return out;
}

void PsiSessionState::advance(PsiPhase next) {
  if (static_cast<int>(next) != static_cast<int>(phase_) + 1) {
    throw Error(ErrorCode::kProtocol, "PSI session phase may only move forward one step");
  }
  phase_ = next;
}

FilterParams psi_filter_params(std::size_t client_size, std::size_t server_size, double fp_target) {
  return FilterParams::sized(std::max(client_size, server_size), fp_target);
}

IdSet psi_pair(const IdSet& client_set, const IdSet& server_set, const PsiParams& params,
               TransferOracle& transfer) {
  PsiSessionState client(PsiRole::kClient);
  PsiSessionState server(PsiRole::kServer);

  server.params = psi_filter_params(client_set.size(), server_set.size(), params.fp_target);
  GarbledBloomFilter gbf = gbf_build(server_set, server.params, params.hash_seed, params.rng_seed, params.sigma);
  server.advance(PsiPhase::kFiltersBuilt);

  client.params = server.params;
  BloomFilter bf(client.params.m, client.params.k, gbf.hash_seed());
  for (const auto& id : client_set) bf.insert(id);
  client.advance(PsiPhase::kFiltersBuilt);

  GarbledBloomFilter intersection = transfer.transfer(gbf, bf, params.rng_seed);
  server.advance(PsiPhase::kTransferred);
  client.advance(PsiPhase::kTransferred);

  client.result = query_client_items(client_set, intersection);
  client.advance(PsiPhase::kDone);
  server.advance(PsiPhase::kDone);
  return std::move(client.result);
}

PsiParams bucket_params(const PsiParams& base, std::size_t bucket) {
  PsiParams p = base;
  p.hash_seed = mix(base.hash_seed ^ (0x100 + bucket));
  p.rng_seed = mix(base.rng_seed ^ (0x200 + bucket));
  return p;
}

IdSet distributed_psi(const IdSet& active, const IdSet& passive, std::size_t n_workers, const PsiSeeds& seeds) {
  if (n_workers == 0) throw Error(ErrorCode::kInvalidArgument, "n_workers must be >= 1");
  auto active_buckets = hash_partition(active, n_workers, seeds.bucket_seed);
  auto passive_buckets = hash_partition(passive, n_workers, seeds.bucket_seed);

  std::vector<IdSet> results(n_workers);
  std::vector<std::exception_ptr> errors(n_workers);
  std::vector<std::thread> threads;
  threads.reserve(n_workers);
  for (std::size_t b = 0; b < n_workers; ++b) {
    threads.emplace_back([&, b] {
      try {
        DirectTransfer transfer;
        results[b] = psi_pair(active_buckets[b], passive_buckets[b], bucket_params(seeds.params, b), transfer);
      } catch (...) {
        errors[b] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (std::size_t b = 0; b < n_workers; ++b) {
    if (!errors[b]) continue;
    try {
      std::rethrow_exception(errors[b]);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kProtocol, "PSI bucket " + std::to_string(b) + " failed: " + e.what());
    }
  }

  IdSet out;
  for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
  std::sort(out.begin(), out.end());
  return out;
}

// ---- wire roles -------------------------------------------------------------

IdSet run_psi_client(Channel& channel, const IdSet& ids, const PsiParams& params) {
  PsiSessionState state(PsiRole::kClient);
  {
    ByteWriter w;
    w.u64(ids.size());
    w.f64(params.fp_target);
    w.u16(static_cast<std::uint16_t>(params.sigma));
    w.u64(params.hash_seed);
    channel.send({MsgType::kPsiParams, w.take()});
  }

  Frame reply = expect_frame(channel, MsgType::kPsiParams);
  ByteReader r(reply.payload);
  state.params.m = r.u64();
  state.params.k = r.u16();
  unsigned sigma = r.u16();
  std::uint64_t hash_seed = r.u64();
  state.params.expected_items = r.u64();
  state.params.fp_target = r.f64();
  r.expect_done();
  if (sigma != params.sigma) throw Error(ErrorCode::kProtocol, "server changed sigma");

  BloomFilter bf(state.params.m, state.params.k, hash_seed);
  for (const auto& id : ids) bf.insert(id);
  state.advance(PsiPhase::kFiltersBuilt);
  channel.send({MsgType::kPsiClientBf, bf.serialize()});

  Frame gbf_frame = expect_frame(channel, MsgType::kPsiIntersectionGbf);
  GarbledBloomFilter intersection = GarbledBloomFilter::deserialize(gbf_frame.payload);
  if (intersection.m() != bf.m() || intersection.k() != bf.k() || intersection.hash_seed() != hash_seed) {
    throw Error(ErrorCode::kProtocol, "intersection GBF does not match the negotiated parameters");
  }
  state.advance(PsiPhase::kTransferred);

  state.result = query_client_items(ids, intersection);
  {
    ByteWriter w;
    w.u64(state.result.size());
    channel.send({MsgType::kPsiDone, w.take()});
  }
  {
    ByteWriter w;
    w.u64(state.result.size());
    for (const auto& id : state.result) w.str(id);
    channel.send({MsgType::kPsiResult, w.take()});
  }
  state.advance(PsiPhase::kDone);
  return std::move(state.result);
}

IdSet run_psi_server(Channel& channel, const IdSet& ids, const PsiParams& params) {
  PsiSessionState state(PsiRole::kServer);

  Frame hello = expect_frame(channel, MsgType::kPsiParams);
  ByteReader r(hello.payload);
  std::uint64_t client_size = r.u64();
  double fp_target = r.f64();
  unsigned sigma = r.u16();
  std::uint64_t hash_seed = r.u64();
  r.expect_done();
  if (fp_target != params.fp_target || sigma != params.sigma) {
    throw Error(ErrorCode::kConfig, "PSI parameter mismatch between parties");
  }

  state.params = psi_filter_params(client_size, ids.size(), fp_target);
  // GBF randomness stays local to the server.
  GarbledBloomFilter gbf = gbf_build(ids, state.params, hash_seed, params.rng_seed, sigma);
  state.advance(PsiPhase::kFiltersBuilt);
  {
    ByteWriter w;
    w.u64(state.params.m);
    w.u16(static_cast<std::uint16_t>(state.params.k));
    w.u16(static_cast<std::uint16_t>(sigma));
    w.u64(gbf.hash_seed());
    w.u64(state.params.expected_items);
    w.f64(state.params.fp_target);
    channel.send({MsgType::kPsiParams, w.take()});
  }

  Frame bf_frame = expect_frame(channel, MsgType::kPsiClientBf);
  BloomFilter bf = BloomFilter::deserialize(bf_frame.payload);
  DirectTransfer transfer;
  channel.send({MsgType::kPsiIntersectionGbf, transfer.transfer(gbf, bf, params.rng_seed).serialize()});
  state.advance(PsiPhase::kTransferred);

  Frame done = expect_frame(channel, MsgType::kPsiDone);
  ByteReader dr(done.payload);
  std::uint64_t count = dr.u64();
  dr.expect_done();

  Frame result = expect_frame(channel, MsgType::kPsiResult);
  ByteReader rr(result.payload);
  std::uint64_t n = rr.u64();
  if (n != count) throw Error(ErrorCode::kProtocol, "PSI_RESULT count disagrees with PSI_DONE");
  IdSet out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(rr.str());
  rr.expect_done();
  state.advance(PsiPhase::kDone);
  return out;
}

}  // namespace dvfl
