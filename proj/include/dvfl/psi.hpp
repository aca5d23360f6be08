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

// Bloom-filter based private set intersection between a client (active
// party, learns the intersection) and a server (passive party), plus the
// hash-partitioned distributed variant where worker pair i intersects bucket i.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dvfl/filters.hpp"

namespace dvfl {

class Channel;

// Sorted, duplicate-free list of sample ids.
using IdSet = std::vector<std::string>;

// Sorts and removes duplicates, logging a warning when any were dropped.
IdSet make_id_set(std::vector<std::string> ids);

std::size_t bucket_of(std::string_view id, std::size_t n_buckets, std::uint64_t shared_seed);

// Disjoint cover of `ids`; bucket order inside each bucket follows input order.
std::vector<IdSet> hash_partition(const IdSet& ids, std::size_t n_buckets, std::uint64_t shared_seed);

struct PsiParams {
  double fp_target = 1e-6;
  unsigned sigma = kDefaultSigma;
  std::uint64_t hash_seed = 0x5eed0001;
  std::uint64_t rng_seed = 0x5eed0002;
};

struct PsiSeeds {
  std::uint64_t bucket_seed = 0xb0c4e7;
  PsiParams params;
};

// Stand-in for the oblivious-transfer step: given the server's GBF and the
// client's BF, produce the intersection GBF for the client.
class TransferOracle {
 public:
  virtual ~TransferOracle() = default;
  virtual GarbledBloomFilter transfer(const GarbledBloomFilter& server_gbf, const BloomFilter& client_bf,
                                      std::uint64_t rng_seed) = 0;
  virtual bool oblivious() const = 0;
  virtual std::string name() const = 0;
};

// The client hands its BF to the server in the clear and the server replies
// with the intersection GBF. Same output as the OT-based exchange but the
// server sees the client's BF.
class DirectTransfer final : public TransferOracle {
 public:
  GarbledBloomFilter transfer(const GarbledBloomFilter& server_gbf, const BloomFilter& client_bf,
                              std::uint64_t rng_seed) override;
  bool oblivious() const override { return false; }
  std::string name() const override { return "direct-transfer"; }
};

// Slot i keeps the server share where the client bit is set, otherwise gets
// fresh random bytes. Filters must agree on m, k and hash seed.
GarbledBloomFilter build_intersection_gbf(const GarbledBloomFilter& server_gbf, const BloomFilter& client_bf,
                                          std::uint64_t rng_seed);

enum class PsiRole { kClient, kServer };
enum class PsiPhase { kInit, kFiltersBuilt, kTransferred, kDone };

// Forward-only phase tracker shared by both protocol roles.
class PsiSessionState {
 public:
  explicit PsiSessionState(PsiRole role) : role_(role) {}

  PsiRole role() const { return role_; }
  PsiPhase phase() const { return phase_; }
  // Throws kProtocol unless `next` is the immediate successor.
  void advance(PsiPhase next);

  FilterParams params;
  IdSet result;  // client only, populated at kDone

 private:
  PsiRole role_;
  PsiPhase phase_ = PsiPhase::kInit;
};

// Filter sizing for one bucket: both filters use max(|client|, |server|).
FilterParams psi_filter_params(std::size_t client_size, std::size_t server_size, double fp_target);

IdSet psi_pair(const IdSet& client_set, const IdSet& server_set, const PsiParams& params,
               TransferOracle& transfer);

// Buckets both sets with the shared seed, intersects bucket pairs
// concurrently and unions the results. Bucket b uses seeds derived from
// (params, b). A failing bucket aborts the whole run with its index.
IdSet distributed_psi(const IdSet& active, const IdSet& passive, std::size_t n_workers, const PsiSeeds& seeds);

PsiParams bucket_params(const PsiParams& base, std::size_t bucket);

// Wire-level roles over a peer channel (direct-transfer only). The client
// returns the intersection; the server returns the intersection as announced
// by the client in PSI_RESULT.
IdSet run_psi_client(Channel& channel, const IdSet& ids, const PsiParams& params);
IdSet run_psi_server(Channel& channel, const IdSet& ids, const PsiParams& params);

}  // namespace dvfl
