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

// Bloom filter and garbled Bloom filter set encodings.
//
// Both filters share the position family h_i(x) = H1(x) + i * H2(x) mod m,
// where (H1, H2) is one keyed 128-bit hash of the id bytes. Positions that
// repeat for an item are counted once, so an item touches between 1 and k
// distinct slots.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dvfl/wire.hpp"

namespace dvfl {

struct FilterParams {
  std::uint64_t expected_items = 0;
  double fp_target = 1e-6;
  std::uint64_t m = 0;  // bit / slot count
  std::uint32_t k = 0;  // hash count

  // m = ceil(-n ln p / ln^2 2), k = ceil(m / n * ln 2), n clamped to >= 1.
  static FilterParams sized(std::uint64_t expected_items, double fp_target);
  // (1 - e^(-k n / m))^k for n inserted items.
  double predicted_fp_rate(std::uint64_t inserted) const;
};

inline constexpr unsigned kDefaultSigma = 128;

// Distinct positions of `id`, in first-seen order.
std::vector<std::uint64_t> filter_positions(std::span<const std::uint8_t> id, std::uint64_t m,
                                            std::uint32_t k, std::uint64_t hash_seed);

class BloomFilter {
 public:
  BloomFilter(std::uint64_t m, std::uint32_t k, std::uint64_t hash_seed);

  void insert(std::span<const std::uint8_t> id);
  void insert(std::string_view id) { insert(as_span(id)); }
  bool query(std::span<const std::uint8_t> id) const;
  bool query(std::string_view id) const { return query(as_span(id)); }

  bool bit(std::uint64_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
  void set_bit(std::uint64_t i) { words_[i >> 6] |= std::uint64_t{1} << (i & 63); }
  void set_all();
  std::uint64_t popcount() const;

  std::uint64_t m() const { return m_; }
  std::uint32_t k() const { return k_; }
  std::uint64_t hash_seed() const { return hash_seed_; }

  // Header (m u64, k u16, sigma u16 = 0, hash_seed u64) then ceil(m/8)
  // bytes, bit i stored at byte i / 8, bit i % 8 (LSB first).
  Bytes serialize() const;
  static BloomFilter deserialize(std::span<const std::uint8_t> data);

  bool operator==(const BloomFilter&) const = default;

 private:
  static std::span<const std::uint8_t> as_span(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
  }

  std::uint64_t m_;
  std::uint32_t k_;
  std::uint64_t hash_seed_;
  std::vector<std::uint64_t> words_;
};

class GarbledBloomFilter {
 public:
  // All slots zero; use gbf_build for a populated filter.
  GarbledBloomFilter(std::uint64_t m, std::uint32_t k, unsigned sigma, std::uint64_t hash_seed);

  std::uint64_t m() const { return m_; }
  std::uint32_t k() const { return k_; }
  unsigned sigma() const { return sigma_; }
  std::size_t slot_bytes() const { return sigma_ / 8; }
  std::uint64_t hash_seed() const { return hash_seed_; }

  std::span<std::uint8_t> slot(std::uint64_t i) {
    return {slots_.data() + i * slot_bytes(), slot_bytes()};
  }
  std::span<const std::uint8_t> slot(std::uint64_t i) const {
    return {slots_.data() + i * slot_bytes(), slot_bytes()};
  }
  std::span<std::uint8_t> raw_slots() { return slots_; }
  std::span<const std::uint8_t> raw_slots() const { return slots_; }

  bool query(std::span<const std::uint8_t> id) const;
  bool query(std::string_view id) const {
    return query({reinterpret_cast<const std::uint8_t*>(id.data()), id.size()});
  }

  // Header (m u64, k u16, sigma u16, hash_seed u64) then m * sigma / 8 bytes.
  Bytes serialize() const;
  static GarbledBloomFilter deserialize(std::span<const std::uint8_t> data);

  bool operator==(const GarbledBloomFilter&) const = default;

 private:
  std::uint64_t m_;
  std::uint32_t k_;
  unsigned sigma_;
  std::uint64_t hash_seed_;
  std::vector<std::uint8_t> slots_;
};

// sigma-bit encoding of an id: keyed hash of the id truncated to sigma / 8 bytes.
std::vector<std::uint8_t> encode_sigma(std::span<const std::uint8_t> id, unsigned sigma,
                                       std::uint64_t hash_seed);

inline constexpr int kGbfMaxRetries = 8;

// Dong et al. construction. Slots not claimed by any item hold uniform random
// bytes. When an item finds all of its slots already claimed with the wrong
// residue the build restarts with a fresh hash seed, up to 8 retries; the
// seed actually used is reported by the filter's hash_seed().
GarbledBloomFilter gbf_build(std::span<const std::string> items, const FilterParams& params,
                             std::uint64_t hash_seed, std::uint64_t rng_seed,
                             unsigned sigma = kDefaultSigma);

void bf_insert(BloomFilter& bf, std::string_view id);
bool bf_query(const BloomFilter& bf, std::string_view id);
bool gbf_query(const GarbledBloomFilter& gbf, std::string_view id);

}  // namespace dvfl
