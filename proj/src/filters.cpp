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

#include "dvfl/filters.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "dvfl/error.hpp"
#include "dvfl/hashing.hpp"

namespace dvfl {

namespace {

constexpr std::size_t kHeaderBytes = 8 + 2 + 2 + 8;

void write_header(ByteWriter& w, std::uint64_t m, std::uint32_t k, unsigned sigma,
                  std::uint64_t hash_seed) {
  w.u64(m);
  w.u16(static_cast<std::uint16_t>(k));
  w.u16(static_cast<std::uint16_t>(sigma));
  w.u64(hash_seed);
}

void check_shape(std::uint64_t m, std::uint32_t k) {
  if (m == 0 || k == 0 || k > 0xFFFF) {
    throw Error(ErrorCode::kInvalidArgument, "filter needs m >= 1 and 1 <= k <= 65535");
  }
}

void check_sigma(unsigned sigma) {
  if (sigma == 0 || sigma % 8 != 0 || sigma > 512) {
    throw Error(ErrorCode::kInvalidArgument, "sigma must be a multiple of 8 in [8, 512]");
  }
}

}  // namespace

FilterParams FilterParams::sized(std::uint64_t expected_items, double fp_target) {
  if (!(fp_target > 0.0 && fp_target < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "fp_target must lie in (0, 1)");
  }
  FilterParams p;
  p.expected_items = expected_items;
  p.fp_target = fp_target;
  const double n = static_cast<double>(std::max<std::uint64_t>(expected_items, 1));
  const double ln2 = std::log(2.0);
  p.m = static_cast<std::uint64_t>(std::ceil(-n * std::log(fp_target) / (ln2 * ln2)));
  p.k = static_cast<std::uint32_t>(std::ceil(static_cast<double>(p.m) / n * ln2));
  return p;
}

double FilterParams::predicted_fp_rate(std::uint64_t inserted) const {
  const double kn = static_cast<double>(k) * static_cast<double>(inserted);
  return std::pow(1.0 - std::exp(-kn / static_cast<double>(m)), static_cast<double>(k));
}

std::vector<std::uint64_t> filter_positions(std::span<const std::uint8_t> id, std::uint64_t m,
                                            std::uint32_t k, std::uint64_t hash_seed) {
  Hash128 h = keyed_hash128(HashDomain::kFilterPositions, hash_seed, id);
  std::uint64_t pos = h.h1 % m;
  const std::uint64_t step = h.h2 % m;
  std::vector<std::uint64_t> out;
  out.reserve(k);
  for (std::uint32_t i = 0; i < k; ++i) {
    if (std::find(out.begin(), out.end(), pos) == out.end()) out.push_back(pos);
    pos += step;
    if (pos >= m) pos -= m;
  }
  return out;
}

std::vector<std::uint8_t> encode_sigma(std::span<const std::uint8_t> id, unsigned sigma,
                                       std::uint64_t hash_seed) {
  std::vector<std::uint8_t> out(sigma / 8);
  keyed_digest(HashDomain::kFilterEncoding, hash_seed, id, out);
  return out;
}

// ---- BloomFilter ----------------------------------------------------------

BloomFilter::BloomFilter(std::uint64_t m, std::uint32_t k, std::uint64_t hash_seed)
    : m_(m), k_(k), hash_seed_(hash_seed) {
  check_shape(m, k);
  words_.assign((m + 63) / 64, 0);
}

void BloomFilter::insert(std::span<const std::uint8_t> id) {
  for (std::uint64_t p : filter_positions(id, m_, k_, hash_seed_)) set_bit(p);
}

bool BloomFilter::query(std::span<const std::uint8_t> id) const {
  for (std::uint64_t p : filter_positions(id, m_, k_, hash_seed_)) {
    if (!bit(p)) return false;
  }
  return true;
}

void BloomFilter::set_all() {
  std::fill(words_.begin(), words_.end(), ~std::uint64_t{0});
  if (m_ % 64 != 0) words_.back() = (std::uint64_t{1} << (m_ % 64)) - 1;
}

std::uint64_t BloomFilter::popcount() const {
  std::uint64_t total = 0;
  for (std::uint64_t w : words_) total += static_cast<std::uint64_t>(std::popcount(w));
  return total;
}

Bytes BloomFilter::serialize() const {
  ByteWriter w;
  write_header(w, m_, k_, 0, hash_seed_);
  Bytes& buf = w.buffer();
  const std::size_t start = buf.size();
  buf.resize(start + (m_ + 7) / 8);
  for (std::size_t b = 0; b < (m_ + 7) / 8; ++b) {
    buf[start + b] = static_cast<std::uint8_t>(words_[b / 8] >> (8 * (b % 8)));
  }
  return w.take();
}

BloomFilter BloomFilter::deserialize(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  std::uint64_t m = r.u64();
  std::uint32_t k = r.u16();
  unsigned sigma = r.u16();
  std::uint64_t seed = r.u64();
  if (sigma != 0) throw Error(ErrorCode::kProtocol, "Bloom filter header carries sigma != 0");
  if (m == 0 || k == 0) throw Error(ErrorCode::kProtocol, "Bloom filter header has m or k = 0");
  if (r.remaining() != (m + 7) / 8) throw Error(ErrorCode::kProtocol, "Bloom filter payload size mismatch");
  BloomFilter bf(m, k, seed);
  auto payload = r.raw((m + 7) / 8);
  for (std::size_t b = 0; b < payload.size(); ++b) {
    bf.words_[b / 8] |= static_cast<std::uint64_t>(payload[b]) << (8 * (b % 8));
  }
  return bf;
}

void bf_insert(BloomFilter& bf, std::string_view id) { bf.insert(id); }
bool bf_query(const BloomFilter& bf, std::string_view id) { return bf.query(id); }

// ---- GarbledBloomFilter ---------------------------------------------------

GarbledBloomFilter::GarbledBloomFilter(std::uint64_t m, std::uint32_t k, unsigned sigma,
                                       std::uint64_t hash_seed)
    : m_(m), k_(k), sigma_(sigma), hash_seed_(hash_seed) {
  check_shape(m, k);
  check_sigma(sigma);
  slots_.assign(m * (sigma / 8), 0);
}

bool GarbledBloomFilter::query(std::span<const std::uint8_t> id) const {
  std::vector<std::uint8_t> acc(slot_bytes(), 0);
  for (std::uint64_t p : filter_positions(id, m_, k_, hash_seed_)) {
    auto s = slot(p);
    for (std::size_t b = 0; b < acc.size(); ++b) acc[b] ^= s[b];
  }
  return acc == encode_sigma(id, sigma_, hash_seed_);
}

Bytes GarbledBloomFilter::serialize() const {
  ByteWriter w;
  write_header(w, m_, k_, sigma_, hash_seed_);
  w.raw(slots_);
  return w.take();
}

GarbledBloomFilter GarbledBloomFilter::deserialize(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  std::uint64_t m = r.u64();
  std::uint32_t k = r.u16();
  unsigned sigma = r.u16();
  std::uint64_t seed = r.u64();
  if (m == 0 || k == 0 || sigma == 0 || sigma % 8 != 0) {
    throw Error(ErrorCode::kProtocol, "malformed garbled Bloom filter header");
  }
  if (r.remaining() != m * (sigma / 8)) {
    throw Error(ErrorCode::kProtocol, "garbled Bloom filter payload size mismatch");
  }
  GarbledBloomFilter gbf(m, k, sigma, seed);
  auto payload = r.raw(m * (sigma / 8));
  std::copy(payload.begin(), payload.end(), gbf.slots_.begin());
  return gbf;
}

bool gbf_query(const GarbledBloomFilter& gbf, std::string_view id) { return gbf.query(id); }

GarbledBloomFilter gbf_build(std::span<const std::string> items, const FilterParams& params,
                             std::uint64_t hash_seed, std::uint64_t rng_seed, unsigned sigma) {
  check_sigma(sigma);
  if (params.expected_items < items.size()) {
    throw Error(ErrorCode::kInvalidArgument, "more items than the filter was sized for");
  }
  const std::size_t width = sigma / 8;
  for (int attempt = 0; attempt <= kGbfMaxRetries; ++attempt) {
    const std::uint64_t seed = hash_seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(attempt);
    GarbledBloomFilter gbf(params.m, params.k, sigma, seed);
    // Every slot starts as uniform random bytes; claiming a slot as a share
    // keeps its random content, and only the final share of each item is
    // overwritten.
    fill_random(rng_seed, static_cast<std::uint64_t>(attempt), gbf.raw_slots());
    std::vector<bool> claimed(params.m, false);

    bool failed = false;
    std::vector<std::uint8_t> acc(width);
    for (const std::string& item : items) {
      auto id = as_bytes(item);
      auto positions = filter_positions(id, params.m, params.k, seed);
      std::int64_t final_slot = -1;
      std::fill(acc.begin(), acc.end(), 0);
      for (std::uint64_t p : positions) {
        if (!claimed[p] && final_slot < 0) {
          final_slot = static_cast<std::int64_t>(p);
          continue;
        }
        claimed[p] = true;
        auto s = gbf.slot(p);
        for (std::size_t b = 0; b < width; ++b) acc[b] ^= s[b];
      }
      auto enc = encode_sigma(id, sigma, seed);
      if (final_slot < 0) {
        if (acc != enc) {
          failed = true;
          break;
        }
        continue;
      }
      claimed[static_cast<std::uint64_t>(final_slot)] = true;
      auto s = gbf.slot(static_cast<std::uint64_t>(final_slot));
      for (std::size_t b = 0; b < width; ++b) s[b] = acc[b] ^ enc[b];
    }
    if (!failed) return gbf;
  }
  throw Error(ErrorCode::kData, "garbled Bloom filter construction failed after " +
                                    std::to_string(kGbfMaxRetries) + " retries");
}

}  // namespace dvfl
