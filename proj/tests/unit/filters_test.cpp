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

#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "dvfl/error.hpp"
#include "dvfl/hashing.hpp"

namespace dvfl {
namespace {

std::vector<std::string> make_ids(const std::string& prefix, int count) {
  std::vector<std::string> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

std::vector<std::uint8_t> xor_of_slots(const GarbledBloomFilter& gbf, const std::string& id) {
  std::vector<std::uint8_t> acc(gbf.slot_bytes(), 0);
  for (auto p : filter_positions(as_bytes(id), gbf.m(), gbf.k(), gbf.hash_seed())) {
    auto s = gbf.slot(p);
    for (std::size_t b = 0; b < acc.size(); ++b) acc[b] ^= s[b];
  }
  return acc;
}

TEST(FilterParams, StandardSizing) {
  auto p = FilterParams::sized(1000, 0.01);
  EXPECT_EQ(p.m, 9586u);
  EXPECT_EQ(p.k, 7u);
  auto q = FilterParams::sized(1000, 1e-6);
  EXPECT_EQ(q.m, 28756u);
  EXPECT_EQ(q.k, 20u);
  EXPECT_NEAR(q.predicted_fp_rate(1000), 9.9965e-07, 1e-10);
  EXPECT_THROW(FilterParams::sized(10, 0.0), Error);
  EXPECT_THROW(FilterParams::sized(10, 1.0), Error);
}

TEST(FilterPositions, DistinctAndInRange) {
  for (const auto& id : make_ids("x", 200)) {
    auto pos = filter_positions(as_bytes(id), 97, 20, 5);
    EXPECT_GE(pos.size(), 1u);
    EXPECT_LE(pos.size(), 20u);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      EXPECT_LT(pos[i], 97u);
      for (std::size_t j = 0; j < i; ++j) EXPECT_NE(pos[i], pos[j]);
    }
  }
}

TEST(BloomFilter, InsertQuery) {
  BloomFilter bf(1024, 5, 1);
  EXPECT_FALSE(bf_query(bf, "alice"));
  bf_insert(bf, "alice");
  EXPECT_TRUE(bf_query(bf, "alice"));
  EXPECT_LE(bf.popcount(), 5u);
}

TEST(BloomFilter, SaturatedAcceptsEverything) {
  BloomFilter bf(1000, 7, 3);
  bf.set_all();
  EXPECT_EQ(bf.popcount(), 1000u);
  for (const auto& id : make_ids("q", 100)) EXPECT_TRUE(bf.query(id));
}

TEST(BloomFilter, NoFalseNegativesAndBoundedPopcount) {
  auto params = FilterParams::sized(5000, 1e-4);
  BloomFilter bf(params.m, params.k, 77);
  auto ids = make_ids("member-", 5000);
  for (const auto& id : ids) bf.insert(id);
  for (const auto& id : ids) ASSERT_TRUE(bf.query(id));
  EXPECT_LE(bf.popcount(), static_cast<std::uint64_t>(params.k) * ids.size());
}

// Monte Carlo against the analytic (1 - e^(-kn/m))^k.
TEST(BloomFilter, FalsePositiveRateMatchesAnalytic) {
  auto params = FilterParams::sized(1000, 0.01);
  BloomFilter bf(params.m, params.k, 2024);
  for (const auto& id : make_ids("in-", 1000)) bf.insert(id);
  int hits = 0;
  const int trials = 100000;
  for (const auto& id : make_ids("out-", trials)) hits += bf.query(id) ? 1 : 0;
  double rate = static_cast<double>(hits) / trials;
  double analytic = params.predicted_fp_rate(1000);
  EXPECT_GE(rate, 0.001);
  EXPECT_LE(rate, 0.03);
  EXPECT_LE(rate, 3 * analytic);
  EXPECT_GE(rate, analytic / 3);
}

TEST(BloomFilter, SerializationHeaderIsBitExact) {
  BloomFilter bf(12, 2, 0x0102030405060708ull);
  bf.set_bit(0);
  bf.set_bit(9);
  Bytes bytes = bf.serialize();
  Bytes expected = {0, 0, 0, 0, 0, 0, 0, 12,  // m
                    0, 2,                     // k
                    0, 0,                     // sigma
                    1, 2, 3, 4, 5, 6, 7, 8,   // hash_seed
                    0x01, 0x02};
  EXPECT_EQ(bytes, expected);
  EXPECT_EQ(BloomFilter::deserialize(bytes), bf);
  bytes.pop_back();
  EXPECT_THROW(BloomFilter::deserialize(bytes), Error);
}

TEST(GarbledBloomFilter, SingletonReconstructsEncoding) {
  auto params = FilterParams::sized(1, 1e-6);
  std::vector<std::string> items = {"only"};
  auto gbf = gbf_build(items, params, 9, 10);
  EXPECT_EQ(xor_of_slots(gbf, "only"), encode_sigma(as_bytes("only"), 128, gbf.hash_seed()));
  EXPECT_TRUE(gbf_query(gbf, "only"));
}

TEST(GarbledBloomFilter, MembersAlwaysNonMembersRarely) {
  auto members = make_ids("m", 2000);
  auto params = FilterParams::sized(members.size(), 1e-6);
  auto gbf = gbf_build(members, params, 1, 2);
  for (const auto& id : members) ASSERT_TRUE(gbf.query(id));
  int false_accepts = 0;
  for (const auto& id : make_ids("nm", 10000)) false_accepts += gbf.query(id) ? 1 : 0;
  // sigma = 128: expected false accepts are ~ 1e4 * 2^-128.
  EXPECT_EQ(false_accepts, 0);
}

TEST(GarbledBloomFilter, EmptySetRejectsEverything) {
  auto params = FilterParams::sized(100, 1e-6);
  auto gbf = gbf_build(std::vector<std::string>{}, params, 3, 4);
  for (const auto& id : make_ids("any", 1000)) ASSERT_FALSE(gbf.query(id));
  // Slots are random, not zero.
  std::size_t zero = 0;
  for (auto b : gbf.raw_slots()) zero += (b == 0);
  EXPECT_LT(zero, gbf.raw_slots().size() / 100);
}

TEST(GarbledBloomFilter, WrongHashSeedRejects) {
  auto members = make_ids("m", 500);
  auto params = FilterParams::sized(members.size(), 1e-6);
  auto gbf = gbf_build(members, params, 11, 12);
  auto other = GarbledBloomFilter::deserialize(gbf.serialize());
  EXPECT_EQ(other, gbf);
  // Same slots, different seed: positions and encodings both change.
  Bytes bytes = gbf.serialize();
  bytes[19] ^= 0x01;
  auto reseeded = GarbledBloomFilter::deserialize(bytes);
  int accepted = 0;
  for (const auto& id : members) accepted += reseeded.query(id) ? 1 : 0;
  EXPECT_EQ(accepted, 0);
}

TEST(GarbledBloomFilter, MaskingAShareBreaksReconstruction) {
  auto members = make_ids("m", 300);
  auto params = FilterParams::sized(members.size(), 1e-6);
  auto gbf = gbf_build(members, params, 21, 22);
  std::vector<std::uint8_t> noise(gbf.slot_bytes());
  int broken = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    auto copy = gbf;
    auto pos = filter_positions(as_bytes(members[i]), gbf.m(), gbf.k(), gbf.hash_seed());
    fill_random(99, i, noise);
    auto s = copy.slot(pos[i % pos.size()]);
    std::copy(noise.begin(), noise.end(), s.begin());
    broken += copy.query(members[i]) ? 0 : 1;
  }
  EXPECT_EQ(broken, static_cast<int>(members.size()));
}

TEST(GarbledBloomFilter, Deterministic) {
  auto members = make_ids("d", 1000);
  auto params = FilterParams::sized(members.size(), 1e-6);
  EXPECT_EQ(gbf_build(members, params, 5, 6).serialize(), gbf_build(members, params, 5, 6).serialize());
  EXPECT_NE(gbf_build(members, params, 5, 6).serialize(), gbf_build(members, params, 5, 7).serialize());
}

TEST(GarbledBloomFilter, RejectsOversizedInput) {
  auto params = FilterParams::sized(10, 1e-6);
  EXPECT_THROW(gbf_build(make_ids("z", 11), params, 1, 1), Error);
}

// A filter too small for its content must exhaust retries rather than
// silently drop members.
TEST(GarbledBloomFilter, RetryExhaustion) {
  FilterParams tiny;
  tiny.expected_items = 200;
  tiny.m = 8;
  tiny.k = 3;
  try {
    gbf_build(make_ids("t", 200), tiny, 1, 1);
    FAIL() << "expected construction failure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kData);
  }
}

}  // namespace
}  // namespace dvfl
