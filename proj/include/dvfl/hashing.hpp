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

#include <cstdint>
#include <span>
#include <string_view>

namespace dvfl {

// Keyed hashes and a seeded byte stream, all derived from 64-bit seeds.
// Distinct `domain` tags give independent functions for the same seed.

struct Hash128 {
  std::uint64_t h1;
  std::uint64_t h2;
};

enum class HashDomain : std::uint8_t {
  kFilterPositions = 1,
  kFilterEncoding = 2,
  kBucket = 3,
  kStream = 4,
};

std::span<const std::uint8_t> as_bytes(std::string_view s);

// SipHash-2-4, 128-bit output.
Hash128 keyed_hash128(HashDomain domain, std::uint64_t seed, std::span<const std::uint8_t> data);
// SipHash-2-4, 64-bit output.
std::uint64_t keyed_hash64(HashDomain domain, std::uint64_t seed, std::span<const std::uint8_t> data);
// Keyed BLAKE2b truncated to out.size() bytes (1..64).
void keyed_digest(HashDomain domain, std::uint64_t seed, std::span<const std::uint8_t> data,
                  std::span<std::uint8_t> out);
// ChaCha20 keystream seeded by (seed, stream_id).
void fill_random(std::uint64_t seed, std::uint64_t stream_id, std::span<std::uint8_t> out);

}  // namespace dvfl
