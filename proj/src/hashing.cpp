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

#include "dvfl/hashing.hpp"

#include <sodium.h>

#include <array>
#include <mutex>

#include "dvfl/error.hpp"

namespace dvfl {

namespace {

void ensure_sodium() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw Error(ErrorCode::kCrypto, "libsodium initialisation failed");
  });
}

template <std::size_t N>
std::array<std::uint8_t, N> derive_key(HashDomain domain, std::uint64_t seed, std::uint64_t extra = 0) {
  std::array<std::uint8_t, N> key{};
  for (int i = 0; i < 8; ++i) key[i] = static_cast<std::uint8_t>(seed >> (56 - 8 * i));
  key[8] = static_cast<std::uint8_t>(domain);
  for (std::size_t i = 0; i < 7 && 9 + i < N; ++i) {
    key[9 + i] = static_cast<std::uint8_t>(extra >> (8 * i));
  }
  return key;
}

std::uint64_t load_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::span<const std::uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

Hash128 keyed_hash128(HashDomain domain, std::uint64_t seed, std::span<const std::uint8_t> data) {
  static_assert(crypto_shorthash_siphashx24_KEYBYTES == 16);
  auto key = derive_key<16>(domain, seed);
  std::uint8_t out[crypto_shorthash_siphashx24_BYTES];
  crypto_shorthash_siphashx24(out, data.data(), data.size(), key.data());
  return {load_le(out), load_le(out + 8)};
}

std::uint64_t keyed_hash64(HashDomain domain, std::uint64_t seed, std::span<const std::uint8_t> data) {
  auto key = derive_key<16>(domain, seed);
  std::uint8_t out[crypto_shorthash_siphash24_BYTES];
  crypto_shorthash_siphash24(out, data.data(), data.size(), key.data());
  return load_le(out);
}

void keyed_digest(HashDomain domain, std::uint64_t seed, std::span<const std::uint8_t> data,
                  std::span<std::uint8_t> out) {
  ensure_sodium();
  if (out.empty() || out.size() > crypto_generichash_BYTES_MAX) {
    throw Error(ErrorCode::kInvalidArgument, "digest length must be 1..64 bytes");
  }
  auto key = derive_key<crypto_generichash_KEYBYTES>(domain, seed);
  std::array<std::uint8_t, crypto_generichash_BYTES_MAX> full{};
  std::size_t len = std::max<std::size_t>(out.size(), crypto_generichash_BYTES_MIN);
  crypto_generichash(full.data(), len, data.data(), data.size(), key.data(), key.size());
  std::copy_n(full.begin(), out.size(), out.begin());
}

void fill_random(std::uint64_t seed, std::uint64_t stream_id, std::span<std::uint8_t> out) {
  ensure_sodium();
  auto key = derive_key<randombytes_SEEDBYTES>(HashDomain::kStream, seed, stream_id);
  randombytes_buf_deterministic(out.data(), out.size(), key.data());
}

}  // namespace dvfl
