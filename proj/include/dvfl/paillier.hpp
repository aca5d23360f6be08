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

// Paillier additively homomorphic encryption with a signed fixed-point codec.
//
//   D(E(m1) * E(m2) mod n^2) = m1 + m2 mod n
//   D(E(m1) ^ m2   mod n^2) = m1 * m2 mod n
//
// Keys and codecs are immutable values and may be shared freely between
// threads. Randomness is always explicit (a seeded Rng), so every operation is
// reproducible.

#include <gmpxx.h>

#include <cstdint>

#include "dvfl/wire.hpp"

namespace dvfl::paillier {

using BigNat = mpz_class;

struct PublicKey {
  BigNat n;
  BigNat n_squared;
  BigNat g;  // always n + 1
  unsigned bits = 0;
  std::uint64_t key_id = 0;
};

struct PrivateKey {
  PublicKey pub;
  BigNat lambda;  // lcm(p - 1, q - 1)
  BigNat mu;      // L(g^lambda mod n^2)^-1 mod n
  BigNat p;
  BigNat q;
};

struct Keypair {
  PublicKey pub;
  PrivateKey priv;
};

struct Ciphertext {
  BigNat value;
  std::uint64_t key_id = 0;
};

// Deterministic big-integer random source (Mersenne Twister inside GMP).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Uniform in [0, bound).
  BigNat below(const BigNat& bound);
  // Uniform with exactly `bits` random bits (top bit may be zero).
  BigNat random_bits(unsigned bits);
  std::uint64_t next_u64();

 private:
  gmp_randclass state_;
};

inline constexpr unsigned kMinKeyBits = 64;

// Fresh keypair with two distinct bits/2-bit primes; n has exactly `bits`
// bits. Throws kInvalidArgument for bits < 64 or odd sizes.
Keypair keygen(unsigned bits, std::uint64_t rng_seed);

// Keypair from caller-supplied primes. No size floor, so toy keys such as
// p = 11, q = 13 are accepted for testing.
Keypair keypair_from_primes(const BigNat& p, const BigNat& q);

Ciphertext encrypt(const PublicKey& pk, const BigNat& m, Rng& rng);
Ciphertext encrypt(const PublicKey& pk, const BigNat& m, std::uint64_t rng_seed);

BigNat decrypt(const PrivateKey& sk, const Ciphertext& c);

// c1 * c2 mod n^2.
Ciphertext add(const PublicKey& pk, const Ciphertext& c1, const Ciphertext& c2);

// c^k mod n^2, 0 <= k < n.
Ciphertext scalar_mul(const PublicKey& pk, const Ciphertext& c, const BigNat& k);

// c^-1 mod n^2; decrypts to -m mod n.
Ciphertext negate(const PublicKey& pk, const Ciphertext& c);

// Multiplication by a signed integer. Negative factors exponentiate the
// inverse by |k|, which keeps exponents short; the ciphertext differs from
// scalar_mul(c, n - |k|) but decrypts to the same m * k mod n. Pass the
// precomputed inverse when multiplying one ciphertext by many factors.
Ciphertext scalar_mul_signed(const PublicKey& pk, const Ciphertext& c,
                             const Ciphertext& c_inverse, const mpz_class& k);

// Signed fixed-point mapping of reals onto Z_n. Values are scaled by
// 2^frac_bits and negatives live in the upper half [half_n, n).
class FixedPointCodec {
 public:
  FixedPointCodec(const PublicKey& pk, unsigned frac_bits = 16);

  unsigned frac_bits() const { return frac_bits_; }
  const BigNat& half_n() const { return half_n_; }
  const BigNat& n() const { return n_; }

  // round(v * 2^scale_bits) mapped into Z_n; scale_bits defaults to frac_bits.
  BigNat encode(double v) const { return encode(v, frac_bits_); }
  BigNat encode(double v, unsigned scale_bits) const;
  // Inverse of encode at the given scale (2 * frac_bits after one
  // homomorphic multiplication).
  double decode(const BigNat& m) const { return decode(m, frac_bits_); }
  double decode(const BigNat& m, unsigned scale_bits) const;

  // Signed integer <-> ring element, no scaling.
  BigNat to_ring(const mpz_class& signed_value) const;
  mpz_class from_ring(const BigNat& m) const;

 private:
  unsigned frac_bits_;
  BigNat n_;
  BigNat half_n_;
};

// 4-byte big-endian length, then big-endian magnitude without leading zeros.
void write_bignat(ByteWriter& w, const BigNat& v);
BigNat read_bignat(ByteReader& r);

// Public key transport: bits (u32), n.
void write_public_key(ByteWriter& w, const PublicKey& pk);
PublicKey read_public_key(ByteReader& r);
PublicKey make_public_key(const BigNat& n);

}  // namespace dvfl::paillier
