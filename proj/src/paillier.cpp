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

#include "dvfl/paillier.hpp"

#include <cmath>
#include <string>

#include "dvfl/error.hpp"

namespace dvfl::paillier {

namespace {

constexpr int kMillerRabinRounds = 40;

std::uint64_t fingerprint(const BigNat& n) {
  ByteWriter w;
  write_bignat(w, n);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : w.buffer()) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

void check_key(const PublicKey& pk, const Ciphertext& c) {
  if (c.key_id != pk.key_id) {
    throw Error(ErrorCode::kCrypto, "ciphertext was produced under a different key");
  }
  if (c.value < 0 || c.value >= pk.n_squared) {
    throw Error(ErrorCode::kCrypto, "ciphertext outside [0, n^2)");
  }
}

BigNat random_prime(Rng& rng, unsigned bits) {
  for (;;) {
    BigNat candidate = rng.random_bits(bits);
    mpz_setbit(candidate.get_mpz_t(), bits - 1);
    mpz_setbit(candidate.get_mpz_t(), bits - 2);
    mpz_setbit(candidate.get_mpz_t(), 0);
    if (mpz_probab_prime_p(candidate.get_mpz_t(), kMillerRabinRounds) > 0) {
      return candidate;
    }
  }
}

}  // namespace

Rng::Rng(std::uint64_t seed) : state_(gmp_randinit_mt) {
  mpz_class s;
  mpz_import(s.get_mpz_t(), 1, 1, sizeof(seed), 0, 0, &seed);
  state_.seed(s);
}

BigNat Rng::below(const BigNat& bound) { return state_.get_z_range(bound); }

BigNat Rng::random_bits(unsigned bits) { return state_.get_z_bits(bits); }

std::uint64_t Rng::next_u64() {
  BigNat v = state_.get_z_bits(64);
  std::uint64_t out = 0;
  mpz_export(&out, nullptr, 1, sizeof(out), 0, 0, v.get_mpz_t());
  return out;
}

Keypair keygen(unsigned bits, std::uint64_t rng_seed) {
  if (bits < kMinKeyBits) {
    throw Error(ErrorCode::kInvalidArgument,
                "Paillier key length must be at least 64 bits, got " + std::to_string(bits));
  }
  if (bits % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "Paillier key length must be even");
  }
  Rng rng(rng_seed);
  for (;;) {
    BigNat p = random_prime(rng, bits / 2);
    BigNat q = random_prime(rng, bits / 2);
    if (p == q) continue;
    BigNat n = p * q;
    BigNat phi = (p - 1) * (q - 1);
    BigNat g;
    mpz_gcd(g.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
    if (g != 1 || mpz_sizeinbase(n.get_mpz_t(), 2) != bits) continue;
    return keypair_from_primes(p, q);
  }
}

Keypair keypair_from_primes(const BigNat& p, const BigNat& q) {
  if (p == q || p < 2 || q < 2) {
    throw Error(ErrorCode::kInvalidArgument, "Paillier primes must be distinct and > 1");
  }
  Keypair kp;
  PublicKey& pub = kp.pub;
  pub = make_public_key(p * q);

  PrivateKey& priv = kp.priv;
  priv.p = p;
  priv.q = q;
  BigNat pm1 = p - 1;
  BigNat qm1 = q - 1;
  mpz_lcm(priv.lambda.get_mpz_t(), pm1.get_mpz_t(), qm1.get_mpz_t());

  BigNat x;
  mpz_powm(x.get_mpz_t(), pub.g.get_mpz_t(), priv.lambda.get_mpz_t(),
           pub.n_squared.get_mpz_t());
  BigNat l = (x - 1) / pub.n;
  if (mpz_invert(priv.mu.get_mpz_t(), l.get_mpz_t(), pub.n.get_mpz_t()) == 0) {
    throw Error(ErrorCode::kCrypto, "L(g^lambda) is not invertible mod n; bad primes");
  }
  priv.pub = pub;
  return kp;
}

PublicKey make_public_key(const BigNat& n) {
  PublicKey pk;
  pk.n = n;
  pk.n_squared = n * n;
  pk.g = n + 1;
  pk.bits = static_cast<unsigned>(mpz_sizeinbase(n.get_mpz_t(), 2));
  pk.key_id = fingerprint(n);
  return pk;
}

Ciphertext encrypt(const PublicKey& pk, const BigNat& m, Rng& rng) {
  if (m < 0 || m >= pk.n) {
    throw Error(ErrorCode::kCrypto, "plaintext outside [0, n)");
  }
  BigNat r;
  for (;;) {
    r = rng.below(pk.n);
    if (r == 0) continue;
    BigNat g;
    mpz_gcd(g.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t());
    if (g == 1) break;
  }
  // g = n + 1, so g^m = 1 + m*n (mod n^2).
  BigNat gm = (1 + m * pk.n) % pk.n_squared;
  BigNat rn;
  mpz_powm(rn.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t(), pk.n_squared.get_mpz_t());
  Ciphertext c;
  c.value = (gm * rn) % pk.n_squared;
  c.key_id = pk.key_id;
  return c;
}

Ciphertext encrypt(const PublicKey& pk, const BigNat& m, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return encrypt(pk, m, rng);
}

BigNat decrypt(const PrivateKey& sk, const Ciphertext& c) {
  const PublicKey& pk = sk.pub;
  check_key(pk, c);
  BigNat x;
  mpz_powm(x.get_mpz_t(), c.value.get_mpz_t(), sk.lambda.get_mpz_t(),
           pk.n_squared.get_mpz_t());
  BigNat l = (x - 1) / pk.n;
  return (l * sk.mu) % pk.n;
}

Ciphertext add(const PublicKey& pk, const Ciphertext& c1, const Ciphertext& c2) {
  check_key(pk, c1);
  check_key(pk, c2);
  Ciphertext out;
  out.value = (c1.value * c2.value) % pk.n_squared;
  out.key_id = pk.key_id;
  return out;
}

Ciphertext scalar_mul(const PublicKey& pk, const Ciphertext& c, const BigNat& k) {
  check_key(pk, c);
  if (k < 0 || k >= pk.n) {
    throw Error(ErrorCode::kCrypto, "scalar outside [0, n)");
  }
  Ciphertext out;
  mpz_powm(out.value.get_mpz_t(), c.value.get_mpz_t(), k.get_mpz_t(),
           pk.n_squared.get_mpz_t());
  out.key_id = pk.key_id;
  return out;
}

Ciphertext negate(const PublicKey& pk, const Ciphertext& c) {
  check_key(pk, c);
  Ciphertext out;
  if (mpz_invert(out.value.get_mpz_t(), c.value.get_mpz_t(), pk.n_squared.get_mpz_t()) == 0) {
    throw Error(ErrorCode::kCrypto, "ciphertext is not a unit mod n^2");
  }
  out.key_id = pk.key_id;
  return out;
}

Ciphertext scalar_mul_signed(const PublicKey& pk, const Ciphertext& c,
                             const Ciphertext& c_inverse, const mpz_class& k) {
  Ciphertext out;
  out.key_id = pk.key_id;
  if (sgn(k) >= 0) {
    mpz_powm(out.value.get_mpz_t(), c.value.get_mpz_t(), k.get_mpz_t(),
             pk.n_squared.get_mpz_t());
  } else {
    mpz_class mag = -k;
    mpz_powm(out.value.get_mpz_t(), c_inverse.value.get_mpz_t(), mag.get_mpz_t(),
             pk.n_squared.get_mpz_t());
  }
  return out;
}

FixedPointCodec::FixedPointCodec(const PublicKey& pk, unsigned frac_bits)
    : frac_bits_(frac_bits), n_(pk.n), half_n_(pk.n / 2) {}

BigNat FixedPointCodec::encode(double v, unsigned scale_bits) const {
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::kCrypto, "cannot encode a non-finite value");
  }
  mpz_class scaled;
  double r = std::nearbyint(std::ldexp(v, static_cast<int>(scale_bits)));
  mpz_set_d(scaled.get_mpz_t(), r);
  if (abs(scaled) >= half_n_) {
    throw Error(ErrorCode::kCrypto, "fixed-point overflow: |v| * 2^f exceeds n / 2");
  }
  return to_ring(scaled);
}

double FixedPointCodec::decode(const BigNat& m, unsigned scale_bits) const {
  mpz_class s = from_ring(m);
  return std::ldexp(s.get_d(), -static_cast<int>(scale_bits));
}

BigNat FixedPointCodec::to_ring(const mpz_class& signed_value) const {
  if (abs(signed_value) >= half_n_) {
    throw Error(ErrorCode::kCrypto, "fixed-point overflow: value outside the signed range");
  }
  if (sgn(signed_value) < 0) return n_ + signed_value;
  return signed_value;
}

mpz_class FixedPointCodec::from_ring(const BigNat& m) const {
  if (m >= half_n_) return m - n_;
  return m;
}

void write_bignat(ByteWriter& w, const BigNat& v) {
  if (sgn(v) < 0) {
    throw Error(ErrorCode::kInvalidArgument, "cannot serialize a negative big natural");
  }
  std::size_t count = 0;
  if (sgn(v) == 0) {
    w.u32(0);
    return;
  }
  std::size_t len = (mpz_sizeinbase(v.get_mpz_t(), 2) + 7) / 8;
  w.u32(static_cast<std::uint32_t>(len));
  Bytes& buf = w.buffer();
  std::size_t start = buf.size();
  buf.resize(start + len);
  mpz_export(buf.data() + start, &count, 1, 1, 1, 0, v.get_mpz_t());
}

BigNat read_bignat(ByteReader& r) {
  auto bytes = r.blob();
  BigNat v;
  if (bytes.empty()) return v;
  if (bytes[0] == 0) {
    throw Error(ErrorCode::kProtocol, "big natural has a leading zero byte");
  }
  mpz_import(v.get_mpz_t(), bytes.size(), 1, 1, 1, 0, bytes.data());
  return v;
}

void write_public_key(ByteWriter& w, const PublicKey& pk) {
  w.u32(pk.bits);
  write_bignat(w, pk.n);
}

PublicKey read_public_key(ByteReader& r) {
  unsigned bits = r.u32();
  PublicKey pk = make_public_key(read_bignat(r));
  if (pk.bits != bits) {
    throw Error(ErrorCode::kProtocol, "public key length does not match its modulus");
  }
  return pk;
}

}  // namespace dvfl::paillier
