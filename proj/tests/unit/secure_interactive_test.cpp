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

#include "dvfl/secure_interactive.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <thread>

#include "dvfl/error.hpp"
#include "dvfl/transport.hpp"

namespace dvfl {
namespace {

constexpr unsigned kFrac = 16;
const double kUlp = std::ldexp(1.0, -static_cast<int>(kFrac));

const paillier::Keypair& key128() {
  static const paillier::Keypair k = paillier::keygen(128, 71);
  return k;
}

Tensor2 uniform(std::size_t r, std::size_t c, double lo, double hi, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor2 t(r, c);
  for (double& v : t.data()) v = u(gen);
  return t;
}

TEST(EncryptActivation, RoundTripWithinOneUlp) {
  const auto& k = key128();
  paillier::FixedPointCodec codec(k.pub, kFrac);
  paillier::Rng rng(1);
  std::mt19937_64 gen(2);
  Tensor2 x = uniform(4, 8, -5, 5, gen);
  auto enc = encrypt_activation(x, k.pub, codec, rng);
  EXPECT_EQ(enc.rows, 4u);
  EXPECT_EQ(enc.cols, 8u);
  Tensor2 back = decrypt_activation(enc, k.priv, codec);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(back.data()[i] - x.data()[i]), kUlp);

  Tensor2 zeros(3, 3);
  EXPECT_EQ(decrypt_activation(encrypt_activation(zeros, k.pub, codec, rng), k.priv, codec), zeros);
  EXPECT_THROW(encrypt_activation(Tensor2(1, 1, 1e7), k.pub, codec, rng), Error);
}

TEST(HomomorphicLinear, IdentityWeightsReturnInput) {
  const auto& k = key128();
  paillier::FixedPointCodec codec(k.pub, kFrac);
  paillier::Rng rng(3);
  std::mt19937_64 gen(4);
  Tensor2 x = uniform(3, 5, -2, 2, gen);
  Tensor2 eye(5, 5);
  for (std::size_t i = 0; i < 5; ++i) eye(i, i) = 1;
  auto prod = homomorphic_linear(encrypt_activation(x, k.pub, codec, rng), eye, MaskState::zeros(3, 5), k.pub, codec, rng);
  Tensor2 y = decrypt_masked(prod, k.priv, codec);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(y.data()[i] - x.data()[i]), 2 * kUlp);
}

TEST(HomomorphicLinear, ZeroWeightsDecryptToMask) {
  const auto& k = key128();
  paillier::FixedPointCodec codec(k.pub, kFrac);
  paillier::Rng rng(5);
  std::mt19937_64 gen(6);
  Tensor2 x = uniform(4, 6, -2, 2, gen);
  MaskState mask = MaskState::draw(4, 3, kFrac, 99);
  auto prod = homomorphic_linear(encrypt_activation(x, k.pub, codec, rng), Tensor2(3, 6), mask, k.pub, codec, rng);
  EXPECT_EQ(decrypt_masked(prod, k.priv, codec), mask.noise);
}

TEST(HomomorphicLinear, MatchesPlaintextProductWithinBound) {
  const auto& k = key128();
  paillier::FixedPointCodec codec(k.pub, kFrac);
  paillier::Rng rng(7);
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t dim = 1 + gen() % 16;
    const std::size_t out = 1 + gen() % 16;
    Tensor2 x = uniform(3, dim, -2, 2, gen);
    Tensor2 w = uniform(out, dim, -2, 2, gen);
    MaskState mask = MaskState::draw(3, out, kFrac, gen());
    auto prod = homomorphic_linear(encrypt_activation(x, k.pub, codec, rng), w, mask, k.pub, codec, rng);
    Tensor2 got = unmask(decrypt_masked(prod, k.priv, codec), mask);
    const double bound = kUlp * static_cast<double>(dim + 2) * 4;
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t o = 0; o < out; ++o) {
        double expect = 0;
        for (std::size_t i = 0; i < dim; ++i) expect += w(o, i) * x(b, i);
        EXPECT_LE(std::abs(got(b, o) - expect), bound);
      }
    }
  }
}

TEST(HomomorphicLinear, TransposedProductMatchesPlaintext) {
  const auto& k = key128();
  paillier::FixedPointCodec codec(k.pub, kFrac);
  paillier::Rng rng(9);
  std::mt19937_64 gen(10);
  Tensor2 x = uniform(16, 5, -3, 3, gen);
  Tensor2 dz = uniform(16, 4, -0.05, 0.05, gen);
  MaskState mask = MaskState::draw(4, 5, kFrac, 11);
  auto prod = homomorphic_transposed_product(encrypt_activation(x, k.pub, codec, rng), dz, mask, k.pub, codec, rng);
  Tensor2 got = masked_decrypt_exchange(prod, k.priv, codec, mask);
  Tensor2 expect = matmul_tn(dz, x);
  const double bound = kUlp * 16 * (3 + 0.05 + 1);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_LE(std::abs(got.data()[i] - expect.data()[i]), bound);
}

TEST(HomomorphicLinear, RejectsForeignKeysAndShapes) {
  const auto& k = key128();
  auto other = paillier::keygen(128, 72);
  paillier::FixedPointCodec codec(k.pub, kFrac);
  paillier::Rng rng(12);
  auto enc = encrypt_activation(Tensor2(2, 2, 0.5), other.pub, codec, rng);
  EXPECT_THROW(homomorphic_linear(enc, Tensor2(2, 2), MaskState::zeros(2, 2), k.pub, codec, rng), Error);
  auto mine = encrypt_activation(Tensor2(2, 2, 0.5), k.pub, codec, rng);
  EXPECT_THROW(homomorphic_linear(mine, Tensor2(2, 3), MaskState::zeros(2, 2), k.pub, codec, rng), Error);
  EXPECT_THROW(homomorphic_linear(mine, Tensor2(2, 2), MaskState::zeros(3, 2), k.pub, codec, rng), Error);
}

TEST(HomomorphicLinear, RejectsProductsThatCanOverflow) {
  auto small = paillier::keygen(64, 73);
  paillier::FixedPointCodec codec(small.pub, kFrac);
  paillier::Rng rng(13);
  auto enc = encrypt_activation(Tensor2(1, 4, 1.0), small.pub, codec, rng);
  EXPECT_THROW(homomorphic_linear(enc, Tensor2(1, 4, 1e6), MaskState::zeros(1, 1), small.pub, codec, rng), Error);
}

TEST(MaskedExchange, ZeroMaskAndZeroValue) {
  const auto& k = key128();
  paillier::FixedPointCodec codec(k.pub, kFrac);
  paillier::Rng rng(14);
  Tensor2 x(2, 3, 0.75);
  Tensor2 w(2, 3, 1.0);
  auto enc = encrypt_activation(x, k.pub, codec, rng);
  Tensor2 plain = masked_decrypt_exchange(homomorphic_linear(enc, w, MaskState::zeros(2, 2), k.pub, codec, rng), k.priv,
                                          codec, MaskState::zeros(2, 2));
  for (double v : plain.data()) EXPECT_NEAR(v, 2.25, 5 * kUlp);

  MaskState mask = MaskState::draw(2, 2, kFrac, 15);
  Tensor2 zero = masked_decrypt_exchange(homomorphic_linear(enc, Tensor2(2, 3), mask, k.pub, codec, rng), k.priv,
                                         codec, mask);
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(MaskedExchange, OwnerSeesMaskedValues) {
  const auto& k = key128();
  paillier::FixedPointCodec codec(k.pub, kFrac);
  paillier::Rng rng(16);
  std::mt19937_64 gen(17);
  Tensor2 x = uniform(20, 4, -1, 1, gen);
  Tensor2 w = uniform(10, 4, -1, 1, gen);
  Tensor2 truth = matmul_nt(x, w);
  MaskState mask = MaskState::draw(20, 10, kFrac, 18);
  Tensor2 observed = decrypt_masked(homomorphic_linear(encrypt_activation(x, k.pub, codec, rng), w, mask, k.pub, codec, rng),
                                    k.priv, codec);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) differ += std::abs(observed.data()[i] - truth.data()[i]) > 1e-3;
  EXPECT_GE(static_cast<double>(differ), 0.99 * static_cast<double>(truth.size()));
  const double limit = std::ldexp(1.0, static_cast<int>(kMaskMagnitudeBits));
  for (double v : mask.noise.data()) {
    EXPECT_LE(std::abs(v), limit);
    EXPECT_EQ(std::ldexp(v, kFrac), std::nearbyint(std::ldexp(v, kFrac)));
  }
}

TEST(Wire, EncryptedGridRoundTripAndChecks) {
  const auto& k = key128();
  paillier::FixedPointCodec codec(k.pub, kFrac);
  paillier::Rng rng(19);
  auto enc = encrypt_activation(Tensor2(2, 3, -1.25), k.pub, codec, rng);
  Bytes bytes = encode_encrypted(7, enc);
  auto back = decode_encrypted<Scale::kSingle>(bytes, 7, k.pub);
  ASSERT_EQ(back.cells.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(back.cells[i].value, enc.cells[i].value);
  EXPECT_EQ(back.producer, Producer::kPassive);
  try {
    decode_encrypted<Scale::kSingle>(bytes, 8, k.pub);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProtocol);
  }
  EXPECT_THROW(decode_encrypted<Scale::kDouble>(bytes, 7, k.pub), Error);

  Tensor2 g(2, 2, {1.5, -2, 0, 1e-300});
  EXPECT_EQ(decode_real_grid(encode_real_grid(3, g), 3), g);
  EXPECT_THROW(decode_real_grid(encode_real_grid(3, g), 4), Error);
}

// Runs one interactive step between peers and compares with plaintext math.
void run_peer_step(bool he) {
  const auto& k = key128();
  auto [a_end, p_end] = make_in_process_pair();
  RecordingChannel active_ch(std::move(a_end));
  RecordingChannel passive_ch(std::move(p_end));
  std::mt19937_64 gen(20);
  Tensor2 hp = uniform(5, 4, 0, 2, gen);
  Tensor2 wp = uniform(6, 4, -1, 1, gen);
  Tensor2 dz = uniform(5, 6, -0.1, 0.1, gen);
  Tensor2 dhp = uniform(5, 4, -0.1, 0.1, gen);

  Tensor2 received;
  std::thread passive([&] {
    PassiveInteractivePeer peer(passive_ch, he, he ? &k : nullptr, kFrac, 21);
    peer.send_activation(42, hp);
    received = peer.serve_until_grad();
  });
  ActiveInteractivePeer active(active_ch, he, he ? std::optional(k.pub) : std::nullopt, kFrac, 22);
  Tensor2 zp = active.forward(42, wp);
  Tensor2 dwp = active.weight_grad(dz);
  active.send_grad(dhp);
  passive.join();

  Tensor2 zp_ref = matmul_nt(hp, wp);
  Tensor2 dwp_ref = matmul_tn(dz, hp);
  const double tol = he ? 1e-3 : 0.0;
  for (std::size_t i = 0; i < zp.size(); ++i) EXPECT_NEAR(zp.data()[i], zp_ref.data()[i], tol);
  for (std::size_t i = 0; i < dwp.size(); ++i) EXPECT_NEAR(dwp.data()[i], dwp_ref.data()[i], tol);
  EXPECT_EQ(received, dhp);

  using M = MsgType;
  if (he) {
    EXPECT_EQ(passive_ch.sent_types(), (std::vector<M>{M::kEncAct, M::kMaskedPt, M::kMaskedPt}));
    EXPECT_EQ(active_ch.sent_types(), (std::vector<M>{M::kMaskedCt, M::kMaskedCt, M::kGradPassive}));
    EXPECT_GT(active.timings().he_ms, 0.0);
  } else {
    EXPECT_EQ(passive_ch.sent_types(), (std::vector<M>{M::kPlainAct}));
    EXPECT_EQ(active_ch.sent_types(), (std::vector<M>{M::kGradPassive}));
  }
}

TEST(Peers, EncryptedStep) { run_peer_step(true); }
TEST(Peers, PlaintextStep) { run_peer_step(false); }

TEST(Peers, StepDesyncIsFatal) {
  auto [a_end, p_end] = make_in_process_pair();
  PassiveInteractivePeer passive(*p_end, false, nullptr, kFrac, 1);
  ActiveInteractivePeer active(*a_end, false, std::nullopt, kFrac, 2);
  passive.send_activation(5, Tensor2(1, 2));
  try {
    active.forward(6, Tensor2(3, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProtocol);
  }
  backward_exchange({Tensor2(1, 2), 9}, *a_end);
  EXPECT_THROW(passive.serve_until_grad(), Error);
}

TEST(Peers, HeWithoutKeysIsAConfigError) {
  auto [a_end, p_end] = make_in_process_pair();
  EXPECT_THROW(ActiveInteractivePeer(*a_end, true, std::nullopt, kFrac, 1), Error);
  EXPECT_THROW(PassiveInteractivePeer(*p_end, true, nullptr, kFrac, 1), Error);
}

}  // namespace
}  // namespace dvfl
