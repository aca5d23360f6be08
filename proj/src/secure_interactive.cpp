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

#include <chrono>
#include <cmath>
#include <random>

#include "dvfl/error.hpp"
#include "dvfl/transport.hpp"

namespace dvfl {

namespace {

using paillier::BigNat;
using paillier::Ciphertext;

// Largest activation magnitude accepted for encryption; bounds the worst-case
// plaintext after one multiplication.
constexpr double kActivationBound = 1048576.0;

class Stopwatch {
 public:
  explicit Stopwatch(double& sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() {
    sink_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  double& sink_;
  std::chrono::steady_clock::time_point start_;
};

mpz_class signed_fixed(double v, unsigned frac_bits) {
  if (!std::isfinite(v)) throw Error(ErrorCode::kCrypto, "cannot encode a non-finite weight");
  const double scaled = std::nearbyint(std::ldexp(v, static_cast<int>(frac_bits)));
  if (std::abs(scaled) >= 0x1p62) throw Error(ErrorCode::kCrypto, "weight too large for fixed-point encoding");
  return mpz_class(static_cast<long>(scaled));
}

// log2 of the largest plaintext magnitude at scale 2^(2f) must stay below
// log2(n/2).
void check_product_range(std::size_t terms, double max_coeff, double max_mask, const paillier::FixedPointCodec& codec) {
  const double worst = static_cast<double>(terms) * max_coeff * kActivationBound + max_mask;
  const double limit_log2 = static_cast<double>(mpz_sizeinbase(codec.half_n().get_mpz_t(), 2)) - 1.0;
  if (std::log2(worst + 1.0) + 2.0 * codec.frac_bits() >= limit_log2) {
    throw Error(ErrorCode::kCrypto, "homomorphic product may overflow the 2^(2f) fixed-point range");
  }
}

std::vector<Ciphertext> inverses(const paillier::PublicKey& pk, const std::vector<Ciphertext>& cells) {
  std::vector<Ciphertext> out;
  out.reserve(cells.size());
  for (const auto& c : cells) out.push_back(paillier::negate(pk, c));
  return out;
}

void check_key(const paillier::PublicKey& pk, const std::vector<Ciphertext>& cells) {
  for (const auto& c : cells) {
    if (c.key_id != pk.key_id) throw Error(ErrorCode::kCrypto, "ciphertext grid was produced under another key");
  }
}

// out[r, c] = Σ_t coeff(r, c, t) ⊗ enc(r, c, t) ⊕ Enc(mask[r, c]).
template <typename CoeffAt, typename CellAt>
EncryptedProduct combine(std::size_t rows, std::size_t cols, std::size_t terms, CoeffAt coeff_at, CellAt cell_at,
                         const MaskState& mask, const paillier::PublicKey& pk, const paillier::FixedPointCodec& codec,
                         paillier::Rng& rng) {
  if (mask.noise.rows() != rows || mask.noise.cols() != cols) {
    throw Error(ErrorCode::kShape, "mask shape does not match the homomorphic product");
  }
  EncryptedProduct out;
  out.rows = rows;
  out.cols = cols;
  out.producer = Producer::kActive;
  out.cells.reserve(rows * cols);
  const unsigned f = codec.frac_bits();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      Ciphertext acc = paillier::encrypt(pk, codec.encode(mask.noise(r, c), 2 * f), rng);
      for (std::size_t t = 0; t < terms; ++t) {
        const mpz_class k = signed_fixed(coeff_at(r, c, t), f);
        if (sgn(k) == 0) continue;
        auto [cell, inverse] = cell_at(r, c, t);
        acc = paillier::add(pk, acc, paillier::scalar_mul_signed(pk, *cell, *inverse, k));
      }
      out.cells.push_back(std::move(acc));
    }
  }
  return out;
}

Tensor2 decrypt_grid(const std::vector<Ciphertext>& cells, std::size_t rows, std::size_t cols,
                     const paillier::PrivateKey& sk, const paillier::FixedPointCodec& codec, unsigned scale_bits) {
  Tensor2 out(rows, cols);
  for (std::size_t k = 0; k < cells.size(); ++k) out.data()[k] = codec.decode(paillier::decrypt(sk, cells[k]), scale_bits);
  return out;
}

}  // namespace

MaskState MaskState::draw(std::size_t rows, std::size_t cols, unsigned frac_bits, std::uint64_t seed) {
  MaskState m{Tensor2(rows, cols), seed};
  std::mt19937_64 gen(seed);
  const std::int64_t bound = std::int64_t{1} << (frac_bits + kMaskMagnitudeBits);
  std::uniform_int_distribution<std::int64_t> dist(-bound, bound);
  for (double& v : m.noise.data()) v = std::ldexp(static_cast<double>(dist(gen)), -static_cast<int>(frac_bits));
  return m;
}

EncryptedActivation encrypt_activation(const Tensor2& act, const paillier::PublicKey& pk,
                                       const paillier::FixedPointCodec& codec, paillier::Rng& rng, Producer producer) {
  if (max_abs(act) > kActivationBound) throw Error(ErrorCode::kCrypto, "activation exceeds the encryptable range");
  EncryptedActivation out;
  out.rows = act.rows();
  out.cols = act.cols();
  out.producer = producer;
  out.cells.reserve(act.size());
  for (double v : act.data()) out.cells.push_back(paillier::encrypt(pk, codec.encode(v), rng));
  return out;
}

EncryptedProduct homomorphic_linear(const EncryptedActivation& enc, const Tensor2& weights, const MaskState& mask,
                                    const paillier::PublicKey& pk, const paillier::FixedPointCodec& codec,
                                    paillier::Rng& rng) {
  if (weights.cols() != enc.cols) throw Error(ErrorCode::kShape, "weight input dim does not match the activation");
  check_key(pk, enc.cells);
  check_product_range(enc.cols, max_abs(weights), max_abs(mask.noise), codec);
  const auto inv = inverses(pk, enc.cells);
  return combine(
      enc.rows, weights.rows(), enc.cols, [&](std::size_t, std::size_t o, std::size_t i) { return weights(o, i); },
      [&](std::size_t b, std::size_t, std::size_t i) {
        return std::make_pair(&enc.cells[b * enc.cols + i], &inv[b * enc.cols + i]);
      },
      mask, pk, codec, rng);
}

EncryptedProduct homomorphic_transposed_product(const EncryptedActivation& enc, const Tensor2& coeff,
                                                const MaskState& mask, const paillier::PublicKey& pk,
                                                const paillier::FixedPointCodec& codec, paillier::Rng& rng) {
  if (coeff.rows() != enc.rows) throw Error(ErrorCode::kShape, "coefficient rows do not match the activation batch");
  check_key(pk, enc.cells);
  check_product_range(enc.rows, max_abs(coeff), max_abs(mask.noise), codec);
  const auto inv = inverses(pk, enc.cells);
  return combine(
      coeff.cols(), enc.cols, enc.rows, [&](std::size_t o, std::size_t, std::size_t b) { return coeff(b, o); },
      [&](std::size_t, std::size_t i, std::size_t b) {
        return std::make_pair(&enc.cells[b * enc.cols + i], &inv[b * enc.cols + i]);
      },
      mask, pk, codec, rng);
}

Tensor2 decrypt_masked(const EncryptedProduct& enc, const paillier::PrivateKey& sk,
                       const paillier::FixedPointCodec& codec) {
  return decrypt_grid(enc.cells, enc.rows, enc.cols, sk, codec, 2 * codec.frac_bits());
}

Tensor2 decrypt_activation(const EncryptedActivation& enc, const paillier::PrivateKey& sk,
                           const paillier::FixedPointCodec& codec) {
  return decrypt_grid(enc.cells, enc.rows, enc.cols, sk, codec, codec.frac_bits());
}

Tensor2 unmask(const Tensor2& masked, const MaskState& mask) {
  if (masked.rows() != mask.noise.rows() || masked.cols() != mask.noise.cols()) {
    throw Error(ErrorCode::kShape, "masked grid does not match the mask");
  }
  Tensor2 out = masked;
  for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] -= mask.noise.data()[k];
  return out;
}

Tensor2 masked_decrypt_exchange(const EncryptedProduct& enc_masked, const paillier::PrivateKey& owner_sk,
                                const paillier::FixedPointCodec& codec, const MaskState& requester_mask) {
  check_key(owner_sk.pub, enc_masked.cells);
  return unmask(decrypt_masked(enc_masked, owner_sk, codec), requester_mask);
}

// ---- wire encoding ---------------------------------------------------------------

template <Scale S>
Bytes encode_encrypted(std::uint64_t step_id, const EncryptedGrid<S>& grid) {
  ByteWriter w;
  w.u64(step_id);
  w.u32(static_cast<std::uint32_t>(grid.rows));
  w.u32(static_cast<std::uint32_t>(grid.cols));
  w.u8(static_cast<std::uint8_t>(S));
  w.u8(static_cast<std::uint8_t>(grid.producer));
  for (const auto& c : grid.cells) paillier::write_bignat(w, c.value);
  return w.take();
}

template <Scale S>
EncryptedGrid<S> decode_encrypted(std::span<const std::uint8_t> payload, std::uint64_t expected_step,
                                  const paillier::PublicKey& pk) {
  ByteReader r(payload);
  const std::uint64_t step = r.u64();
  if (step != expected_step) {
    throw Error(ErrorCode::kProtocol, "step desync: expected " + std::to_string(expected_step) + ", got " +
                                          std::to_string(step));
  }
  EncryptedGrid<S> grid;
  grid.rows = r.u32();
  grid.cols = r.u32();
  const auto scale = r.u8();
  if (scale != static_cast<std::uint8_t>(S)) throw Error(ErrorCode::kProtocol, "ciphertext grid has the wrong scale");
  const auto producer = r.u8();
  if (producer != 1 && producer != 2) throw Error(ErrorCode::kProtocol, "bad producer tag");
  grid.producer = static_cast<Producer>(producer);
  grid.cells.resize(grid.rows * grid.cols);
  for (auto& c : grid.cells) {
    c.value = paillier::read_bignat(r);
    if (c.value <= 0 || c.value >= pk.n_squared) throw Error(ErrorCode::kProtocol, "ciphertext out of range");
    c.key_id = pk.key_id;
  }
  r.expect_done();
  return grid;
}

template Bytes encode_encrypted(std::uint64_t, const EncryptedGrid<Scale::kSingle>&);
template Bytes encode_encrypted(std::uint64_t, const EncryptedGrid<Scale::kDouble>&);
template EncryptedGrid<Scale::kSingle> decode_encrypted(std::span<const std::uint8_t>, std::uint64_t,
                                                        const paillier::PublicKey&);
template EncryptedGrid<Scale::kDouble> decode_encrypted(std::span<const std::uint8_t>, std::uint64_t,
                                                        const paillier::PublicKey&);

Bytes encode_real_grid(std::uint64_t step_id, const Tensor2& grid) {
  ByteWriter w;
  w.u64(step_id);
  w.u32(static_cast<std::uint32_t>(grid.rows()));
  w.u32(static_cast<std::uint32_t>(grid.cols()));
  w.f64s(grid.data());
  return w.take();
}

Tensor2 decode_real_grid(std::span<const std::uint8_t> payload, std::uint64_t expected_step) {
  ByteReader r(payload);
  const std::uint64_t step = r.u64();
  if (step != expected_step) {
    throw Error(ErrorCode::kProtocol, "step desync: expected " + std::to_string(expected_step) + ", got " +
                                          std::to_string(step));
  }
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  Tensor2 out(rows, cols, r.f64s(rows * cols));
  r.expect_done();
  return out;
}

void backward_exchange(const InteractiveGradMsg& grad, Channel& channel) {
  channel.send({MsgType::kGradPassive, encode_real_grid(grad.step_id, grad.grad_wrt_passive_out)});
}

// ---- active endpoint -----------------------------------------------------------------

ActiveInteractivePeer::ActiveInteractivePeer(Channel& channel, bool he, std::optional<paillier::PublicKey> passive_pk,
                                             unsigned frac_bits, std::uint64_t rng_seed)
    : channel_(channel), he_(he), pk_(std::move(passive_pk)), rng_(rng_seed), mask_seed_(rng_seed ^ 0x6d61736bull) {
  if (he_) {
    if (!pk_) throw Error(ErrorCode::kConfig, "HE mode needs the passive party's public key");
    codec_.emplace(*pk_, frac_bits);
  }
}

Tensor2 ActiveInteractivePeer::forward(std::uint64_t step_id, const Tensor2& passive_weights) {
  step_ = step_id;
  if (!he_) {
    Frame f = expect_frame(channel_, MsgType::kPlainAct);
    plain_ = decode_real_grid(f.payload, step_);
    return matmul_nt(plain_, passive_weights);
  }
  Frame f = expect_frame(channel_, MsgType::kEncAct);
  MaskState mask;
  EncryptedProduct masked;
  {
    Stopwatch sw(timings_.he_ms);
    enc_ = decode_encrypted<Scale::kSingle>(f.payload, step_, *pk_);
    mask = MaskState::draw(enc_->rows, passive_weights.rows(), codec_->frac_bits(), mask_seed_++);
    masked = homomorphic_linear(*enc_, passive_weights, mask, *pk_, *codec_, rng_);
  }
  return masked_round_trip(masked, mask);
}

Tensor2 ActiveInteractivePeer::weight_grad(const Tensor2& dz) {
  if (!he_) return matmul_tn(dz, plain_);
  if (!enc_) throw Error(ErrorCode::kProtocol, "weight gradient requested before forward");
  MaskState mask;
  EncryptedProduct masked;
  {
    Stopwatch sw(timings_.he_ms);
    mask = MaskState::draw(dz.cols(), enc_->cols, codec_->frac_bits(), mask_seed_++);
    masked = homomorphic_transposed_product(*enc_, dz, mask, *pk_, *codec_, rng_);
  }
  return masked_round_trip(masked, mask);
}

Tensor2 ActiveInteractivePeer::masked_round_trip(const EncryptedProduct& masked, const MaskState& mask) {
  channel_.send({MsgType::kMaskedCt, encode_encrypted(step_, masked)});
  Frame reply = expect_frame(channel_, MsgType::kMaskedPt);
  Tensor2 values = decode_real_grid(reply.payload, step_);
  return unmask(values, mask);
}

void ActiveInteractivePeer::send_grad(const Tensor2& grad_wrt_passive_out) {
  backward_exchange({grad_wrt_passive_out, step_}, channel_);
  enc_.reset();
}

// ---- passive endpoint ---------------------------------------------------------------

PassiveInteractivePeer::PassiveInteractivePeer(Channel& channel, bool he, const paillier::Keypair* keys,
                                               unsigned frac_bits, std::uint64_t rng_seed)
    : channel_(channel), he_(he), keys_(keys), rng_(rng_seed) {
  if (he_) {
    if (!keys_) throw Error(ErrorCode::kConfig, "HE mode needs the passive keypair");
    codec_.emplace(keys_->pub, frac_bits);
  }
}

void PassiveInteractivePeer::send_activation(std::uint64_t step_id, const Tensor2& passive_out) {
  step_ = step_id;
  if (!he_) {
    channel_.send({MsgType::kPlainAct, encode_real_grid(step_, passive_out)});
    return;
  }
  Bytes payload;
  {
    Stopwatch sw(timings_.he_ms);
    payload = encode_encrypted(step_, encrypt_activation(passive_out, keys_->pub, *codec_, rng_));
  }
  channel_.send({MsgType::kEncAct, std::move(payload)});
}

Tensor2 PassiveInteractivePeer::serve_until_grad() {
  for (;;) {
    Frame f = channel_.recv();
    if (f.type == MsgType::kGradPassive) return decode_real_grid(f.payload, step_);
    if (f.type == MsgType::kMaskedCt && he_) {
      Bytes reply;
      {
        Stopwatch sw(timings_.he_ms);
        auto grid = decode_encrypted<Scale::kDouble>(f.payload, step_, keys_->pub);
        reply = encode_real_grid(step_, decrypt_masked(grid, keys_->priv, *codec_));
      }
      channel_.send({MsgType::kMaskedPt, std::move(reply)});
      continue;
    }
    if (f.type == MsgType::kShutdown) throw Error(ErrorCode::kShutdown, "peer shut down mid-step");
    throw Error(ErrorCode::kProtocol, std::string("unexpected ") + msg_type_name(f.type) + " during interactive step");
  }
}

}  // namespace dvfl
