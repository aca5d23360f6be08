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

// Cross-party half of the interactive layer. Per training step:
//   1. the passive worker encrypts its bottom output under its own key
//      (ENC_ACT);
//   2. the active worker multiplies it by its plaintext weight slice under
//      encryption and adds a fresh random mask (MASKED_CT);
//   3. the passive worker decrypts and returns the masked plaintexts
//      (MASKED_PT);
//   4. the active worker removes the mask.
// The same masked round trip yields the weight-slice gradient dzᵀ·h_p, and
// the gradient with respect to the passive bottom output goes back in the
// clear (GRAD_PASSIVE). With HE disabled the passive output travels as
// PLAIN_ACT and the active worker does everything locally.

#include <cstdint>
#include <optional>
#include <vector>

#include "dvfl/nn.hpp"
#include "dvfl/paillier.hpp"

namespace dvfl {

class Channel;

// Fixed-point scale of a ciphertext grid: 2^f after encoding, 2^(2f) after
// one plaintext multiplication.
enum class Scale : std::uint8_t { kSingle = 1, kDouble = 2 };
enum class Producer : std::uint8_t { kActive = 1, kPassive = 2 };

template <Scale S>
struct EncryptedGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<paillier::Ciphertext> cells;  // row-major
  Producer producer = Producer::kPassive;

  static constexpr Scale scale = S;
  const paillier::Ciphertext& at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
};

using EncryptedActivation = EncryptedGrid<Scale::kSingle>;
using EncryptedProduct = EncryptedGrid<Scale::kDouble>;

// Masks are multiples of 2^-f drawn uniformly from [-2^16, 2^16].
inline constexpr unsigned kMaskMagnitudeBits = 16;

struct MaskState {
  Tensor2 noise;
  std::uint64_t rng_seed = 0;

  static MaskState draw(std::size_t rows, std::size_t cols, unsigned frac_bits, std::uint64_t seed);
  static MaskState zeros(std::size_t rows, std::size_t cols) { return {Tensor2(rows, cols), 0}; }
};

EncryptedActivation encrypt_activation(const Tensor2& act, const paillier::PublicKey& pk,
                                       const paillier::FixedPointCodec& codec, paillier::Rng& rng,
                                       Producer producer = Producer::kPassive);

// Cell (b, o) = Σ_i W[o, i] ⊗ enc[b, i] ⊕ Enc(mask[b, o]).
EncryptedProduct homomorphic_linear(const EncryptedActivation& enc, const Tensor2& weights, const MaskState& mask,
                                    const paillier::PublicKey& pk, const paillier::FixedPointCodec& codec,
                                    paillier::Rng& rng);

// Cell (o, i) = Σ_b coeff[b, o] ⊗ enc[b, i] ⊕ Enc(mask[o, i]), i.e. coeffᵀ·x.
EncryptedProduct homomorphic_transposed_product(const EncryptedActivation& enc, const Tensor2& coeff,
                                                const MaskState& mask, const paillier::PublicKey& pk,
                                                const paillier::FixedPointCodec& codec, paillier::Rng& rng);

// Owner side: decrypts and decodes at scale 2^(2f).
Tensor2 decrypt_masked(const EncryptedProduct& enc, const paillier::PrivateKey& sk,
                       const paillier::FixedPointCodec& codec);
// Decrypts a single-scale grid; used by tests and diagnostics.
Tensor2 decrypt_activation(const EncryptedActivation& enc, const paillier::PrivateKey& sk,
                           const paillier::FixedPointCodec& codec);

Tensor2 unmask(const Tensor2& masked, const MaskState& mask);

// Whole masked round trip in one call, for single-address-space use.
Tensor2 masked_decrypt_exchange(const EncryptedProduct& enc_masked, const paillier::PrivateKey& owner_sk,
                                const paillier::FixedPointCodec& codec, const MaskState& requester_mask);

struct InteractiveGradMsg {
  Tensor2 grad_wrt_passive_out;
  std::uint64_t step_id = 0;
};

// ---- wire encoding -------------------------------------------------------------

// step_id u64, rows u32, cols u32, scale u8, then one bignat per cell.
template <Scale S>
Bytes encode_encrypted(std::uint64_t step_id, const EncryptedGrid<S>& grid);
// Throws kProtocol on a scale tag other than S or a step mismatch.
template <Scale S>
EncryptedGrid<S> decode_encrypted(std::span<const std::uint8_t> payload, std::uint64_t expected_step,
                                  const paillier::PublicKey& pk);

// step_id u64, rows u32, cols u32, then rows·cols big-endian f64.
Bytes encode_real_grid(std::uint64_t step_id, const Tensor2& grid);
Tensor2 decode_real_grid(std::span<const std::uint8_t> payload, std::uint64_t expected_step);

void backward_exchange(const InteractiveGradMsg& grad, Channel& channel);

// ---- worker-side endpoints -------------------------------------------------------

struct InteractiveTimings {
  double he_ms = 0;  // encryption, homomorphic products, decryption
};

class ActiveInteractivePeer {
 public:
  // `passive_pk` is required when HE is on.
  ActiveInteractivePeer(Channel& channel, bool he, std::optional<paillier::PublicKey> passive_pk,
                        unsigned frac_bits, std::uint64_t rng_seed);

  // Receives the passive contribution for `step_id` and returns h_p·W_pᵀ.
  Tensor2 forward(std::uint64_t step_id, const Tensor2& passive_weights);
  // dzᵀ·h_p for the step of the last forward.
  Tensor2 weight_grad(const Tensor2& dz);
  // Sends ∂loss/∂h_p and closes the step.
  void send_grad(const Tensor2& grad_wrt_passive_out);

  InteractiveTimings& timings() { return timings_; }

 private:
  Tensor2 masked_round_trip(const EncryptedProduct& masked, const MaskState& mask);

  Channel& channel_;
  bool he_;
  std::optional<paillier::PublicKey> pk_;
  std::optional<paillier::FixedPointCodec> codec_;
  paillier::Rng rng_;
  std::uint64_t mask_seed_;
  std::uint64_t step_ = 0;
  std::optional<EncryptedActivation> enc_;
  Tensor2 plain_;
  InteractiveTimings timings_;
};

class PassiveInteractivePeer {
 public:
  // `keys` is required when HE is on.
  PassiveInteractivePeer(Channel& channel, bool he, const paillier::Keypair* keys, unsigned frac_bits,
                         std::uint64_t rng_seed);

  void send_activation(std::uint64_t step_id, const Tensor2& passive_out);
  // Answers masked decryption requests until GRAD_PASSIVE for the step.
  Tensor2 serve_until_grad();

  InteractiveTimings& timings() { return timings_; }

 private:
  Channel& channel_;
  bool he_;
  const paillier::Keypair* keys_;
  std::optional<paillier::FixedPointCodec> codec_;
  paillier::Rng rng_;
  std::uint64_t step_ = 0;
  InteractiveTimings timings_;
};

}  // namespace dvfl
