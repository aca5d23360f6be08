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

// Framed point-to-point channels. Every message is a (type, payload) frame;
// over TCP it is encoded as a 4-byte big-endian payload length, a 1-byte type
// and the payload. Channels are FIFO and reliable; recv blocks.

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "dvfl/wire.hpp"

namespace dvfl {

enum class MsgType : std::uint8_t {
  kPush = 0x01,
  kPullReq = 0x02,
  kPullResp = 0x03,
  kHandshake = 0x04,
  kPsiParams = 0x10,
  kPsiClientBf = 0x11,
  kPsiIntersectionGbf = 0x12,
  kPsiDone = 0x13,
  kPsiResult = 0x14,
  kEncAct = 0x20,
  kMaskedCt = 0x21,
  kMaskedPt = 0x22,
  kGradPassive = 0x23,
  kPlainAct = 0x24,
  kShutdown = 0x7F,
};

const char* msg_type_name(MsgType type);

struct Frame {
  MsgType type;
  Bytes payload;
};

inline constexpr std::size_t kFrameHeaderBytes = 5;
inline constexpr std::uint32_t kMaxFramePayload = 0xFFFFFFFFu;

Bytes encode_frame(const Frame& frame);
// Parses exactly one complete frame.
Frame decode_frame(std::span<const std::uint8_t> bytes);

class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send(Frame frame) = 0;
  // Blocks until a frame arrives. Throws kChannelClosed once the peer has
  // closed and every queued frame was consumed.
  virtual Frame recv() = 0;
  virtual void close() = 0;
};

// recv + type check. SHUTDOWN surfaces as kShutdown, any other unexpected
// type as kProtocol.
Frame expect_frame(Channel& ch, MsgType type);

// Two connected in-process endpoints.
std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_in_process_pair();

class TcpListener {
 public:
  // port 0 picks an ephemeral port.
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  std::unique_ptr<Channel> accept();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// Retries refused connections for up to timeout_ms.
std::unique_ptr<Channel> tcp_connect(const std::string& host, std::uint16_t port, int timeout_ms = 10000);

// Connected TCP pair on the loopback interface.
std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_tcp_loopback_pair();

// Passes frames through and logs the type of every frame sent.
class RecordingChannel final : public Channel {
 public:
  explicit RecordingChannel(std::unique_ptr<Channel> inner) : inner_(std::move(inner)) {}

  void send(Frame frame) override;
  Frame recv() override;
  void close() override { inner_->close(); }

  std::vector<MsgType> sent_types() const;
  std::vector<MsgType> received_types() const;

 private:
  std::unique_ptr<Channel> inner_;
  mutable std::mutex mu_;
  std::vector<MsgType> sent_;
  std::vector<MsgType> received_;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

// "host:port"
Endpoint parse_endpoint(const std::string& text);

}  // namespace dvfl
