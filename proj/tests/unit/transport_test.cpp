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

#include "dvfl/transport.hpp"

#include <gtest/gtest.h>

#include <thread>

#include "dvfl/error.hpp"

namespace dvfl {
namespace {

Frame numbered_frame(std::uint32_t i) {
  ByteWriter w;
  w.u32(i);
  return {MsgType::kPush, w.take()};
}

void check_fifo(Channel& a, Channel& b) {
  constexpr std::uint32_t kCount = 1000;
  std::thread sender([&] {
    for (std::uint32_t i = 0; i < kCount; ++i) a.send(numbered_frame(i));
  });
  for (std::uint32_t i = 0; i < kCount; ++i) {
    Frame f = b.recv();
    ASSERT_EQ(f.type, MsgType::kPush);
    ByteReader r(f.payload);
    ASSERT_EQ(r.u32(), i);
  }
  sender.join();
}

TEST(Frame, EncodingLayout) {
  Bytes bytes = encode_frame({MsgType::kMaskedPt, Bytes{0xAA, 0xBB, 0xCC}});
  EXPECT_EQ(bytes, (Bytes{0, 0, 0, 3, 0x22, 0xAA, 0xBB, 0xCC}));
  Frame f = decode_frame(bytes);
  EXPECT_EQ(f.type, MsgType::kMaskedPt);
  EXPECT_EQ(f.payload, (Bytes{0xAA, 0xBB, 0xCC}));
}

TEST(Frame, RejectsMalformed) {
  EXPECT_THROW(decode_frame(Bytes{0, 0, 0, 3, 0x22, 0xAA}), Error);
  EXPECT_THROW(decode_frame(Bytes{0, 0, 0, 0, 0x55}), Error);
  EXPECT_THROW(decode_frame(Bytes{0, 0, 0, 0, 0x01, 0x00}), Error);
}

TEST(InProcess, FifoAndBothDirections) {
  auto [a, b] = make_in_process_pair();
  check_fifo(*a, *b);
  check_fifo(*b, *a);
}

TEST(InProcess, CloseDrainsThenFails) {
  auto [a, b] = make_in_process_pair();
  a->send(numbered_frame(7));
  a->close();
  EXPECT_EQ(b->recv().type, MsgType::kPush);
  try {
    b->recv();
    FAIL() << "recv after close should throw";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kChannelClosed);
  }
  EXPECT_THROW(b->send(numbered_frame(1)), Error);
}

TEST(InProcess, CloseWakesBlockedReceiver) {
  auto [a, b] = make_in_process_pair();
  std::thread closer([&] { a->close(); });
  EXPECT_THROW(b->recv(), Error);
  closer.join();
}

TEST(Tcp, FifoAndBothDirections) {
  auto [a, b] = make_tcp_loopback_pair();
  check_fifo(*a, *b);
  check_fifo(*b, *a);
}

TEST(Tcp, LargeAndEmptyPayloads) {
  auto [a, b] = make_tcp_loopback_pair();
  Bytes big(3 << 20);
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<std::uint8_t>(i * 31);
  std::thread sender([&, &a = a] {
    a->send({MsgType::kEncAct, big});
    a->send({MsgType::kShutdown, {}});
  });
  Frame f = b->recv();
  EXPECT_EQ(f.type, MsgType::kEncAct);
  EXPECT_EQ(f.payload, big);
  Frame s = b->recv();
  EXPECT_EQ(s.type, MsgType::kShutdown);
  EXPECT_TRUE(s.payload.empty());
  sender.join();
}

TEST(Tcp, PeerCloseIsReported) {
  auto [a, b] = make_tcp_loopback_pair();
  a->close();
  try {
    b->recv();
    FAIL() << "expected kChannelClosed";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kChannelClosed);
  }
}

TEST(ExpectFrame, TypeChecks) {
  auto [a, b] = make_in_process_pair();
  a->send({MsgType::kPullReq, {}});
  a->send({MsgType::kShutdown, {}});
  try {
    expect_frame(*b, MsgType::kPush);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProtocol);
  }
  try {
    expect_frame(*b, MsgType::kPush);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShutdown);
  }
}

TEST(Recording, LogsTypes) {
  auto [a, b] = make_in_process_pair();
  RecordingChannel rec(std::move(a));
  rec.send({MsgType::kEncAct, {}});
  rec.send({MsgType::kMaskedPt, {}});
  b->send({MsgType::kMaskedCt, {}});
  rec.recv();
  EXPECT_EQ(rec.sent_types(), (std::vector<MsgType>{MsgType::kEncAct, MsgType::kMaskedPt}));
  EXPECT_EQ(rec.received_types(), (std::vector<MsgType>{MsgType::kMaskedCt}));
}

TEST(Endpoint, Parse) {
  auto ep = parse_endpoint("10.0.0.2:7000");
  EXPECT_EQ(ep.host, "10.0.0.2");
  EXPECT_EQ(ep.port, 7000);
  EXPECT_THROW(parse_endpoint("nohost"), Error);
  EXPECT_THROW(parse_endpoint("h:70000"), Error);
  EXPECT_THROW(parse_endpoint("h:x"), Error);
  EXPECT_EQ(msg_type_name(MsgType::kGradPassive), std::string("GRAD_PASSIVE"));
}

}  // namespace
}  // namespace dvfl
