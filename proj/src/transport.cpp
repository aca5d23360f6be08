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

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <thread>

#include "dvfl/error.hpp"

namespace dvfl {

const char* msg_type_name(MsgType type) {
  switch (type) {
    case MsgType::kPush: return "PUSH";
    case MsgType::kPullReq: return "PULL_REQ";
    case MsgType::kPullResp: return "PULL_RESP";
    case MsgType::kHandshake: return "HANDSHAKE";
    case MsgType::kPsiParams: return "PSI_PARAMS";
    case MsgType::kPsiClientBf: return "PSI_CLIENT_BF";
    case MsgType::kPsiIntersectionGbf: return "PSI_INTERSECTION_GBF";
    case MsgType::kPsiDone: return "PSI_DONE";
    case MsgType::kPsiResult: return "PSI_RESULT";
    case MsgType::kEncAct: return "ENC_ACT";
    case MsgType::kMaskedCt: return "MASKED_CT";
    case MsgType::kMaskedPt: return "MASKED_PT";
    case MsgType::kGradPassive: return "GRAD_PASSIVE";
    case MsgType::kPlainAct: return "PLAIN_ACT";
    case MsgType::kShutdown: return "SHUTDOWN";
  }
  return "UNKNOWN";
}

namespace {

bool known_type(std::uint8_t t) {
  switch (static_cast<MsgType>(t)) {
    case MsgType::kPush:
    case MsgType::kPullReq:
    case MsgType::kPullResp:
    case MsgType::kHandshake:
    case MsgType::kPsiParams:
    case MsgType::kPsiClientBf:
    case MsgType::kPsiIntersectionGbf:
    case MsgType::kPsiDone:
    case MsgType::kPsiResult:
    case MsgType::kEncAct:
    case MsgType::kMaskedCt:
    case MsgType::kMaskedPt:
    case MsgType::kGradPassive:
    case MsgType::kPlainAct:
    case MsgType::kShutdown:
      return true;
  }
  return false;
}

// ---- in-process -----------------------------------------------------------

struct Mailbox {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Frame> queue;
  bool closed = false;
};

class InProcessChannel final : public Channel {
 public:
  InProcessChannel(std::shared_ptr<Mailbox> inbox, std::shared_ptr<Mailbox> outbox)
      : inbox_(std::move(inbox)), outbox_(std::move(outbox)) {}
  ~InProcessChannel() override { close(); }

  void send(Frame frame) override {
    std::lock_guard lock(outbox_->mu);
    if (outbox_->closed) throw Error(ErrorCode::kChannelClosed, "send on a closed channel");
    outbox_->queue.push_back(std::move(frame));
    outbox_->cv.notify_one();
  }

  Frame recv() override {
    std::unique_lock lock(inbox_->mu);
    inbox_->cv.wait(lock, [&] { return !inbox_->queue.empty() || inbox_->closed; });
    if (inbox_->queue.empty()) throw Error(ErrorCode::kChannelClosed, "peer closed the channel");
    Frame f = std::move(inbox_->queue.front());
    inbox_->queue.pop_front();
    return f;
  }

  void close() override {
    for (auto* box : {inbox_.get(), outbox_.get()}) {
      std::lock_guard lock(box->mu);
      box->closed = true;
      box->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Mailbox> inbox_;
  std::shared_ptr<Mailbox> outbox_;
};

// ---- TCP ------------------------------------------------------------------

[[noreturn]] void throw_errno(const std::string& what) {
  throw Error(ErrorCode::kChannelClosed, what + ": " + std::strerror(errno));
}

class TcpChannel final : public Channel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpChannel() override { close(); }

  void send(Frame frame) override {
    Bytes bytes = encode_frame(frame);
    std::lock_guard lock(send_mu_);
    const std::uint8_t* p = bytes.data();
    std::size_t left = bytes.size();
    while (left > 0) {
      ssize_t n = ::send(fd_, p, left, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw_errno("tcp send failed");
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
  }

  Frame recv() override {
    std::uint8_t header[kFrameHeaderBytes];
    read_exact(header, sizeof(header));
    std::uint32_t len = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                        (std::uint32_t{header[2]} << 8) | header[3];
    if (!known_type(header[4])) {
      throw Error(ErrorCode::kProtocol, "unknown frame type " + std::to_string(header[4]));
    }
    Frame f{static_cast<MsgType>(header[4]), Bytes(len)};
    read_exact(f.payload.data(), len);
    return f;
  }

  void close() override {
    int fd = fd_;
    if (fd >= 0 && closed_.exchange(true) == false) {
      ::shutdown(fd, SHUT_RDWR);
      ::close(fd);
    }
  }

 private:
  void read_exact(std::uint8_t* p, std::size_t len) {
    while (len > 0) {
      ssize_t n = ::recv(fd_, p, len, 0);
      if (n == 0) throw Error(ErrorCode::kChannelClosed, "peer closed the connection");
      if (n < 0) {
        if (errno == EINTR) continue;
        throw_errno("tcp recv failed");
      }
      p += n;
      len -= static_cast<std::size_t>(n);
    }
  }

  int fd_;
  std::atomic<bool> closed_{false};
  std::mutex send_mu_;
};

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::kConfig, "cannot resolve host " + host);
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

}  // namespace

Bytes encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxFramePayload) {
    throw Error(ErrorCode::kProtocol, "frame payload exceeds 4 GiB");
  }
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(frame.payload.size()));
  w.u8(static_cast<std::uint8_t>(frame.type));
  w.raw(frame.payload);
  return w.take();
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  std::uint32_t len = r.u32();
  std::uint8_t type = r.u8();
  if (!known_type(type)) throw Error(ErrorCode::kProtocol, "unknown frame type " + std::to_string(type));
  auto payload = r.raw(len);
  r.expect_done();
  return {static_cast<MsgType>(type), Bytes(payload.begin(), payload.end())};
}

Frame expect_frame(Channel& ch, MsgType type) {
  Frame f = ch.recv();
  if (f.type == type) return f;
  if (f.type == MsgType::kShutdown) {
    throw Error(ErrorCode::kShutdown, std::string("peer shut down while waiting for ") + msg_type_name(type));
  }
  throw Error(ErrorCode::kProtocol, std::string("expected ") + msg_type_name(type) + ", got " +
                                        msg_type_name(f.type));
}

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_in_process_pair() {
  auto a_to_b = std::make_shared<Mailbox>();
  auto b_to_a = std::make_shared<Mailbox>();
  return {std::make_unique<InProcessChannel>(b_to_a, a_to_b), std::make_unique<InProcessChannel>(a_to_b, b_to_a)};
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    throw Error(ErrorCode::kConfig, "cannot bind " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  }
  if (::listen(fd_, 64) != 0) throw_errno("listen");
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Channel> TcpListener::accept() {
  for (;;) {
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return std::make_unique<TcpChannel>(fd);
    if (errno != EINTR) throw_errno("accept");
  }
}

std::unique_ptr<Channel> tcp_connect(const std::string& host, std::uint16_t port, int timeout_ms) {
  sockaddr_in addr = resolve(host, port);
  auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw_errno("socket");
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      return std::make_unique<TcpChannel>(fd);
    }
    int err = errno;
    ::close(fd);
    if ((err != ECONNREFUSED && err != EINTR) || std::chrono::steady_clock::now() > deadline) {
      errno = err;
      throw_errno("connect " + host + ":" + std::to_string(port));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_tcp_loopback_pair() {
  TcpListener listener("127.0.0.1", 0);
  auto client = tcp_connect("127.0.0.1", listener.port());
  auto server = listener.accept();
  return {std::move(server), std::move(client)};
}

void RecordingChannel::send(Frame frame) {
  {
    std::lock_guard lock(mu_);
    sent_.push_back(frame.type);
  }
  inner_->send(std::move(frame));
}

Frame RecordingChannel::recv() {
  Frame f = inner_->recv();
  std::lock_guard lock(mu_);
  received_.push_back(f.type);
  return f;
}

std::vector<MsgType> RecordingChannel::sent_types() const {
  std::lock_guard lock(mu_);
  return sent_;
}

std::vector<MsgType> RecordingChannel::received_types() const {
  std::lock_guard lock(mu_);
  return received_;
}

Endpoint parse_endpoint(const std::string& text) {
  auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw Error(ErrorCode::kConfig, "endpoint must be host:port, got '" + text + "'");
  }
  Endpoint ep;
  ep.host = text.substr(0, colon);
  try {
    int port = std::stoi(text.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kConfig, "bad port in endpoint '" + text + "'");
  }
  return ep;
}

}  // namespace dvfl
