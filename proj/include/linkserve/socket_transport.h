// Copyright 2026 The linkserve Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef LINKSERVE_SOCKET_TRANSPORT_H_
#define LINKSERVE_SOCKET_TRANSPORT_H_

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "linkserve/transport.h"

namespace linkserve {

// Wire format of one chunk:
//   u32 frame length (header + body), then a 16-byte header
//   { u64 payload_id, u32 chunk_index, u32 flags }, then the chunk bytes.
// Everything little-endian.
inline constexpr size_t kFrameHeaderBytes = 16;
inline constexpr uint32_t kFlagLastChunk = 1u << 0;
inline constexpr uint32_t kFlagDecodeClass = 1u << 1;
inline constexpr uint32_t kMaxFrameBytes = 64u << 20;

struct FrameHeader {
  uint64_t payload_id = 0;
  uint32_t chunk_index = 0;
  uint32_t flags = 0;

  bool is_last() const { return flags & kFlagLastChunk; }
  PayloadClass phase_class() const {
    return (flags & kFlagDecodeClass) ? PayloadClass::kDecode : PayloadClass::kPrefill;
  }
  bool operator==(const FrameHeader&) const = default;
};

struct Frame {
  FrameHeader header;
  std::string body;
};

FrameHeader header_for(const Chunk& chunk);
std::string encode_frame(const FrameHeader& header, std::string_view body);

// Incremental decoder for a byte stream of frames. Throws ProtocolError on a
// frame shorter than its header or longer than kMaxFrameBytes.
class FrameDecoder {
 public:
  void feed(std::string_view bytes);
  std::optional<Frame> next();
  size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::string buffer_;
  size_t offset_ = 0;
};

// Owned POSIX stream socket.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept;
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket();

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();
  // Half-closes the write side so the peer reads end of stream.
  void shutdown_write();

  // Throws ProtocolError when the connection breaks.
  void send_all(std::string_view bytes);
  // Empty result means orderly end of stream.
  std::string receive_some(size_t max_bytes = 1 << 16);

 private:
  int fd_ = -1;
};

// Loopback listener on an ephemeral port.
class Listener {
 public:
  Listener();
  uint16_t port() const { return port_; }
  Socket accept();

 private:
  Socket socket_;
  uint16_t port_ = 0;
};

Socket connect_loopback(uint16_t port);

// Unbounded multi-producer queue for message passing between workers.
template <typename T>
class Channel {
 public:
  void send(T value) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      items_.push_back(std::move(value));
    }
    cv_.notify_one();
  }

  // Blocks until a value arrives, the deadline passes, or the channel closes.
  std::optional<T> receive_until(std::chrono::steady_clock::time_point deadline) {
    std::unique_lock<std::mutex> lock(mu_);
    auto ready = [&] { return !items_.empty() || closed_; };
    if (deadline == std::chrono::steady_clock::time_point::max()) {
      cv_.wait(lock, ready);
    } else {
      cv_.wait_until(lock, deadline, ready);
    }
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    return value;
  }

  std::optional<T> receive() {
    return receive_until(std::chrono::steady_clock::time_point::max());
  }

  std::optional<T> try_receive() {
    std::lock_guard<std::mutex> lock(mu_);
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    return value;
  }

  void close() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard<std::mutex> lock(mu_);
    return closed_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  bool closed_ = false;
};

}  // namespace linkserve

#endif  // LINKSERVE_SOCKET_TRANSPORT_H_
