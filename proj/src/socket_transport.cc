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

#include "linkserve/socket_transport.h"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace linkserve {

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_le(const char* p, int bytes) {
  uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) {
    v = (v << 8) | static_cast<uint8_t>(p[i]);
  }
  return v;
}

std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

}  // namespace

FrameHeader header_for(const Chunk& chunk) {
  FrameHeader h;
  h.payload_id = static_cast<uint64_t>(chunk.payload_id);
  h.chunk_index = static_cast<uint32_t>(chunk.index);
  if (chunk.is_last) h.flags |= kFlagLastChunk;
  if (chunk.phase_class == PayloadClass::kDecode) h.flags |= kFlagDecodeClass;
  return h;
}

std::string encode_frame(const FrameHeader& header, std::string_view body) {
  const size_t length = kFrameHeaderBytes + body.size();
  if (length > kMaxFrameBytes) {
    throw ProtocolError("frame of " + std::to_string(length) + " bytes exceeds limit");
  }
  std::string out;
  out.reserve(4 + length);
  put_u32(out, static_cast<uint32_t>(length));
  put_u64(out, header.payload_id);
  put_u32(out, header.chunk_index);
  put_u32(out, header.flags);
  out.append(body);
  return out;
}

void FrameDecoder::feed(std::string_view bytes) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.append(bytes);
}

std::optional<Frame> FrameDecoder::next() {
  if (buffered() < 4) return std::nullopt;
  const char* p = buffer_.data() + offset_;
  const uint64_t length = get_le(p, 4);
  if (length < kFrameHeaderBytes || length > kMaxFrameBytes) {
    throw ProtocolError("bad frame length " + std::to_string(length));
  }
  if (buffered() < 4 + length) return std::nullopt;
  Frame f;
  f.header.payload_id = get_le(p + 4, 8);
  f.header.chunk_index = static_cast<uint32_t>(get_le(p + 12, 4));
  f.header.flags = static_cast<uint32_t>(get_le(p + 16, 4));
  f.body.assign(p + 4 + kFrameHeaderBytes, length - kFrameHeaderBytes);
  offset_ += 4 + length;
  // Compact once the consumed prefix dominates.
  if (offset_ > (1u << 20) && offset_ * 2 > buffer_.size()) {
    buffer_.erase(0, offset_);
    offset_ = 0;
  }
  return f;
}

Socket::Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

Socket::~Socket() { close(); }

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown_write() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void Socket::send_all(std::string_view bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(errno_text("send"));
    }
    bytes.remove_prefix(static_cast<size_t>(n));
  }
}

std::string Socket::receive_some(size_t max_bytes) {
  std::string buf(max_bytes, '\0');
  for (;;) {
    const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(errno_text("recv"));
    }
    buf.resize(static_cast<size_t>(n));
    return buf;
  }
}

Listener::Listener() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw ProtocolError(errno_text("socket"));
  socket_ = Socket(fd);
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw ProtocolError(errno_text("bind"));
  }
  if (::listen(fd, 8) != 0) throw ProtocolError(errno_text("listen"));
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Socket Listener::accept() {
  for (;;) {
    const int fd = ::accept(socket_.fd(), nullptr, nullptr);
    if (fd >= 0) {
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return Socket(fd);
    }
    if (errno != EINTR) throw ProtocolError(errno_text("accept"));
  }
}

Socket connect_loopback(uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw ProtocolError(errno_text("socket"));
  Socket s(fd);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw ProtocolError(errno_text("connect"));
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return s;
}

}  // namespace linkserve
