#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <mutex>
#include <string>
#include <thread>

#include "dml/bounded_queue.hpp"
#include "dml/protocol.hpp"

namespace dml {
namespace {

using Frame = std::vector<std::byte>;

struct LoopbackChannel {
  explicit LoopbackChannel(std::size_t capacity) : frames(capacity) {}
  BoundedQueue<Frame> frames;
};

class LoopbackConnection final : public Connection {
 public:
  LoopbackConnection(std::shared_ptr<LoopbackChannel> outgoing, std::shared_ptr<LoopbackChannel> incoming,
                     std::string name)
      : outgoing_(std::move(outgoing)), incoming_(std::move(incoming)), name_(std::move(name)) {}

  ~LoopbackConnection() override { close(); }

  void send(const Message& message) override {
    if (!outgoing_->frames.push(encode(message))) throw TransportError(name_ + ": connection closed");
  }

  std::optional<Message> receive() override {
    auto frame = incoming_->frames.pop();
    if (!frame) return std::nullopt;
    auto result = decode(*frame);
    if (!std::holds_alternative<Decoded>(result)) throw ProtocolError(name_ + ": truncated frame");
    return std::move(std::get<Decoded>(result).message);
  }

  // Closing ends both directions. Frames already queued toward the peer are
  // still delivered before it sees end-of-stream.
  void close() override {
    outgoing_->frames.close();
    incoming_->frames.close();
  }

  std::string describe() const override { return name_; }

 private:
  std::shared_ptr<LoopbackChannel> outgoing_;
  std::shared_ptr<LoopbackChannel> incoming_;
  std::string name_;
};

class TcpConnection final : public Connection {
 public:
  TcpConnection(int fd, std::string peer) : fd_(fd), peer_(std::move(peer)) {
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }

  ~TcpConnection() override {
    close();
    ::close(fd_);
  }

  void send(const Message& message) override {
    const Frame frame = encode(message);
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(peer_ + ": send failed: " + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::optional<Message> receive() override {
    std::array<std::byte, 64 * 1024> chunk{};
    while (true) {
      if (auto message = reader_.next()) return message;
      const ssize_t n = ::recv(fd_, chunk.data(), chunk.size(), 0);
      if (n == 0) {
        if (reader_.buffered() != 0) throw TransportError(peer_ + ": stream ended inside a frame");
        return std::nullopt;
      }
      if (n < 0) {
        if (errno == EINTR) continue;
        if (closed_.load()) return std::nullopt;
        throw TransportError(peer_ + ": receive failed: " + std::strerror(errno));
      }
      reader_.feed(std::span<const std::byte>(chunk.data(), static_cast<std::size_t>(n)));
    }
  }

  void close() override {
    if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
  }

  std::string describe() const override { return peer_; }

 private:
  int fd_;
  std::string peer_;
  FrameReader reader_;
  std::atomic<bool> closed_{false};
};

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* result = nullptr;
  const std::string service = std::to_string(port);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &result);
  if (rc != 0) throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  return result;
}

}  // namespace

std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>> make_loopback_pair(std::size_t capacity) {
  auto a_to_b = std::make_shared<LoopbackChannel>(capacity);
  auto b_to_a = std::make_shared<LoopbackChannel>(capacity);
  return {std::make_unique<LoopbackConnection>(a_to_b, b_to_a, "loopback:a"),
          std::make_unique<LoopbackConnection>(b_to_a, a_to_b, "loopback:b")};
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  addrinfo* info = resolve(host, port, true);
  fd_ = ::socket(info->ai_family, info->ai_socktype, info->ai_protocol);
  if (fd_ < 0) {
    ::freeaddrinfo(info);
    throw TransportError(std::string("socket: ") + std::strerror(errno));
  }
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd_, info->ai_addr, info->ai_addrlen) != 0 || ::listen(fd_, 64) != 0) {
    const std::string reason = std::strerror(errno);
    ::freeaddrinfo(info);
    ::close(fd_);
    throw TransportError("cannot listen on " + host + ":" + std::to_string(port) + ": " + reason);
  }
  ::freeaddrinfo(info);
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() {
  close();
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Connection> TcpListener::accept() {
  while (true) {
    sockaddr_in peer{};
    socklen_t len = sizeof(peer);
    const int fd = ::accept(fd_, reinterpret_cast<sockaddr*>(&peer), &len);
    if (fd >= 0) {
      char text[INET_ADDRSTRLEN] = {};
      ::inet_ntop(AF_INET, &peer.sin_addr, text, sizeof(text));
      return std::make_unique<TcpConnection>(fd, std::string(text) + ":" + std::to_string(ntohs(peer.sin_port)));
    }
    if (errno == EINTR) continue;
    return nullptr;
  }
}

void TcpListener::close() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

std::unique_ptr<Connection> tcp_connect(const std::string& host, std::uint16_t port, int attempts,
                                        int retry_delay_ms) {
  std::string last_error;
  for (int attempt = 0; attempt < std::max(1, attempts); ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(retry_delay_ms));
    addrinfo* info = resolve(host, port, false);
    const int fd = ::socket(info->ai_family, info->ai_socktype, info->ai_protocol);
    if (fd >= 0 && ::connect(fd, info->ai_addr, info->ai_addrlen) == 0) {
      ::freeaddrinfo(info);
      return std::make_unique<TcpConnection>(fd, host + ":" + std::to_string(port));
    }
    last_error = std::strerror(errno);
    if (fd >= 0) ::close(fd);
    ::freeaddrinfo(info);
  }
  throw TransportError("cannot connect to " + host + ":" + std::to_string(port) + ": " + last_error);
}

std::pair<std::string, std::uint16_t> parse_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 == address.size()) {
    throw ConfigError("address '" + address + "' is not host:port");
  }
  const std::string port_text = address.substr(colon + 1);
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(port_text, &used);
    if (used != port_text.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("address '" + address + "' has a non-numeric port");
  }
  if (port > 65535) throw ConfigError("port " + port_text + " out of range");
  return {address.substr(0, colon), static_cast<std::uint16_t>(port)};
}

}  // namespace dml
