#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dml/metric_model.hpp"

namespace dml {

enum class MessageKind : std::uint8_t {
  gradient_push = 1,
  param_broadcast = 2,
  hello = 3,
  shutdown = 4,
  ack = 5,
};

const char* to_string(MessageKind kind);

/// Status carried in the rows field of an Ack (cols is 0, payload empty).
enum class AckStatus : std::uint32_t {
  ok = 0,
  shape_mismatch = 1,
};

/// Wire unit between a worker and the server.
struct Message {
  MessageKind kind = MessageKind::hello;
  std::uint32_t sender_id = 0;
  std::uint64_t step = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> payload;

  static Message gradient_push(std::uint32_t sender, std::uint64_t step, const MetricFactor& delta);
  static Message param_broadcast(std::uint32_t sender, std::uint64_t step, const MetricFactor& L);
  static Message hello(std::uint32_t sender);
  static Message shutdown(std::uint32_t sender);
  static Message ack(std::uint32_t sender, std::uint64_t step, AckStatus status);

  /// Payload as a rows x cols matrix.
  MetricFactor matrix() const;
  AckStatus ack_status() const { return static_cast<AckStatus>(rows); }

  friend bool operator==(const Message&, const Message&) = default;
};

/// Sender id the server uses for its own messages.
inline constexpr std::uint32_t kServerId = 0xFFFFFFFFu;

/// magic "DML1" | kind u8 | sender_id u32 | step u64 | rows u32 | cols u32 | payload_len u64
inline constexpr std::size_t kFrameHeaderBytes = 33;
/// Frames announcing a larger payload are treated as corrupt.
inline constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{1} << 30;

/// Throws ProtocolError if payload size differs from rows * cols, or if a
/// control message carries a payload.
std::vector<std::byte> encode(const Message& message);
void encode_into(const Message& message, std::vector<std::byte>& out);

struct Decoded {
  Message message;
  std::size_t consumed = 0;
};

/// Returned when the buffer ends before the frame does. `required` is the
/// total byte count needed (the header size until the header is complete).
struct NeedMoreBytes {
  std::size_t required = 0;
};

/// Decodes the frame at the start of `bytes`. Corruption (bad magic, unknown
/// kind, inconsistent lengths) throws ProtocolError; an incomplete frame
/// yields NeedMoreBytes.
std::variant<Decoded, NeedMoreBytes> decode(std::span<const std::byte> bytes);

/// Total frame length from a complete header. Throws ProtocolError on a bad header.
std::size_t frame_length(std::span<const std::byte> header);

/// Reassembles frames from arbitrarily split byte chunks.
class FrameReader {
 public:
  void feed(std::span<const std::byte> chunk);
  /// Next complete message, if one has fully arrived.
  std::optional<Message> next();
  std::size_t buffered() const noexcept { return buffer_.size() - offset_; }

 private:
  std::vector<std::byte> buffer_;
  std::size_t offset_ = 0;
};

/// Throws ProtocolError unless a matrix-carrying message has shape k x d.
void check_session_shape(const Message& message, std::size_t k, std::size_t d);

/// Ordered, reliable, framed exchange with one peer. One thread may send
/// while another receives; concurrent senders need external serialization.
class Connection {
 public:
  virtual ~Connection() = default;
  /// Blocks under backpressure. Throws TransportError once the connection is closed or broken.
  virtual void send(const Message& message) = 0;
  /// Blocks for the next message. Empty once the peer has closed and every
  /// message it sent has been delivered. Throws TransportError on a broken
  /// stream and ProtocolError on a corrupt frame.
  virtual std::optional<Message> receive() = 0;
  /// Closes both directions and wakes a blocked receive().
  virtual void close() = 0;
  virtual std::string describe() const = 0;
};

/// In-process connection pair. Each direction buffers up to `capacity` frames
/// and blocks the sender beyond that. Frames travel encoded, so the wire
/// format is exercised exactly as over a socket.
std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>> make_loopback_pair(std::size_t capacity = 64);

/// Listening TCP socket. Port 0 picks a free port.
class TcpListener {
 public:
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  /// Blocks for the next peer; empty after close().
  std::unique_ptr<Connection> accept();
  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Connects to host:port, retrying `attempts` times `retry_delay_ms` apart.
std::unique_ptr<Connection> tcp_connect(const std::string& host, std::uint16_t port, int attempts = 1,
                                        int retry_delay_ms = 200);

/// Splits "host:port". Throws ConfigError on malformed input.
std::pair<std::string, std::uint16_t> parse_address(const std::string& address);

}  // namespace dml
