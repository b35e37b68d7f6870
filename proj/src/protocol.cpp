#include "dml/protocol.hpp"

#include <cstdio>
#include <cstring>
#include <string>

#include "binary_io.hpp"

namespace dml {
namespace {

constexpr char kFrameMagic[5] = "DML1";

bool is_matrix_kind(MessageKind kind) {
  return kind == MessageKind::gradient_push || kind == MessageKind::param_broadcast;
}

MessageKind checked_kind(std::uint8_t byte) {
  if (byte < 1 || byte > 5) {
    char hex[8];
    std::snprintf(hex, sizeof(hex), "0x%02X", byte);
    throw ProtocolError(std::string("unknown message kind byte ") + hex);
  }
  return static_cast<MessageKind>(byte);
}

Message matrix_message(MessageKind kind, std::uint32_t sender, std::uint64_t step, const MetricFactor& m) {
  Message msg;
  msg.kind = kind;
  msg.sender_id = sender;
  msg.step = step;
  msg.rows = static_cast<std::uint32_t>(m.rows());
  msg.cols = static_cast<std::uint32_t>(m.cols());
  msg.payload.assign(m.values().begin(), m.values().end());
  return msg;
}

}  // namespace

const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::gradient_push: return "GradientPush";
    case MessageKind::param_broadcast: return "ParamBroadcast";
    case MessageKind::hello: return "Hello";
    case MessageKind::shutdown: return "Shutdown";
    case MessageKind::ack: return "Ack";
  }
  return "?";
}

Message Message::gradient_push(std::uint32_t sender, std::uint64_t step, const MetricFactor& delta) {
  return matrix_message(MessageKind::gradient_push, sender, step, delta);
}

Message Message::param_broadcast(std::uint32_t sender, std::uint64_t step, const MetricFactor& L) {
  return matrix_message(MessageKind::param_broadcast, sender, step, L);
}

Message Message::hello(std::uint32_t sender) { return Message{MessageKind::hello, sender, 0, 0, 0, {}}; }

Message Message::shutdown(std::uint32_t sender) { return Message{MessageKind::shutdown, sender, 0, 0, 0, {}}; }

Message Message::ack(std::uint32_t sender, std::uint64_t step, AckStatus status) {
  return Message{MessageKind::ack, sender, step, static_cast<std::uint32_t>(status), 0, {}};
}

MetricFactor Message::matrix() const { return MetricFactor(rows, cols, payload); }

void encode_into(const Message& message, std::vector<std::byte>& out) {
  const std::uint64_t cells = std::uint64_t{message.rows} * message.cols;
  if (message.payload.size() != cells) {
    throw ProtocolError(std::string(to_string(message.kind)) + " payload has " +
                        std::to_string(message.payload.size()) + " floats but shape " +
                        std::to_string(message.rows) + "x" + std::to_string(message.cols));
  }
  if (!is_matrix_kind(message.kind) && !message.payload.empty()) {
    throw ProtocolError(std::string(to_string(message.kind)) + " must not carry a payload");
  }
  checked_kind(static_cast<std::uint8_t>(message.kind));
  const std::uint64_t payload_len = 4 * cells;
  out.reserve(out.size() + kFrameHeaderBytes + payload_len);
  detail::put_magic(out, kFrameMagic);
  detail::put_u8(out, static_cast<std::uint8_t>(message.kind));
  detail::put_le<std::uint32_t>(out, message.sender_id);
  detail::put_le<std::uint64_t>(out, message.step);
  detail::put_le<std::uint32_t>(out, message.rows);
  detail::put_le<std::uint32_t>(out, message.cols);
  detail::put_le<std::uint64_t>(out, payload_len);
  for (const float v : message.payload) detail::put_f32(out, v);
}

std::vector<std::byte> encode(const Message& message) {
  std::vector<std::byte> out;
  encode_into(message, out);
  return out;
}

std::size_t frame_length(std::span<const std::byte> header) {
  if (header.size() < kFrameHeaderBytes) throw ProtocolError("frame header incomplete");
  if (!detail::has_magic(header, kFrameMagic)) throw ProtocolError("bad frame magic, expected DML1");
  const MessageKind kind = checked_kind(std::to_integer<std::uint8_t>(header[4]));
  const std::uint64_t rows = detail::get_le<std::uint32_t>(header, 17);
  const std::uint64_t cols = detail::get_le<std::uint32_t>(header, 21);
  const std::uint64_t payload_len = detail::get_le<std::uint64_t>(header, 25);
  if (payload_len != 4 * rows * cols) {
    throw ProtocolError("payload length " + std::to_string(payload_len) + " disagrees with shape " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (!is_matrix_kind(kind) && payload_len != 0) {
    throw ProtocolError(std::string(to_string(kind)) + " frame announces a payload");
  }
  if (payload_len > kMaxPayloadBytes) throw ProtocolError("payload length " + std::to_string(payload_len) + " exceeds limit");
  return kFrameHeaderBytes + static_cast<std::size_t>(payload_len);
}

std::variant<Decoded, NeedMoreBytes> decode(std::span<const std::byte> bytes) {
  // Reject a wrong magic as soon as the bytes that disagree are present.
  for (std::size_t i = 0; i < 4 && i < bytes.size(); ++i) {
    if (bytes[i] != static_cast<std::byte>(kFrameMagic[i])) throw ProtocolError("bad frame magic, expected DML1");
  }
  if (bytes.size() < kFrameHeaderBytes) return NeedMoreBytes{kFrameHeaderBytes};
  const std::size_t total = frame_length(bytes);
  if (bytes.size() < total) return NeedMoreBytes{total};

  Message msg;
  msg.kind = static_cast<MessageKind>(std::to_integer<std::uint8_t>(bytes[4]));
  msg.sender_id = detail::get_le<std::uint32_t>(bytes, 5);
  msg.step = detail::get_le<std::uint64_t>(bytes, 9);
  msg.rows = detail::get_le<std::uint32_t>(bytes, 17);
  msg.cols = detail::get_le<std::uint32_t>(bytes, 21);
  msg.payload.resize(std::size_t{msg.rows} * msg.cols);
  std::size_t offset = kFrameHeaderBytes;
  for (float& v : msg.payload) {
    v = detail::get_f32(bytes, offset);
    offset += 4;
  }
  return Decoded{std::move(msg), total};
}

void FrameReader::feed(std::span<const std::byte> chunk) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
}

std::optional<Message> FrameReader::next() {
  const std::span<const std::byte> pending(buffer_.data() + offset_, buffer_.size() - offset_);
  auto result = decode(pending);
  if (std::holds_alternative<NeedMoreBytes>(result)) {
    if (offset_ > 0) {
      buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
      offset_ = 0;
    }
    return std::nullopt;
  }
  auto& decoded = std::get<Decoded>(result);
  offset_ += decoded.consumed;
  return std::move(decoded.message);
}

void check_session_shape(const Message& message, std::size_t k, std::size_t d) {
  if (!is_matrix_kind(message.kind)) return;
  if (message.rows != k || message.cols != d) {
    throw ProtocolError(std::string(to_string(message.kind)) + " from " + std::to_string(message.sender_id) +
                        " has shape " + std::to_string(message.rows) + "x" + std::to_string(message.cols) +
                        ", session is " + std::to_string(k) + "x" + std::to_string(d));
  }
}

}  // namespace dml
