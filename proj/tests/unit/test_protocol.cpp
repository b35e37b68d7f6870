#include <doctest.h>

#include <cstring>
#include <random>
#include <thread>

#include "dml/error.hpp"
#include "dml/protocol.hpp"
#include "golden.hpp"

using namespace dml;

namespace {

Message random_message(std::mt19937_64& rng) {
  Message m;
  m.kind = static_cast<MessageKind>(1 + rng() % 5);
  m.sender_id = static_cast<std::uint32_t>(rng());
  m.step = rng();
  if (m.kind == MessageKind::gradient_push || m.kind == MessageKind::param_broadcast) {
    m.rows = static_cast<std::uint32_t>(1 + rng() % 9);
    m.cols = static_cast<std::uint32_t>(1 + rng() % 17);
    m.payload.resize(std::size_t{m.rows} * m.cols);
    for (auto& v : m.payload) {
      // Arbitrary bit patterns, NaNs and denormals included.
      const auto bits = static_cast<std::uint32_t>(rng());
      std::memcpy(&v, &bits, sizeof v);
    }
  } else if (m.kind == MessageKind::ack) {
    m.rows = static_cast<std::uint32_t>(rng() % 2);
  }
  return m;
}

bool identical(const Message& a, const Message& b) {
  return a.kind == b.kind && a.sender_id == b.sender_id && a.step == b.step && a.rows == b.rows &&
         a.cols == b.cols && a.payload.size() == b.payload.size() &&
         std::memcmp(a.payload.data(), b.payload.data(), a.payload.size() * sizeof(float)) == 0;
}

Message decode_complete(std::span<const std::byte> bytes) {
  auto result = decode(bytes);
  REQUIRE(std::holds_alternative<Decoded>(result));
  CHECK(std::get<Decoded>(result).consumed == bytes.size());
  return std::get<Decoded>(result).message;
}

}  // namespace

TEST_CASE("frame sizes") {
  CHECK(encode(Message::hello(3)).size() == 33);
  const auto push = encode(Message::gradient_push(1, 1, Matrix<float>(2, 3)));
  CHECK(push.size() == 57);
  CHECK(frame_length(std::span(push).first(kFrameHeaderBytes)) == 57);
}

TEST_CASE("golden frames for every kind") {
  for (const auto& fixture : golden::fixtures()) {
    CAPTURE(fixture.name);
    CHECK(encode(fixture.message) == fixture.frame);
    CHECK(identical(decode_complete(fixture.frame), fixture.message));
  }
  CHECK(encode(Message::ack(kServerId, 5, AckStatus::shape_mismatch)) == golden::fixtures()[4].frame);
  CHECK(Message::ack(1, 1, AckStatus::ok).ack_status() == AckStatus::ok);
}

TEST_CASE("randomized round trip") {
  std::mt19937_64 rng(77);
  std::vector<std::byte> buffer;
  for (int i = 0; i < 1000; ++i) {
    const Message m = random_message(rng);
    const auto frame = encode(m);
    CHECK(frame.size() == kFrameHeaderBytes + 4 * m.payload.size());
    CHECK(identical(decode_complete(frame), m));
    encode_into(m, buffer);
  }
  // The concatenated stream decodes back in order.
  std::mt19937_64 replay(77);
  std::size_t offset = 0;
  for (int i = 0; i < 1000; ++i) {
    auto result = decode(std::span(buffer).subspan(offset));
    REQUIRE(std::holds_alternative<Decoded>(result));
    CHECK(identical(std::get<Decoded>(result).message, random_message(replay)));
    offset += std::get<Decoded>(result).consumed;
  }
  CHECK(offset == buffer.size());
}

TEST_CASE("corrupt frames are protocol errors") {
  auto frame = encode(Message::hello(1));
  frame[0] = std::byte{'X'};
  CHECK_THROWS_AS(decode(frame), ProtocolError);

  frame = encode(Message::hello(1));
  frame[4] = std::byte{0xFF};
  try {
    decode(frame);
    FAIL("expected a protocol error");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("0xFF") != std::string::npos);
  }

  // payload_len disagreeing with rows * cols
  frame = encode(Message::gradient_push(1, 1, Matrix<float>(2, 3)));
  frame[25] = std::byte{20};
  CHECK_THROWS_AS(decode(frame), ProtocolError);

  Message bad = Message::gradient_push(1, 1, Matrix<float>(2, 3));
  bad.payload.pop_back();
  CHECK_THROWS_AS(encode(bad), ProtocolError);
  Message chatty = Message::hello(1);
  chatty.payload = {1.0f};
  CHECK_THROWS_AS(encode(chatty), ProtocolError);
}

TEST_CASE("truncated frames ask for more bytes at every split point") {
  std::mt19937_64 rng(5);
  const Message m = Message::gradient_push(4, 9, Matrix<float>(3, 5, 0.25f));
  const auto frame = encode(m);
  for (std::size_t cut = 0; cut < frame.size(); ++cut) {
    auto partial = decode(std::span(frame).first(cut));
    REQUIRE(std::holds_alternative<NeedMoreBytes>(partial));
    CHECK(std::get<NeedMoreBytes>(partial).required == (cut < kFrameHeaderBytes ? kFrameHeaderBytes : frame.size()));

    FrameReader reader;
    reader.feed(std::span(frame).first(cut));
    CHECK_FALSE(reader.next().has_value());
    reader.feed(std::span(frame).subspan(cut));
    const auto got = reader.next();
    REQUIRE(got.has_value());
    CHECK(identical(*got, m));
    CHECK(reader.buffered() == 0);
  }
  // Byte-at-a-time feeding of a stream of several frames.
  FrameReader reader;
  std::vector<Message> sent;
  std::vector<Message> received;
  for (int i = 0; i < 20; ++i) {
    sent.push_back(random_message(rng));
    for (std::byte b : encode(sent.back())) {
      reader.feed(std::span(&b, 1));
      while (auto next = reader.next()) received.push_back(*next);
    }
  }
  REQUIRE(received.size() == sent.size());
  for (std::size_t i = 0; i < sent.size(); ++i) CHECK(identical(received[i], sent[i]));
}

TEST_CASE("session shape check") {
  CHECK_NOTHROW(check_session_shape(Message::gradient_push(1, 1, Matrix<float>(2, 3)), 2, 3));
  CHECK_THROWS_AS(check_session_shape(Message::gradient_push(1, 1, Matrix<float>(3, 2)), 2, 3), ProtocolError);
  CHECK_NOTHROW(check_session_shape(Message::hello(1), 2, 3));
}

TEST_CASE("loopback connection preserves order and signals close") {
  auto [a, b] = make_loopback_pair(4);
  std::thread producer([&] {
    for (std::uint64_t i = 0; i < 100; ++i) {
      auto m = Message::gradient_push(1, i, Matrix<float>(1, 2, static_cast<float>(i)));
      a->send(m);
    }
    a->close();
  });
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto m = b->receive();
    REQUIRE(m.has_value());
    CHECK(m->step == i);
    CHECK(m->payload[1] == static_cast<float>(i));
  }
  CHECK_FALSE(b->receive().has_value());
  producer.join();
  CHECK_THROWS_AS(a->send(Message::hello(1)), TransportError);
}

TEST_CASE("TCP connection round trip") {
  TcpListener listener("127.0.0.1", 0);
  REQUIRE(listener.port() != 0);
  std::unique_ptr<Connection> server_side;
  std::thread acceptor([&] { server_side = listener.accept(); });
  auto client = tcp_connect("127.0.0.1", listener.port(), 5, 50);
  acceptor.join();
  REQUIRE(server_side);

  std::mt19937_64 rng(9);
  std::vector<Message> sent;
  for (int i = 0; i < 50; ++i) sent.push_back(random_message(rng));
  std::thread writer([&] {
    for (const auto& m : sent) client->send(m);
  });
  for (const auto& expected : sent) {
    const auto got = server_side->receive();
    REQUIRE(got.has_value());
    CHECK(identical(*got, expected));
  }
  writer.join();
  server_side->send(Message::shutdown(kServerId));
  const auto reply = client->receive();
  REQUIRE(reply.has_value());
  CHECK(reply->kind == MessageKind::shutdown);
  client->close();
  CHECK_FALSE(server_side->receive().has_value());
  listener.close();
}

TEST_CASE("address parsing") {
  CHECK(parse_address("127.0.0.1:7000") == std::pair<std::string, std::uint16_t>{"127.0.0.1", 7000});
  CHECK_THROWS_AS(parse_address("localhost"), ConfigError);
  CHECK_THROWS_AS(parse_address("host:99999"), ConfigError);
  CHECK_THROWS_AS(parse_address("host:abc"), ConfigError);
}
