#include <random>
#include <sstream>
#include <string>

#include "doctest.h"
#include "transport.hpp"

using namespace tactwin;

TEST_CASE("crc check value") {
  const std::string v = "123456789";
  const std::vector<std::uint8_t> bytes(v.begin(), v.end());
  CHECK(crc16_ccitt_false(bytes) == 0x29B1);
  CHECK(crc16_ccitt_false({}) == 0xFFFF);
}

TEST_CASE("packet round trip and framing") {
  const Packet p{PacketType::MotorCommand, 7, {1, 2, 3}};
  const auto bytes = encode_packet(p);
  REQUIRE(bytes.size() == 3 + kPacketOverhead);
  CHECK(bytes[0] == kPacketMagic);
  CHECK(bytes[3] == 3);
  const auto back = decode_packet(bytes);
  REQUIRE(std::holds_alternative<Packet>(back));
  CHECK(std::get<Packet>(back) == p);

  Packet big{PacketType::Config, 0, std::vector<std::uint8_t>(kMaxPayload + 1)};
  CHECK_THROWS_AS(encode_packet(big), Error);
}

TEST_CASE("decode errors") {
  auto bytes = encode_packet({PacketType::SensorFrame, 1, {9, 9}});
  auto bad_magic = bytes;
  bad_magic[0] = 0x5A;
  CHECK(std::get<DecodeError>(decode_packet(bad_magic)) == DecodeError::BadMagic);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK(std::get<DecodeError>(decode_packet(truncated)) == DecodeError::LengthMismatch);
  auto crc = bytes;
  crc[4] ^= 0x01;
  CHECK(std::get<DecodeError>(decode_packet(crc)) == DecodeError::CrcFailure);
  Packet unknown{PacketType::Ack, 0, {}};
  auto u = encode_packet(unknown);
  u[1] = 0x7F;
  const std::uint16_t c = crc16_ccitt_false(std::span<const std::uint8_t>(u.data(), u.size() - 2));
  u[u.size() - 2] = static_cast<std::uint8_t>(c >> 8);
  u[u.size() - 1] = static_cast<std::uint8_t>(c & 0xFF);
  CHECK(std::get<DecodeError>(decode_packet(u)) == DecodeError::UnknownType);
}

TEST_CASE("every single-bit flip of a reference packet is rejected") {
  const auto ref = encode_packet({PacketType::MotorCommand, 42, motor_command_payload(MotorCommand{{{0, 1.0}, {5, 0.5}}})});
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < ref.size() * 8; ++i) {
    auto b = ref;
    b[i / 8] ^= static_cast<std::uint8_t>(1u << (i % 8));
    rejected += std::holds_alternative<DecodeError>(decode_packet(b));
  }
  CHECK(rejected == ref.size() * 8);
}

TEST_CASE("payload helpers") {
  RawFrame raw{std::vector<std::uint16_t>(25, 0), 10, 0.0};
  raw.counts[0] = 1023;
  raw.counts[1] = 512;
  const auto payload = sensor_frame_payload(raw);
  REQUIRE(payload.size() == 25);
  CHECK(payload[0] == 255);
  const auto counts = sensor_counts_from_payload(payload, 10);
  CHECK(counts[0] == doctest::Approx(1023.0));
  CHECK(std::abs(counts[1] - 512.0) <= 1023.0 / 255.0 / 2.0 + 1e-9);
  CHECK_THROWS_AS(sensor_counts_from_payload(std::vector<std::uint8_t>(24), 10), Error);

  const MotorCommand cmd{{{2, 1.0}, {4, 0.0}}};
  const auto back = motor_command_from_payload(motor_command_payload(cmd));
  CHECK(back.active_motors() == std::vector<int>{2, 4});
  CHECK(back.activations[0].intensity == 1.0);
  CHECK_THROWS_AS(motor_command_from_payload(std::vector<std::uint8_t>{2, 0, 255}), Error);
}

TEST_CASE("channel delivery fraction under loss") {
  ChannelConfig cfg;
  cfg.loss_prob = 0.3;
  cfg.seed = 99;
  Channel ch(cfg);
  const int n = 10000;
  std::size_t delivered = 0;
  for (int i = 0; i < n; ++i) {
    ch.send(encode_packet({PacketType::SensorFrame, static_cast<std::uint8_t>(i), {}}), i * 10.0);
    delivered += ch.poll(i * 10.0).size();
  }
  delivered += ch.drain().size();
  const double frac = static_cast<double>(delivered) / n;
  CHECK(frac >= 0.68);
  CHECK(frac <= 0.72);
  const auto stats = link_stats(ch.trace());
  CHECK(stats.sent == static_cast<std::size_t>(n));
  CHECK(stats.delivered == delivered);
  CHECK(stats.dropped + stats.delivered == stats.sent);
  CHECK(stats.in_flight == 0);
  CHECK(stats.mean_latency_ms == doctest::Approx(30.0).epsilon(0.02));
}

TEST_CASE("channel latency bounds and ordering") {
  ChannelConfig cfg;
  cfg.loss_prob = 0.0;
  Channel ch(cfg);
  for (int i = 0; i < 100; ++i) {
    const auto out = ch.send({1, 2}, i * 1.0);
    CHECK(out.deliver_at_ms >= i + 25.0);
    CHECK(out.deliver_at_ms <= i + 35.0);
  }
  double last = 0.0;
  for (const auto& d : ch.drain()) {
    CHECK(d.deliver_ms >= last);
    last = d.deliver_ms;
  }
  ChannelConfig bad;
  bad.loss_prob = 1.5;
  CHECK_THROWS_AS(Channel{bad}, Error);
}

TEST_CASE("reordering shows up in the trace") {
  ChannelConfig cfg;
  cfg.loss_prob = 0.0;
  cfg.jitter_ms = 0.0;
  cfg.reorder_prob = 0.5;
  Channel ch(cfg);
  for (int i = 0; i < 200; ++i) ch.send({0}, i * 2.0);
  ch.drain();
  const auto stats = link_stats(ch.trace());
  CHECK(stats.reordered > 0);
  CHECK(stats.delivered == 200);
}

TEST_CASE("trace text round trip") {
  Channel ch(ChannelConfig{});
  for (int i = 0; i < 50; ++i) ch.send({static_cast<std::uint8_t>(i)}, i * 3.5);
  ch.drain();
  const auto text = trace_to_text(ch.trace());
  std::istringstream in(text);
  CHECK(parse_trace(in) == ch.trace());
  std::istringstream bad("1.0,teleported,3\n");
  CHECK_THROWS_AS(parse_trace(bad), Error);
}

TEST_CASE("sequence tracker detects gaps across wraparound") {
  SequenceTracker t;
  CHECK(t.observe(254));
  CHECK(t.observe(255));
  CHECK(t.observe(2));
  CHECK(t.missing() == std::vector<std::uint8_t>{0, 1});
  CHECK(t.observe(0));
  CHECK_FALSE(t.observe(0));
  CHECK(t.missing() == std::vector<std::uint8_t>{1});
  CHECK(t.received() == 4);
}
