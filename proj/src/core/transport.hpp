#pragma once

// Packet framing for the glove <-> patch link and a seeded discrete-event
// model of the lossy radio channel between them.
//
// Wire format: [0xA5, type, seq, len, payload..., crc_hi, crc_lo] where the
// CRC is CRC-16/CCITT-FALSE over every preceding byte.

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "model.hpp"

namespace tactwin {

inline constexpr std::uint8_t kPacketMagic = 0xA5;
inline constexpr std::size_t kMaxPayload = 250;
inline constexpr std::size_t kPacketOverhead = 6;  // 4 header + 2 CRC

enum class PacketType : std::uint8_t {
  SensorFrame = 0x01,
  MotorCommand = 0x02,
  Ack = 0x03,
  Config = 0x04,
};

struct Packet {
  PacketType type = PacketType::Ack;
  std::uint8_t seq = 0;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const Packet&, const Packet&) = default;
};

enum class DecodeError { BadMagic, LengthMismatch, CrcFailure, UnknownType };

const char* decode_error_name(DecodeError e) noexcept;

std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> bytes) noexcept;

// Throws Encoding when the payload exceeds kMaxPayload.
std::vector<std::uint8_t> encode_packet(const Packet& p);
std::variant<Packet, DecodeError> decode_packet(std::span<const std::uint8_t> bytes);

// SensorFrame payload: one byte per sensor, counts rescaled to 8 bits.
std::vector<std::uint8_t> sensor_frame_payload(const RawFrame& raw);
// Back to (fractional) counts at `adc_bits`. Throws Parse on a bad length.
std::vector<double> sensor_counts_from_payload(std::span<const std::uint8_t> payload,
                                               unsigned adc_bits, std::size_t sensors = 25);

// MotorCommand payload: [M, (id, intensity byte) x M].
std::vector<std::uint8_t> motor_command_payload(const MotorCommand& cmd);
MotorCommand motor_command_from_payload(std::span<const std::uint8_t> payload,
                                        double duration_ms = kDefaultStimulusMs);

struct ChannelConfig {
  double loss_prob = 0.02;
  double latency_ms = 30.0;
  double jitter_ms = 5.0;
  double reorder_prob = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class LinkEvent { Sent, Delivered, Dropped, Reordered };

const char* link_event_name(LinkEvent e) noexcept;

struct TraceEvent {
  double t_ms = 0.0;
  LinkEvent event = LinkEvent::Sent;
  std::uint8_t seq = 0;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct SendOutcome {
  bool dropped = false;
  double deliver_at_ms = 0.0;
  std::uint64_t id = 0;
};

struct Delivery {
  std::uint64_t id = 0;
  std::uint8_t seq = 0;
  double sent_ms = 0.0;
  double deliver_ms = 0.0;
  std::vector<std::uint8_t> bytes;
};

// Single-threaded discrete-event channel on a caller-supplied virtual clock.
class Channel {
 public:
  explicit Channel(ChannelConfig cfg);

  // Drop with loss_prob; otherwise schedule delivery at
  // now + latency + U(-jitter, +jitter) (never before now). With
  // reorder_prob the packet swaps delivery times with the newest packet
  // still in flight.
  SendOutcome send(std::vector<std::uint8_t> bytes, double now_ms);

  // Packets due at or before now_ms, in delivery order.
  std::vector<Delivery> poll(double now_ms);
  std::vector<Delivery> drain();

  std::size_t in_flight() const noexcept { return in_flight_.size(); }
  std::optional<double> next_delivery_ms() const;
  const std::vector<TraceEvent>& trace() const noexcept { return trace_; }
  const ChannelConfig& config() const noexcept { return cfg_; }

 private:
  ChannelConfig cfg_;
  std::mt19937_64 rng_;
  std::uint64_t next_id_ = 0;
  std::map<std::uint64_t, Delivery> in_flight_;  // keyed by id
  std::optional<std::uint64_t> newest_;
  std::vector<TraceEvent> trace_;
};

struct LinkStats {
  std::size_t sent = 0;
  std::size_t delivered = 0;
  std::size_t dropped = 0;
  std::size_t reordered = 0;
  std::size_t in_flight = 0;  // sent - delivered - dropped
  double mean_latency_ms = 0.0;

  friend bool operator==(const LinkStats&, const LinkStats&) = default;
};

// Deliveries are matched to the oldest outstanding send with the same seq.
LinkStats link_stats(std::span<const TraceEvent> trace);

// `t_ms,event,seq` lines.
std::string trace_to_text(std::span<const TraceEvent> trace);
std::vector<TraceEvent> parse_trace(std::istream& in);

// Receiver-side gap detection over the wrapping 8-bit sequence number.
class SequenceTracker {
 public:
  // Returns false for a duplicate or stale packet.
  bool observe(std::uint8_t seq);
  // Sequence numbers skipped and not (yet) seen, in order of expectation.
  std::vector<std::uint8_t> missing() const;
  std::size_t received() const noexcept { return received_; }

 private:
  std::optional<std::int64_t> highest_;  // unwrapped
  std::set<std::int64_t> missing_;
  std::size_t received_ = 0;
};

}  // namespace tactwin
