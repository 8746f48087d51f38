#include "transport.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace tactwin {

const char* decode_error_name(DecodeError e) noexcept {
  switch (e) {
    case DecodeError::BadMagic: return "BadMagic";
    case DecodeError::LengthMismatch: return "LengthMismatch";
    case DecodeError::CrcFailure: return "CrcFailure";
    case DecodeError::UnknownType: return "UnknownType";
  }
  return "?";
}

std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> bytes) noexcept {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t b : bytes) {
    crc ^= static_cast<std::uint16_t>(b) << 8;
    for (int i = 0; i < 8; ++i) {
      crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                           : static_cast<std::uint16_t>(crc << 1);
    }
  }
  return crc;
}

std::vector<std::uint8_t> encode_packet(const Packet& p) {
  if (p.payload.size() > kMaxPayload) {
    throw Error(ErrorCode::Encoding, "payload of " + std::to_string(p.payload.size()) +
                                         " bytes exceeds " + std::to_string(kMaxPayload));
  }
  std::vector<std::uint8_t> out;
  out.reserve(p.payload.size() + kPacketOverhead);
  out.push_back(kPacketMagic);
  out.push_back(static_cast<std::uint8_t>(p.type));
  out.push_back(p.seq);
  out.push_back(static_cast<std::uint8_t>(p.payload.size()));
  out.insert(out.end(), p.payload.begin(), p.payload.end());
  const std::uint16_t crc = crc16_ccitt_false(out);
  out.push_back(static_cast<std::uint8_t>(crc >> 8));
  out.push_back(static_cast<std::uint8_t>(crc & 0xFF));
  return out;
}

std::variant<Packet, DecodeError> decode_packet(std::span<const std::uint8_t> bytes) {
  if (!bytes.empty() && bytes[0] != kPacketMagic) return DecodeError::BadMagic;
  if (bytes.size() < kPacketOverhead) return DecodeError::LengthMismatch;
  const std::size_t len = bytes[3];
  if (len > kMaxPayload || bytes.size() != len + kPacketOverhead) return DecodeError::LengthMismatch;

  const std::size_t body = 4 + len;
  const std::uint16_t wire = static_cast<std::uint16_t>((bytes[body] << 8) | bytes[body + 1]);
  if (crc16_ccitt_false(bytes.first(body)) != wire) return DecodeError::CrcFailure;

  const std::uint8_t type = bytes[1];
  if (type < 0x01 || type > 0x04) return DecodeError::UnknownType;

  Packet p;
  p.type = static_cast<PacketType>(type);
  p.seq = bytes[2];
  p.payload.assign(bytes.begin() + 4, bytes.begin() + static_cast<std::ptrdiff_t>(body));
  return p;
}

std::vector<std::uint8_t> sensor_frame_payload(const RawFrame& raw) {
  if (raw.counts.size() > kMaxPayload) throw Error(ErrorCode::Encoding, "frame too large for one packet");
  const double max = raw.max_count();
  std::vector<std::uint8_t> out;
  out.reserve(raw.counts.size());
  for (std::uint16_t c : raw.counts) {
    out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0 / max)));
  }
  return out;
}

std::vector<double> sensor_counts_from_payload(std::span<const std::uint8_t> payload,
                                               unsigned adc_bits, std::size_t sensors) {
  if (payload.size() != sensors) {
    throw Error(ErrorCode::Parse, "sensor payload has " + std::to_string(payload.size()) +
                                      " bytes, expected " + std::to_string(sensors));
  }
  const double max = static_cast<double>((1u << adc_bits) - 1u);
  std::vector<double> counts;
  counts.reserve(payload.size());
  for (std::uint8_t b : payload) counts.push_back(b * max / 255.0);
  return counts;
}

std::vector<std::uint8_t> motor_command_payload(const MotorCommand& cmd) {
  if (cmd.activations.size() > (kMaxPayload - 1) / 2) {
    throw Error(ErrorCode::Encoding, "too many activations for one packet");
  }
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(cmd.activations.size()));
  for (const auto& a : cmd.activations) {
    if (a.motor_id < 0 || a.motor_id > 255) throw Error(ErrorCode::Encoding, "motor id does not fit a byte");
    out.push_back(static_cast<std::uint8_t>(a.motor_id));
    out.push_back(static_cast<std::uint8_t>(std::lround(clamp_unit(a.intensity) * 255.0)));
  }
  return out;
}

MotorCommand motor_command_from_payload(std::span<const std::uint8_t> payload, double duration_ms) {
  if (payload.empty()) throw Error(ErrorCode::Parse, "empty motor payload");
  const std::size_t m = payload[0];
  if (payload.size() != 1 + 2 * m) throw Error(ErrorCode::Parse, "motor payload length mismatch");
  MotorCommand cmd;
  cmd.duration_ms = duration_ms;
  std::vector<bool> seen(256, false);
  for (std::size_t i = 0; i < m; ++i) {
    const std::uint8_t id = payload[1 + 2 * i];
    if (seen[id]) throw Error(ErrorCode::Parse, "motor payload repeats an id");
    seen[id] = true;
    cmd.activations.push_back({id, payload[2 + 2 * i] / 255.0});
  }
  return cmd;
}

void ChannelConfig::validate() const {
  if (!(loss_prob >= 0.0 && loss_prob < 1.0)) throw Error(ErrorCode::Config, "loss probability must lie in [0, 1)");
  if (!(reorder_prob >= 0.0 && reorder_prob < 1.0)) {
    throw Error(ErrorCode::Config, "reorder probability must lie in [0, 1)");
  }
  if (!(latency_ms >= 0.0 && jitter_ms >= 0.0)) throw Error(ErrorCode::Config, "latency and jitter must be >= 0");
}

const char* link_event_name(LinkEvent e) noexcept {
  switch (e) {
    case LinkEvent::Sent: return "sent";
    case LinkEvent::Delivered: return "delivered";
    case LinkEvent::Dropped: return "dropped";
    case LinkEvent::Reordered: return "reordered";
  }
  return "?";
}

Channel::Channel(ChannelConfig cfg) : cfg_(cfg), rng_(cfg.seed) { cfg_.validate(); }

SendOutcome Channel::send(std::vector<std::uint8_t> bytes, double now_ms) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Fixed draw order per packet keeps traces reproducible.
  const double loss_draw = unit(rng_);
  const double jitter_draw = unit(rng_);
  const double reorder_draw = unit(rng_);

  const std::uint8_t seq = bytes.size() > 2 ? bytes[2] : 0;
  const std::uint64_t id = next_id_++;
  trace_.push_back({now_ms, LinkEvent::Sent, seq});
  if (loss_draw < cfg_.loss_prob) {
    trace_.push_back({now_ms, LinkEvent::Dropped, seq});
    return {true, 0.0, id};
  }
  const double delay = std::max(0.0, cfg_.latency_ms + (2.0 * jitter_draw - 1.0) * cfg_.jitter_ms);
  Delivery d{id, seq, now_ms, now_ms + delay, std::move(bytes)};

  if (reorder_draw < cfg_.reorder_prob && newest_) {
    if (auto it = in_flight_.find(*newest_); it != in_flight_.end()) {
      std::swap(it->second.deliver_ms, d.deliver_ms);
      // A packet can never arrive before it was sent.
      d.deliver_ms = std::max(d.deliver_ms, now_ms);
      trace_.push_back({now_ms, LinkEvent::Reordered, seq});
    }
  }
  const double at = d.deliver_ms;
  in_flight_.emplace(id, std::move(d));
  newest_ = id;
  return {false, at, id};
}

std::vector<Delivery> Channel::poll(double now_ms) {
  std::vector<Delivery> due;
  for (auto it = in_flight_.begin(); it != in_flight_.end();) {
    if (it->second.deliver_ms <= now_ms) {
      due.push_back(std::move(it->second));
      it = in_flight_.erase(it);
    } else {
      ++it;
    }
  }
  std::sort(due.begin(), due.end(), [](const Delivery& a, const Delivery& b) {
    return a.deliver_ms != b.deliver_ms ? a.deliver_ms < b.deliver_ms : a.id < b.id;
  });
  for (const auto& d : due) trace_.push_back({d.deliver_ms, LinkEvent::Delivered, d.seq});
  return due;
}

std::vector<Delivery> Channel::drain() {
  return poll(std::numeric_limits<double>::infinity());
}

std::optional<double> Channel::next_delivery_ms() const {
  std::optional<double> best;
  for (const auto& [id, d] : in_flight_) {
    if (!best || d.deliver_ms < *best) best = d.deliver_ms;
  }
  return best;
}

LinkStats link_stats(std::span<const TraceEvent> trace) {
  LinkStats s;
  std::unordered_map<std::uint8_t, std::deque<double>> outstanding;
  double latency_sum = 0.0;
  for (const auto& e : trace) {
    switch (e.event) {
      case LinkEvent::Sent:
        ++s.sent;
        outstanding[e.seq].push_back(e.t_ms);
        break;
      case LinkEvent::Dropped:
        ++s.dropped;
        if (auto& q = outstanding[e.seq]; !q.empty()) q.pop_front();
        break;
      case LinkEvent::Delivered:
        ++s.delivered;
        if (auto& q = outstanding[e.seq]; !q.empty()) {
          latency_sum += e.t_ms - q.front();
          q.pop_front();
        }
        break;
      case LinkEvent::Reordered:
        ++s.reordered;
        break;
    }
  }
  s.in_flight = s.sent - s.delivered - s.dropped;
  s.mean_latency_ms = s.delivered ? latency_sum / static_cast<double>(s.delivered) : 0.0;
  return s;
}

std::string trace_to_text(std::span<const TraceEvent> trace) {
  std::string out;
  char buf[64];
  for (const auto& e : trace) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, e.t_ms);
    out.append(buf, end);
    out += ',';
    out += link_event_name(e.event);
    out += ',';
    out += std::to_string(e.seq);
    out += '\n';
  }
  return out;
}

std::vector<TraceEvent> parse_trace(std::istream& in) {
  std::vector<TraceEvent> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw Error(ErrorCode::Parse, "trace line " + std::to_string(lineno) + ": expected t_ms,event,seq");
    }
    TraceEvent e;
    const auto [p, ec] = std::from_chars(line.data(), line.data() + c1, e.t_ms);
    if (ec != std::errc{} || p != line.data() + c1) {
      throw Error(ErrorCode::Parse, "trace line " + std::to_string(lineno) + ": bad time");
    }
    const std::string name = line.substr(c1 + 1, c2 - c1 - 1);
    bool known = false;
    for (LinkEvent ev : {LinkEvent::Sent, LinkEvent::Delivered, LinkEvent::Dropped, LinkEvent::Reordered}) {
      if (name == link_event_name(ev)) {
        e.event = ev;
        known = true;
      }
    }
    if (!known) throw Error(ErrorCode::Parse, "trace line " + std::to_string(lineno) + ": unknown event");
    unsigned seq = 0;
    const auto [q, ec2] = std::from_chars(line.data() + c2 + 1, line.data() + line.size(), seq);
    if (ec2 != std::errc{} || q != line.data() + line.size() || seq > 255) {
      throw Error(ErrorCode::Parse, "trace line " + std::to_string(lineno) + ": bad seq");
    }
    e.seq = static_cast<std::uint8_t>(seq);
    out.push_back(e);
  }
  return out;
}

bool SequenceTracker::observe(std::uint8_t seq) {
  if (!highest_) {
    highest_ = seq;
    ++received_;
    return true;
  }
  const auto low = static_cast<std::uint8_t>(*highest_ & 0xFF);
  const auto d = static_cast<std::int8_t>(static_cast<std::uint8_t>(seq - low));
  if (d > 0) {
    for (std::int64_t s = *highest_ + 1; s < *highest_ + d; ++s) missing_.insert(s);
    *highest_ += d;
    ++received_;
    return true;
  }
  if (d < 0) {
    if (missing_.erase(*highest_ + d) > 0) {
      ++received_;
      return true;
    }
  }
  return false;
}

std::vector<std::uint8_t> SequenceTracker::missing() const {
  std::vector<std::uint8_t> out;
  out.reserve(missing_.size());
  for (std::int64_t s : missing_) out.push_back(static_cast<std::uint8_t>(s & 0xFF));
  return out;
}

}  // namespace tactwin
