#include "pipeline.hpp"

#include <algorithm>

namespace tactwin {

namespace {

bool newer(std::uint8_t seq, const std::optional<std::uint8_t>& last) {
  if (!last) return true;
  return static_cast<std::int8_t>(static_cast<std::uint8_t>(seq - *last)) > 0;
}

}  // namespace

Pipeline::Pipeline(PipelineConfig cfg, SensorLayout layout, RegionMap map,
                   std::optional<PressureTemplate> tmpl)
    : cfg_(cfg),
      layout_(std::move(layout)),
      map_(std::move(map)),
      glove_(cfg.scenario, tmpl ? *tmpl : default_template(cfg.scenario.object, layout_), cfg.piezo,
             ScanConfig::row_major(layout_.grid(), cfg.scan_rate_hz), cfg.seed, layout_.grid()),
      channel_(cfg.channel),
      inbox_(cfg.queue_capacity) {
  cfg_.encoder.dt_ms = period_ms();
  cfg_.encoder.validate();
  if (map_.size() != layout_.size()) throw Error(ErrorCode::Config, "region map does not match the layout");
  received_.values.assign(layout_.size(), 0.0);
}

void Pipeline::set_map(RegionMap map) {
  if (map.size() != layout_.size()) throw Error(ErrorCode::Config, "region map does not match the layout");
  map_ = std::move(map);
  prev_averages_.reset();
}

void Pipeline::set_encoder(EncoderConfig enc) {
  enc.dt_ms = period_ms();
  enc.validate();
  cfg_.encoder = enc;
  prev_averages_.reset();
}

PipelineTick Pipeline::step() {
  if (cfg_.loop && glove_.now_ms() >= cfg_.scenario.end_ms() + cfg_.loop_gap_ms) glove_.restart();

  PipelineTick tick;
  tick.t_ms = now_ms_;
  auto sample = glove_.next();
  tick.truth = std::move(sample.truth);
  tick.truth.timestamp_ms = now_ms_;
  tick.raw = std::move(sample.raw);
  tick.raw.timestamp_ms = now_ms_;

  // Glove side: calibrate, compress, encode.
  const PressureFrame calibrated = normalize(tick.raw, cfg_.piezo).frame;
  tick.averages = compress(calibrated, map_);
  const std::vector<double>& prev = prev_averages_ ? *prev_averages_ : tick.averages;
  tick.sent_command = encode(tick.averages, cfg_.encoder, std::span<const double>(prev), period_ms());
  prev_averages_ = tick.averages;

  channel_.send(encode_packet({PacketType::SensorFrame, next_seq_++, sensor_frame_payload(tick.raw)}), now_ms_);
  channel_.send(encode_packet({PacketType::MotorCommand, next_seq_++, motor_command_payload(tick.sent_command)}),
                now_ms_);
  max_in_flight_ = std::max(max_in_flight_, channel_.in_flight());

  // Patch side.
  for (auto& d : channel_.poll(now_ms_)) inbox_.push(std::move(d));
  tick.inbox_high_water = inbox_.size();
  while (auto d = inbox_.pop()) receive(*d, tick);

  tick.received = received_;
  tick.motor_state = motor_state_;
  tick.in_flight = channel_.in_flight();
  now_ms_ += period_ms();
  return tick;
}

void Pipeline::receive(const Delivery& d, PipelineTick& tick) {
  const auto decoded = decode_packet(d.bytes);
  const Packet* p = std::get_if<Packet>(&decoded);
  if (!p) return;
  tracker_.observe(p->seq);
  if (p->type == PacketType::SensorFrame && newer(p->seq, last_frame_seq_)) {
    const auto counts = sensor_counts_from_payload(p->payload, cfg_.piezo.adc_bits, layout_.size());
    received_.timestamp_ms = d.sent_ms;
    for (std::size_t i = 0; i < counts.size(); ++i) received_.values[i] = invert_count(counts[i], cfg_.piezo);
    last_frame_seq_ = p->seq;
    tick.frame_fresh = true;
  } else if (p->type == PacketType::MotorCommand && newer(p->seq, last_command_seq_)) {
    motor_state_ = motor_command_from_payload(p->payload, period_ms());
    last_command_seq_ = p->seq;
  }
}

}  // namespace tactwin
