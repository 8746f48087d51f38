#pragma once

// Full-rate streaming path: glove scan -> glove-side compression/encoding ->
// framed packets over the simulated link -> patch-side decode and motor state.

#include <cstddef>
#include <deque>
#include <optional>

#include "feedback.hpp"
#include "glove.hpp"
#include "transport.hpp"

namespace tactwin {

// FIFO with a hard capacity; a push into a full queue evicts the oldest item.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity ? capacity : 1) {}

  // Returns false when an older item had to be evicted.
  bool push(T item) {
    bool kept_all = true;
    if (items_.size() == capacity_) {
      items_.pop_front();
      ++evicted_;
      kept_all = false;
    }
    items_.push_back(std::move(item));
    high_water_ = std::max(high_water_, items_.size());
    return kept_all;
  }

  std::optional<T> pop() {
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    return item;
  }

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t high_water() const noexcept { return high_water_; }
  std::size_t evicted() const noexcept { return evicted_; }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  std::size_t high_water_ = 0;
  std::size_t evicted_ = 0;
};

struct PipelineConfig {
  GraspScenario scenario;
  PiezoModel piezo;
  double scan_rate_hz = 100.0;
  std::uint64_t seed = 1;
  EncoderConfig encoder;
  ChannelConfig channel;
  std::size_t queue_capacity = 64;
  bool loop = false;          // restart the grasp after it ends
  double loop_gap_ms = 500.0;  // idle time between looped grasps
};

struct PipelineTick {
  double t_ms = 0.0;
  PressureFrame truth;
  RawFrame raw;
  std::vector<double> averages;
  MotorCommand sent_command;
  PressureFrame received;     // latest frame reconstructed from 8-bit packets
  MotorCommand motor_state;   // what the patches currently drive
  bool frame_fresh = false;
  std::size_t inbox_high_water = 0;  // receiver queue depth before draining
  std::size_t in_flight = 0;
};

class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, SensorLayout layout, RegionMap map,
           std::optional<PressureTemplate> tmpl = std::nullopt);

  PipelineTick step();

  double now_ms() const noexcept { return now_ms_; }
  double period_ms() const noexcept { return 1000.0 / cfg_.scan_rate_hz; }
  LinkStats link() const { return link_stats(channel_.trace()); }
  std::size_t max_inbox_depth() const noexcept { return inbox_.high_water(); }
  std::size_t max_in_flight() const noexcept { return max_in_flight_; }
  std::size_t inbox_evictions() const noexcept { return inbox_.evicted(); }
  std::vector<std::uint8_t> missing_seqs() const { return tracker_.missing(); }
  const RegionMap& map() const noexcept { return map_; }
  const PipelineConfig& config() const noexcept { return cfg_; }

  void set_map(RegionMap map);
  void set_encoder(EncoderConfig enc);

 private:
  void receive(const Delivery& d, PipelineTick& tick);

  PipelineConfig cfg_;
  SensorLayout layout_;
  RegionMap map_;
  GloveSimulator glove_;
  Channel channel_;
  BoundedQueue<Delivery> inbox_;
  SequenceTracker tracker_;
  double now_ms_ = 0.0;
  std::uint8_t next_seq_ = 0;
  std::optional<std::vector<double>> prev_averages_;
  std::optional<std::uint8_t> last_frame_seq_;
  std::optional<std::uint8_t> last_command_seq_;
  PressureFrame received_;
  MotorCommand motor_state_;
  std::size_t max_in_flight_ = 0;
};

}  // namespace tactwin
