#include <cmath>

#include "doctest.h"
#include "pipeline.hpp"

using namespace tactwin;

TEST_CASE("bounded queue evicts the oldest item") {
  BoundedQueue<int> q(3);
  CHECK(q.push(1));
  CHECK(q.push(2));
  CHECK(q.push(3));
  CHECK_FALSE(q.push(4));
  CHECK(q.size() == 3);
  CHECK(q.evicted() == 1);
  CHECK(*q.pop() == 2);
  CHECK(q.high_water() == 3);
  BoundedQueue<int> zero(0);
  CHECK(zero.capacity() == 1);
}

TEST_CASE("sixty seconds at 100 Hz keeps every queue bounded") {
  const auto layout = default_layout();
  PipelineConfig cfg;
  cfg.loop = true;
  cfg.scenario.noise_sigma = 0.02;
  cfg.channel.loss_prob = 0.05;
  cfg.channel.reorder_prob = 0.1;
  Pipeline p(cfg, layout, parse_mode_spec("finger:6", layout).map);
  std::size_t fresh = 0;
  for (int i = 0; i < 6000; ++i) {
    const auto tick = p.step();
    fresh += tick.frame_fresh;
    CHECK(tick.in_flight <= 2 * static_cast<std::size_t>(std::ceil((cfg.channel.latency_ms + cfg.channel.jitter_ms) /
                                                                     p.period_ms()) + 1));
  }
  CHECK(p.now_ms() == doctest::Approx(60000.0));
  CHECK(p.max_inbox_depth() <= cfg.queue_capacity);
  CHECK(p.inbox_evictions() == 0);
  CHECK(p.max_in_flight() < 20);
  CHECK(fresh > 3600);
  const auto link = p.link();
  CHECK(link.sent == 12000);
}

TEST_CASE("a clean link reproduces the glove frame after the latency") {
  const auto layout = default_layout();
  PipelineConfig cfg;
  cfg.channel.loss_prob = 0.0;
  cfg.channel.jitter_ms = 0.0;
  cfg.channel.latency_ms = 30.0;
  Pipeline p(cfg, layout, parse_mode_spec("palm:3", layout).map);
  std::vector<PipelineTick> ticks;
  for (int i = 0; i < 200; ++i) ticks.push_back(p.step());
  // Frames travel as 8-bit codes, so both roundings add up.
  PiezoModel eight = cfg.piezo;
  eight.adc_bits = 8;
  const double bound = quantization_bound(cfg.piezo) + quantization_bound(eight);
  for (std::size_t i = 3; i < ticks.size(); ++i) {
    CHECK(ticks[i].frame_fresh);
    CHECK(ticks[i].received.timestamp_ms == ticks[i - 3].t_ms);
    for (std::size_t s = 0; s < 25; ++s) {
      CHECK(std::abs(ticks[i].received.values[s] - ticks[i - 3].truth.values[s]) <= bound);
    }
    CHECK(ticks[i].motor_state.active_motors() == ticks[i - 3].sent_command.active_motors());
  }
  CHECK(p.missing_seqs().empty());
}
