#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "glove.hpp"

using namespace tactwin;

namespace {

PressureFrame random_field(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PressureFrame f;
  for (int i = 0; i < 25; ++i) f.values.push_back(u(rng));
  return f;
}

}  // namespace

TEST_CASE("piezo readout reference points") {
  const PiezoModel m;
  CHECK(piezo_readout(0.0, m) == 512);
  CHECK(piezo_readout(1.0, m) == 930);
  CHECK(piezo_readout(1.0, m) == static_cast<int>(std::lround(10.0 / 11.0 * 1023.0)));
  CHECK_THROWS_AS(piezo_readout(1.01, m), Error);
  CHECK_THROWS_AS(piezo_readout(-0.01, m), Error);
  int prev = 0;
  for (int i = 0; i <= 1000; ++i) {
    const int c = piezo_readout(i / 1000.0, m);
    CHECK(c >= prev);
    prev = c;
  }
}

TEST_CASE("piezo model validation") {
  PiezoModel m;
  m.adc_bits = 7;
  CHECK_THROWS_AS(m.validate(), Error);
  m.adc_bits = 16;
  CHECK_NOTHROW(m.validate());
  m.k = 0.0;
  CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("scan equals the cellwise readout") {
  const PiezoModel m;
  const auto cfg = ScanConfig::row_major({});
  std::mt19937_64 rng(11);
  for (int n = 0; n < 200; ++n) {
    const auto f = random_field(rng);
    std::vector<std::size_t> visits;
    const auto raw = tdma_scan(f, m, cfg, {}, &visits);
    REQUIRE(raw.counts.size() == 25);
    for (std::size_t i = 0; i < 25; ++i) CHECK(raw.counts[i] == piezo_readout(f.values[i], m));
    CHECK(visits.size() == 25);
  }
  const auto zero = tdma_scan(PressureFrame{std::vector<double>(25, 0.0), 0.0}, m, cfg);
  for (auto c : zero.counts) CHECK(c == 512);
}

TEST_CASE("scan order visits every slot once") {
  auto cfg = ScanConfig::row_major({});
  std::vector<std::size_t> visits;
  tdma_scan(PressureFrame{std::vector<double>(25, 0.5), 0.0}, PiezoModel{}, cfg, {}, &visits);
  for (std::size_t i = 0; i < 25; ++i) CHECK(visits[i] == i);
  cfg.order.pop_back();
  CHECK_THROWS_AS(cfg.validate({}), Error);
  cfg.order.push_back({0, 0});
  CHECK_THROWS_AS(cfg.validate({}), Error);
}

TEST_CASE("normalize inverts the scan within the quantization bound") {
  const PiezoModel m;
  const double bound = quantization_bound(m);
  CHECK(bound > 0.0);
  CHECK(bound < 0.01);
  // Exhaustive over a fine pressure sweep.
  double worst = 0.0;
  for (int i = 0; i <= 100000; ++i) {
    const double p = i / 100000.0;
    const double back = invert_count(piezo_readout(p, m), m);
    worst = std::max(worst, std::abs(back - p));
  }
  CHECK(worst <= bound);

  RawFrame raw{std::vector<std::uint16_t>(25, 512), 10, 0.0};
  raw.counts[3] = 1023;
  raw.counts[4] = 100;
  const auto cal = normalize(raw, m);
  CHECK(cal.frame.values[0] <= bound);
  CHECK(cal.frame.values[3] == 1.0);
  CHECK(cal.saturated[3]);
  CHECK(cal.frame.values[4] == 0.0);
  CHECK(cal.saturated[4]);
  CHECK_FALSE(cal.saturated[0]);
  CHECK(cal.any_saturated);
}

TEST_CASE("grasp envelope and synthesis") {
  const auto layout = default_layout();
  GraspScenario s;
  CHECK(grasp_envelope(s, 0.0) == 0.0);
  CHECK(grasp_envelope(s, s.start_ms + s.onset_ms + 10.0) == 1.0);
  CHECK(grasp_envelope(s, s.end_ms() + 1.0) == 0.0);

  const double hold_t = s.start_ms + s.onset_ms + s.hold_ms / 2;
  const auto f = synth_pressure(s, hold_t, layout, 3);
  for (Region r : {Region::Thumb, Region::Index, Region::Middle, Region::Ring, Region::Pinky}) {
    CHECK(f.values[layout.sensors_in(r).front()] > 0.0);
  }
  for (auto i : layout.sensors_in(Region::Palm)) CHECK(f.values[i] > 0.0);

  const auto before = synth_pressure(s, 0.0, layout, 3);
  for (double v : before.values) CHECK(v == 0.0);

  GraspScenario half = s;
  half.grip_strength = 0.5;
  const auto h = synth_pressure(half, hold_t, layout, 3);
  const auto tmpl = default_template(ObjectKind::Ball, layout);
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK(h.values[i] == doctest::Approx(0.5 * f.values[i]).epsilon(1e-15));
    CHECK(f.values[i] == doctest::Approx(tmpl.weights[i]).epsilon(1e-15));
  }
}

TEST_CASE("object templates follow their described shapes") {
  const auto layout = default_layout();
  auto tip = [&](ObjectKind o, Region r) { return default_template(o, layout).weights[layout.sensors_in(r).front()]; };
  auto palm = [&](ObjectKind o) {
    double s = 0.0;
    for (auto i : layout.sensors_in(Region::Palm)) s += default_template(o, layout).weights[i];
    return s / 10.0;
  };
  CHECK(tip(ObjectKind::Book, Region::Thumb) > 0.5);
  CHECK(palm(ObjectKind::Book) > 0.5);
  CHECK(tip(ObjectKind::Glass, Region::Ring) < tip(ObjectKind::Glass, Region::Middle));
  CHECK(tip(ObjectKind::Glass, Region::Pinky) < 0.2);
  CHECK(palm(ObjectKind::Glass) < palm(ObjectKind::Ball));
  for (double w : default_template(ObjectKind::TeddyBear, layout).weights) CHECK(w <= 0.45);
}

TEST_CASE("noise is deterministic per seed and stays in range") {
  const auto layout = default_layout();
  GraspScenario s;
  s.noise_sigma = 0.1;
  const double t = 900.0;
  const auto a = synth_pressure(s, t, layout, 42);
  const auto b = synth_pressure(s, t, layout, 42);
  const auto c = synth_pressure(s, t, layout, 43);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  CHECK(a.valid_for(layout.grid()));
  const auto quiet = synth_pressure(s, 0.0, layout, 42);
  for (double v : quiet.values) CHECK(v == 0.0);
}

TEST_CASE("template files round trip") {
  const auto tmpl = default_template(ObjectKind::Bottle, default_layout());
  std::istringstream in(template_to_text(tmpl));
  CHECK(parse_template(in).weights == tmpl.weights);
  std::istringstream bad("0,1.5\n");
  CHECK_THROWS_AS(parse_template(bad), Error);
}

TEST_CASE("simulator replays deterministically") {
  const auto layout = default_layout();
  GraspScenario s;
  s.noise_sigma = 0.05;
  auto make = [&] {
    return GloveSimulator(s, default_template(s.object, layout), PiezoModel{}, ScanConfig::row_major({}), 9);
  };
  auto g1 = make();
  auto g2 = make();
  for (int i = 0; i < 300; ++i) {
    const auto a = g1.next();
    const auto b = g2.next();
    CHECK(a.raw.counts == b.raw.counts);
    CHECK(a.truth.timestamp_ms == doctest::Approx(i * 10.0));
  }
}
