#include "glove.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace tactwin {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Finger weights: tip, middle, proximal. Palm weights: first and second half
// of the palm sensors.
struct ObjectShape {
  double finger[5][3];
  double palm[2];
};

const ObjectShape& shape_of(ObjectKind o) {
  static const ObjectShape ball{
      {{0.90, 0.60, 0.40}, {0.85, 0.55, 0.45}, {0.85, 0.55, 0.45}, {0.85, 0.55, 0.45}, {0.80, 0.50, 0.40}},
      {0.80, 0.70}};
  static const ObjectShape book{
      {{0.85, 0.70, 0.60}, {0.20, 0.15, 0.10}, {0.20, 0.15, 0.10}, {0.15, 0.10, 0.10}, {0.10, 0.10, 0.05}},
      {0.75, 0.75}};
  static const ObjectShape glass{
      {{0.85, 0.60, 0.50}, {0.80, 0.60, 0.45}, {0.70, 0.50, 0.40}, {0.10, 0.05, 0.00}, {0.00, 0.00, 0.00}},
      {0.10, 0.05}};
  static const ObjectShape bottle{
      {{0.40, 0.35, 0.30}, {0.35, 0.30, 0.30}, {0.35, 0.30, 0.30}, {0.35, 0.30, 0.30}, {0.30, 0.25, 0.25}},
      {0.60, 0.55}};
  static const ObjectShape teddy{
      {{0.25, 0.20, 0.20}, {0.25, 0.20, 0.20}, {0.25, 0.20, 0.20}, {0.25, 0.20, 0.20}, {0.20, 0.15, 0.15}},
      {0.30, 0.25}};
  switch (o) {
    case ObjectKind::Ball: return ball;
    case ObjectKind::Book: return book;
    case ObjectKind::Glass: return glass;
    case ObjectKind::Bottle: return bottle;
    case ObjectKind::TeddyBear: return teddy;
  }
  return ball;
}

}  // namespace

std::string_view object_name(ObjectKind o) noexcept {
  switch (o) {
    case ObjectKind::Ball: return "ball";
    case ObjectKind::Book: return "book";
    case ObjectKind::Glass: return "glass";
    case ObjectKind::Bottle: return "bottle";
    case ObjectKind::TeddyBear: return "teddy";
  }
  return "?";
}

std::optional<ObjectKind> parse_object(std::string_view name) noexcept {
  std::string n = lower(name);
  if (n == "teddybear" || n == "teddy-bear" || n == "teddy_bear") n = "teddy";
  if (n == "water-bottle" || n == "waterbottle") n = "bottle";
  for (ObjectKind o : kAllObjects) {
    if (object_name(o) == n) return o;
  }
  return std::nullopt;
}

void GraspScenario::validate() const {
  if (!(grip_strength >= 0.0 && grip_strength <= 1.0)) {
    throw Error(ErrorCode::Config, "grip strength must lie in [0, 1]");
  }
  if (start_ms < 0 || onset_ms < 0 || hold_ms < 0 || release_ms < 0) {
    throw Error(ErrorCode::Config, "grasp durations must be non-negative");
  }
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::Config, "noise sigma must be non-negative");
}

double grasp_envelope(const GraspScenario& s, double t) noexcept {
  const double up = s.start_ms;
  const double hold = up + s.onset_ms;
  const double down = hold + s.hold_ms;
  const double end = down + s.release_ms;
  if (t < up || t >= end) return 0.0;
  if (t < hold) return s.onset_ms > 0 ? (t - up) / s.onset_ms : 1.0;
  if (t < down) return 1.0;
  return s.release_ms > 0 ? (end - t) / s.release_ms : 0.0;
}

PressureTemplate default_template(ObjectKind object, const SensorLayout& layout) {
  const ObjectShape& shape = shape_of(object);
  PressureTemplate t;
  t.weights.assign(layout.size(), 0.0);
  for (std::size_t f = 0; f < 5; ++f) {
    const auto sensors = layout.sensors_in(kAllRegions[f]);
    for (std::size_t i = 0; i < sensors.size(); ++i) {
      t.weights[sensors[i]] = shape.finger[f][std::min<std::size_t>(i, 2)];
    }
  }
  const auto palm = layout.sensors_in(Region::Palm);
  for (std::size_t i = 0; i < palm.size(); ++i) {
    t.weights[palm[i]] = shape.palm[2 * i < palm.size() ? 0 : 1];
  }
  return t;
}

PressureTemplate parse_template(std::istream& in, const SensorGrid& grid) {
  std::vector<std::optional<double>> seen(grid.total());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ls(line);
    std::size_t index = 0;
    char comma = 0;
    double w = 0;
    if (!(ls >> index >> comma >> w) || comma != ',') {
      throw Error(ErrorCode::Parse, "template line " + std::to_string(lineno) + ": expected index,weight");
    }
    if (index >= grid.total()) throw Error(ErrorCode::OutOfRange, "template index out of range");
    if (!(w >= 0.0 && w <= 1.0)) throw Error(ErrorCode::Validation, "template weight outside [0, 1]");
    if (seen[index]) throw Error(ErrorCode::Validation, "template repeats sensor " + std::to_string(index));
    seen[index] = w;
  }
  PressureTemplate t;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw Error(ErrorCode::Validation, "template misses sensor " + std::to_string(i));
    t.weights.push_back(*seen[i]);
  }
  return t;
}

PressureTemplate load_template(const std::string& path, const SensorGrid& grid) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open template file " + path);
  return parse_template(in, grid);
}

std::string template_to_text(const PressureTemplate& t) {
  std::ostringstream out;
  for (std::size_t i = 0; i < t.weights.size(); ++i) out << i << ',' << t.weights[i] << '\n';
  return out.str();
}

PressureFrame synth_pressure(const GraspScenario& scenario, const PressureTemplate& tmpl,
                             double t_ms, std::uint64_t seed) {
  if (t_ms < 0) throw Error(ErrorCode::Precondition, "synth_pressure needs t >= 0");
  PressureFrame f;
  f.timestamp_ms = t_ms;
  f.values.assign(tmpl.weights.size(), 0.0);
  const double env = grasp_envelope(scenario, t_ms);
  if (env <= 0.0) return f;

  const double scale = scenario.grip_strength * env;
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = tmpl.weights[i] * scale;

  if (scenario.noise_sigma > 0.0) {
    const auto tick = static_cast<std::uint64_t>(std::llround(t_ms * 1000.0));
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(tick)));
    std::normal_distribution<double> noise(0.0, scenario.noise_sigma);
    for (double& v : f.values) v += noise(rng);
  }
  for (double& v : f.values) v = clamp_unit(v);
  return f;
}

PressureFrame synth_pressure(const GraspScenario& scenario, double t_ms,
                             const SensorLayout& layout, std::uint64_t seed) {
  return synth_pressure(scenario, default_template(scenario.object, layout), t_ms, seed);
}

void PiezoModel::validate() const {
  if (!(r0 > 0 && k > 0 && r_ref > 0 && vcc > 0)) {
    throw Error(ErrorCode::Config, "piezo model parameters must be positive");
  }
  if (adc_bits < 8 || adc_bits > 16) throw Error(ErrorCode::Config, "ADC resolution must be 8..16 bits");
}

double divider_ratio(double pressure, const PiezoModel& m) noexcept {
  const double r = m.r0 / (1.0 + m.k * pressure);
  return m.r_ref / (m.r_ref + r);
}

std::uint16_t piezo_readout(double pressure, const PiezoModel& m) {
  if (!(pressure >= 0.0 && pressure <= 1.0)) {
    throw Error(ErrorCode::Precondition, "pressure outside [0, 1]");
  }
  return static_cast<std::uint16_t>(std::lround(divider_ratio(pressure, m) * m.max_count()));
}

double quantization_bound(const PiezoModel& m) {
  // The inverse p(u) = (r0 u / (r_ref (1 - u)) - 1) / k is convex and
  // increasing, so its slope is largest at the top of the rounding interval.
  const double half_step = 0.5 / m.max_count();
  const double u_top = divider_ratio(1.0, m) + half_step;
  if (u_top >= 1.0) return 1.0;
  const double slope = m.r0 / (m.k * m.r_ref * (1.0 - u_top) * (1.0 - u_top));
  return std::min(1.0, slope * half_step);
}

ScanConfig ScanConfig::row_major(const SensorGrid& grid, double rate_hz) {
  ScanConfig cfg;
  cfg.scan_rate_hz = rate_hz;
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) cfg.order.emplace_back(r, c);
  }
  return cfg;
}

void ScanConfig::validate(const SensorGrid& grid) const {
  if (!(scan_rate_hz > 0)) throw Error(ErrorCode::Config, "scan rate must be positive");
  if (order.size() != grid.total()) throw Error(ErrorCode::Config, "scan order must cover every intersection");
  std::vector<bool> hit(grid.total(), false);
  for (const auto& [r, c] : order) {
    const std::size_t i = frame_index(r, c, grid);
    if (hit[i]) throw Error(ErrorCode::Config, "scan order visits an intersection twice");
    hit[i] = true;
  }
}

RawFrame tdma_scan(const PressureFrame& field, const PiezoModel& model, const ScanConfig& cfg,
                   const SensorGrid& grid, std::vector<std::size_t>* visits) {
  if (field.values.size() != grid.total()) {
    throw Error(ErrorCode::Precondition, "pressure field does not match the sensor grid");
  }
  RawFrame raw;
  raw.adc_bits = model.adc_bits;
  raw.timestamp_ms = field.timestamp_ms;
  raw.counts.assign(grid.total(), 0);
  if (visits) visits->clear();
  // One slot per intersection: drive the row, sample the column.
  for (const auto& [row, col] : cfg.order) {
    const std::size_t i = frame_index(row, col, grid);
    raw.counts[i] = piezo_readout(field.values[i], model);
    if (visits) visits->push_back(i);
  }
  return raw;
}

double invert_count(double count, const PiezoModel& m, bool* saturated) {
  const double lo = static_cast<double>(piezo_readout(0.0, m));
  const double hi = static_cast<double>(piezo_readout(1.0, m));
  bool sat = false;
  double p;
  if (count < lo) {
    sat = true;
    p = 0.0;
  } else if (count > hi) {
    sat = true;
    p = 1.0;
  } else {
    const double u = count / m.max_count();
    p = (m.r0 * u / (m.r_ref * (1.0 - u)) - 1.0) / m.k;
  }
  if (saturated) *saturated = sat;
  return clamp_unit(p);
}

CalibratedFrame normalize(const RawFrame& raw, const PiezoModel& m) {
  CalibratedFrame out;
  out.frame.timestamp_ms = raw.timestamp_ms;
  out.frame.values.reserve(raw.counts.size());
  out.saturated.reserve(raw.counts.size());
  for (std::uint16_t c : raw.counts) {
    if (c > raw.max_count()) throw Error(ErrorCode::Precondition, "count beyond ADC range");
    bool sat = false;
    out.frame.values.push_back(invert_count(c, m, &sat));
    out.saturated.push_back(sat);
    out.any_saturated = out.any_saturated || sat;
  }
  return out;
}

GloveSimulator::GloveSimulator(GraspScenario scenario, PressureTemplate tmpl, PiezoModel model,
                               ScanConfig scan, std::uint64_t seed, SensorGrid grid)
    : scenario_(scenario), tmpl_(std::move(tmpl)), model_(model), scan_(std::move(scan)),
      seed_(seed), grid_(grid) {
  scenario_.validate();
  model_.validate();
  scan_.validate(grid_);
  if (tmpl_.weights.size() != grid_.total()) {
    throw Error(ErrorCode::Config, "template size does not match the sensor grid");
  }
}

GloveSimulator::Sample GloveSimulator::next() {
  Sample s;
  s.truth = synth_pressure(scenario_, tmpl_, t_ms_, seed_);
  s.raw = tdma_scan(s.truth, model_, scan_, grid_);
  t_ms_ += scan_.period_ms();
  return s;
}

}  // namespace tactwin
