#pragma once

// Virtual sensing glove: grasp pressure synthesis, piezoresistive divider
// readout and the row-by-row (TDMA) scan of the sensor matrix.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "model.hpp"

namespace tactwin {

enum class ObjectKind : std::uint8_t { Ball, Book, Glass, Bottle, TeddyBear };

inline constexpr std::array<ObjectKind, 5> kAllObjects = {
    ObjectKind::Ball, ObjectKind::Book, ObjectKind::Glass, ObjectKind::Bottle,
    ObjectKind::TeddyBear};

std::string_view object_name(ObjectKind o) noexcept;
std::optional<ObjectKind> parse_object(std::string_view name) noexcept;

struct GraspScenario {
  ObjectKind object = ObjectKind::Ball;
  double grip_strength = 1.0;
  double start_ms = 200.0;    // contact begins
  double onset_ms = 300.0;    // ramp up
  double hold_ms = 1500.0;
  double release_ms = 300.0;  // ramp down
  double noise_sigma = 0.0;

  double end_ms() const noexcept { return start_ms + onset_ms + hold_ms + release_ms; }
  void validate() const;
};

// Trapezoidal contact envelope in [0, 1].
double grasp_envelope(const GraspScenario& s, double t_ms) noexcept;

struct PressureTemplate {
  std::vector<double> weights;  // one per sensor, each in [0, 1]
};

// Built-in template for an object, shaped by the layout's regions: each
// finger's lowest-index sensor is its tip.
PressureTemplate default_template(ObjectKind object, const SensorLayout& layout);

// `index,weight` per line.
PressureTemplate parse_template(std::istream& in, const SensorGrid& grid = {});
PressureTemplate load_template(const std::string& path, const SensorGrid& grid = {});
std::string template_to_text(const PressureTemplate& t);

PressureFrame synth_pressure(const GraspScenario& scenario, const PressureTemplate& tmpl,
                             double t_ms, std::uint64_t seed);
PressureFrame synth_pressure(const GraspScenario& scenario, double t_ms,
                             const SensorLayout& layout, std::uint64_t seed);

struct PiezoModel {
  double r0 = 1000.0;     // ohms at zero pressure
  double k = 9.0;         // sensitivity
  double r_ref = 1000.0;  // divider reference, ohms
  double vcc = 3.3;
  unsigned adc_bits = 10;

  std::uint32_t max_count() const noexcept { return (1u << adc_bits) - 1u; }
  void validate() const;
};

// v / vcc for a normalized pressure.
double divider_ratio(double pressure, const PiezoModel& m) noexcept;
std::uint16_t piezo_readout(double pressure, const PiezoModel& m);

// Worst-case |normalize(readout(p)) - p| over p in [0, 1].
double quantization_bound(const PiezoModel& m);

struct ScanConfig {
  double scan_rate_hz = 100.0;
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (row, col) slots

  static ScanConfig row_major(const SensorGrid& grid, double rate_hz = 100.0);
  double period_ms() const noexcept { return 1000.0 / scan_rate_hz; }
  void validate(const SensorGrid& grid) const;
};

// Samples each intersection once in `cfg.order`. `visits`, when given,
// receives the sensor index of each slot in the order sampled.
RawFrame tdma_scan(const PressureFrame& field, const PiezoModel& model, const ScanConfig& cfg,
                   const SensorGrid& grid = {}, std::vector<std::size_t>* visits = nullptr);

struct CalibratedFrame {
  PressureFrame frame;
  std::vector<bool> saturated;
  bool any_saturated = false;
};

// Inverse of the divider for a (possibly fractional) count. Counts beyond the
// model's readout range clamp to [0, 1] and set `saturated`.
double invert_count(double count, const PiezoModel& m, bool* saturated = nullptr);
CalibratedFrame normalize(const RawFrame& raw, const PiezoModel& m);

// Single-producer frame source.
class GloveSimulator {
 public:
  GloveSimulator(GraspScenario scenario, PressureTemplate tmpl, PiezoModel model,
                 ScanConfig scan, std::uint64_t seed, SensorGrid grid = {});

  struct Sample {
    PressureFrame truth;
    RawFrame raw;
  };

  Sample next();
  double now_ms() const noexcept { return t_ms_; }
  void restart(double t_ms = 0.0) noexcept { t_ms_ = t_ms; }
  const GraspScenario& scenario() const noexcept { return scenario_; }
  const PiezoModel& piezo() const noexcept { return model_; }
  const ScanConfig& scan() const noexcept { return scan_; }

 private:
  GraspScenario scenario_;
  PressureTemplate tmpl_;
  PiezoModel model_;
  ScanConfig scan_;
  std::uint64_t seed_;
  SensorGrid grid_;
  double t_ms_ = 0.0;
};

}  // namespace tactwin
