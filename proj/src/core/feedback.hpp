#pragma once

// Sensor-to-motor compression (region maps) and motor command encoders.

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "model.hpp"

namespace tactwin {

inline constexpr int kNoFeedback = -1;

class RegionMap {
 public:
  // Throws Validation when a sensor references a motor >= num_motors or a
  // motor has no sensors.
  RegionMap(std::string name, int num_motors, std::vector<int> assignment);

  const std::string& name() const noexcept { return name_; }
  int num_motors() const noexcept { return num_motors_; }
  std::size_t size() const noexcept { return assignment_.size(); }
  int motor_of(std::size_t sensor) const { return assignment_.at(sensor); }
  const std::vector<int>& assignment() const noexcept { return assignment_; }
  std::vector<std::size_t> sensors_of(int motor) const;

  friend bool operator==(const RegionMap&, const RegionMap&) = default;

 private:
  std::string name_;
  int num_motors_;
  std::vector<int> assignment_;
};

enum class Focus { FingerFocused, PalmFocused };

std::string_view focus_name(Focus f) noexcept;  // "finger" / "palm"

struct CompressionMode {
  Focus focus = Focus::FingerFocused;
  int num_motors = 6;
  RegionMap map;

  std::string label() const;  // e.g. "finger:6"
};

// The six built-in modes (finger/palm x 1/3/6 motors). Throws Config for
// any other motor count.
CompressionMode builtin_mode(Focus focus, int num_motors, const SensorLayout& layout);
std::vector<CompressionMode> builtin_modes(const SensorLayout& layout);

// "finger:6", "palm:3", ... Throws Config on anything else.
CompressionMode parse_mode_spec(std::string_view spec, const SensorLayout& layout);

// Mode file: `name=...`, `num_motors=N`, then `index,motor` lines where the
// motor is an integer or NF.
RegionMap parse_mode_file(std::istream& in, const SensorGrid& grid = {});
RegionMap load_mode_file(const std::string& path, const SensorGrid& grid = {});
std::string mode_to_text(const RegionMap& map);

// Mean pressure per motor; NoFeedback sensors are ignored.
std::vector<double> compress(const PressureFrame& frame, const RegionMap& map);

enum class EncoderKind { Binary, Proportional, Derivative };

std::string_view encoder_name(EncoderKind k) noexcept;  // binary / prop / deriv
std::optional<EncoderKind> parse_encoder(std::string_view name) noexcept;

struct EncoderConfig {
  EncoderKind kind = EncoderKind::Binary;
  double threshold = 0.5;
  double fixed_intensity = 1.0;
  double gain = 1.0;
  double dt_ms = 10.0;

  void validate() const;
};

MotorCommand encode(std::span<const double> averages, const EncoderConfig& cfg,
                    std::optional<std::span<const double>> prev = std::nullopt,
                    double duration_ms = kDefaultStimulusMs);

}  // namespace tactwin
