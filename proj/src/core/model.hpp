#pragma once

// Shared value types: sensor grid geometry, anatomical layout, frames and
// motor commands. Everything here is an immutable-by-convention value type.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "error.hpp"

namespace tactwin {

inline constexpr double kDefaultStimulusMs = 1000.0;

enum class Region : std::uint8_t { Thumb, Index, Middle, Ring, Pinky, Palm };

inline constexpr std::array<Region, 6> kAllRegions = {
    Region::Thumb, Region::Index, Region::Middle,
    Region::Ring,  Region::Pinky, Region::Palm};

std::string_view region_name(Region r) noexcept;
std::optional<Region> parse_region(std::string_view name) noexcept;

struct SensorGrid {
  std::size_t rows = 5;
  std::size_t cols = 5;

  std::size_t total() const noexcept { return rows * cols; }

  // Throws Config for an empty grid.
  static SensorGrid make(std::size_t rows, std::size_t cols);

  friend bool operator==(const SensorGrid&, const SensorGrid&) = default;
};

// Row-major index of an intersection. Throws OutOfRange outside the grid.
std::size_t frame_index(std::size_t row, std::size_t col, const SensorGrid& grid);

// Inverse of frame_index: (row, col).
std::pair<std::size_t, std::size_t> cell_of(std::size_t index, const SensorGrid& grid);

class SensorLayout {
 public:
  SensorLayout(SensorGrid grid, std::vector<Region> region_of);

  const SensorGrid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return region_of_.size(); }
  Region region_of(std::size_t index) const;
  const std::vector<Region>& regions() const noexcept { return region_of_; }

  // Sensor indices of a region in ascending order.
  std::vector<std::size_t> sensors_in(Region r) const;
  std::size_t count(Region r) const;

  friend bool operator==(const SensorLayout&, const SensorLayout&) = default;

 private:
  SensorGrid grid_;
  std::vector<Region> region_of_;
};

// Column c is finger c (thumb to pinky), rows 0-2 finger, rows 3-4 palm.
SensorLayout default_layout();

// `index,region` per line; blank lines and '#' comments are skipped.
SensorLayout parse_layout(std::istream& in, const SensorGrid& grid = {});
SensorLayout load_layout(const std::string& path, const SensorGrid& grid = {});
std::string layout_to_text(const SensorLayout& layout);

inline double clamp_unit(double v) noexcept {
  return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

struct PressureFrame {
  std::vector<double> values;
  double timestamp_ms = 0.0;

  // Copies with every value clamped into [0, 1].
  PressureFrame clamped() const;
  // True when every value lies in [0, 1] and the length matches.
  bool valid_for(const SensorGrid& grid) const noexcept;
};

struct RawFrame {
  std::vector<std::uint16_t> counts;
  unsigned adc_bits = 10;
  double timestamp_ms = 0.0;

  std::uint32_t max_count() const noexcept { return (1u << adc_bits) - 1u; }
};

struct MotorActivation {
  int motor_id = 0;
  double intensity = 0.0;

  friend bool operator==(const MotorActivation&, const MotorActivation&) = default;
};

struct MotorCommand {
  std::vector<MotorActivation> activations;
  double duration_ms = kDefaultStimulusMs;

  bool empty() const noexcept { return activations.empty(); }
  // Sorted ids of the active motors.
  std::vector<int> active_motors() const;
  // Throws Validation on duplicate ids, ids >= num_motors or intensities
  // outside [0, 1].
  void validate(int num_motors) const;

  friend bool operator==(const MotorCommand&, const MotorCommand&) = default;
};

enum class Arrangement : std::uint8_t { Ring, Line };

std::string_view arrangement_name(Arrangement a) noexcept;

struct BodySite {
  std::string name = "shoulder";
  Arrangement arrangement = Arrangement::Line;
  int num_motors = 6;

  static BodySite upper_arm(int motors = 6) { return {"upper-arm", Arrangement::Ring, motors}; }
  static BodySite shoulder(int motors = 6) { return {"shoulder", Arrangement::Line, motors}; }
  static BodySite lower_back(int motors = 6) { return {"lower-back", Arrangement::Line, motors}; }

  // Accepts the three named sites (several spellings); anything else is a
  // custom Line site.
  static BodySite from_name(std::string_view name, int motors = 6);

  // Index distance between two motors, wrapping on a Ring.
  int distance(int a, int b) const;
  void validate() const;

  friend bool operator==(const BodySite&, const BodySite&) = default;
};

}  // namespace tactwin
