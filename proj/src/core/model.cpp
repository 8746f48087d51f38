#include "model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tactwin {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::OutOfRange: return "out_of_range";
    case ErrorCode::Config: return "config";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Io: return "io";
    case ErrorCode::Precondition: return "precondition";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::Encoding: return "encoding";
    case ErrorCode::State: return "state";
  }
  return "unknown";
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string_view region_name(Region r) noexcept {
  switch (r) {
    case Region::Thumb: return "Thumb";
    case Region::Index: return "Index";
    case Region::Middle: return "Middle";
    case Region::Ring: return "Ring";
    case Region::Pinky: return "Pinky";
    case Region::Palm: return "Palm";
  }
  return "?";
}

std::optional<Region> parse_region(std::string_view name) noexcept {
  const std::string n = lower(trim(name));
  for (Region r : kAllRegions) {
    if (lower(region_name(r)) == n) return r;
  }
  return std::nullopt;
}

SensorGrid SensorGrid::make(std::size_t rows, std::size_t cols) {
  if (rows < 1 || cols < 1) {
    throw Error(ErrorCode::Config, "sensor grid needs at least one row and one column");
  }
  return SensorGrid{rows, cols};
}

std::size_t frame_index(std::size_t row, std::size_t col, const SensorGrid& grid) {
  if (row >= grid.rows || col >= grid.cols) {
    throw Error(ErrorCode::OutOfRange,
                "cell (" + std::to_string(row) + ", " + std::to_string(col) +
                    ") outside " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid");
  }
  return row * grid.cols + col;
}

std::pair<std::size_t, std::size_t> cell_of(std::size_t index, const SensorGrid& grid) {
  if (index >= grid.total()) {
    throw Error(ErrorCode::OutOfRange, "sensor index " + std::to_string(index) + " outside grid");
  }
  return {index / grid.cols, index % grid.cols};
}

SensorLayout::SensorLayout(SensorGrid grid, std::vector<Region> region_of)
    : grid_(grid), region_of_(std::move(region_of)) {
  if (region_of_.size() != grid_.total()) {
    throw Error(ErrorCode::Validation, "layout must assign exactly one region per sensor");
  }
}

Region SensorLayout::region_of(std::size_t index) const {
  if (index >= region_of_.size()) {
    throw Error(ErrorCode::OutOfRange, "sensor index " + std::to_string(index) + " outside layout");
  }
  return region_of_[index];
}

std::vector<std::size_t> SensorLayout::sensors_in(Region r) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < region_of_.size(); ++i) {
    if (region_of_[i] == r) out.push_back(i);
  }
  return out;
}

std::size_t SensorLayout::count(Region r) const {
  return static_cast<std::size_t>(std::count(region_of_.begin(), region_of_.end(), r));
}

SensorLayout default_layout() {
  const SensorGrid grid{};
  std::vector<Region> regions(grid.total());
  for (std::size_t row = 0; row < grid.rows; ++row) {
    for (std::size_t col = 0; col < grid.cols; ++col) {
      regions[frame_index(row, col, grid)] = row < 3 ? kAllRegions[col] : Region::Palm;
    }
  }
  return SensorLayout(grid, std::move(regions));
}

SensorLayout parse_layout(std::istream& in, const SensorGrid& grid) {
  std::vector<std::optional<Region>> seen(grid.total());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto comma = body.find(',');
    if (comma == std::string_view::npos) {
      throw Error(ErrorCode::Parse, "layout line " + std::to_string(lineno) + ": expected index,region");
    }
    std::size_t index = 0;
    try {
      std::size_t used = 0;
      const std::string idx(trim(body.substr(0, comma)));
      index = std::stoul(idx, &used);
      if (used != idx.size()) throw std::invalid_argument(idx);
    } catch (const std::exception&) {
      throw Error(ErrorCode::Parse, "layout line " + std::to_string(lineno) + ": bad sensor index");
    }
    const auto region = parse_region(body.substr(comma + 1));
    if (!region) {
      throw Error(ErrorCode::Parse, "layout line " + std::to_string(lineno) + ": unknown region '" +
                                        std::string(trim(body.substr(comma + 1))) + "'");
    }
    if (index >= grid.total()) {
      throw Error(ErrorCode::OutOfRange, "layout line " + std::to_string(lineno) + ": index out of range");
    }
    if (seen[index]) {
      throw Error(ErrorCode::Validation, "layout assigns sensor " + std::to_string(index) + " twice");
    }
    seen[index] = region;
  }
  std::vector<Region> regions;
  regions.reserve(seen.size());
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw Error(ErrorCode::Validation, "layout leaves sensor " + std::to_string(i) + " unassigned");
    regions.push_back(*seen[i]);
  }
  return SensorLayout(grid, std::move(regions));
}

SensorLayout load_layout(const std::string& path, const SensorGrid& grid) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open layout file " + path);
  return parse_layout(in, grid);
}

std::string layout_to_text(const SensorLayout& layout) {
  std::ostringstream out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    out << i << ',' << region_name(layout.region_of(i)) << '\n';
  }
  return out.str();
}

PressureFrame PressureFrame::clamped() const {
  PressureFrame out = *this;
  for (double& v : out.values) v = clamp_unit(v);
  return out;
}

bool PressureFrame::valid_for(const SensorGrid& grid) const noexcept {
  if (values.size() != grid.total()) return false;
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

std::vector<int> MotorCommand::active_motors() const {
  std::vector<int> ids;
  ids.reserve(activations.size());
  for (const auto& a : activations) ids.push_back(a.motor_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void MotorCommand::validate(int num_motors) const {
  std::vector<int> ids = active_motors();
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw Error(ErrorCode::Validation, "duplicate motor id in command");
  }
  for (const auto& a : activations) {
    if (a.motor_id < 0 || a.motor_id >= num_motors) {
      throw Error(ErrorCode::Validation, "motor id " + std::to_string(a.motor_id) + " out of range");
    }
    if (!(a.intensity >= 0.0 && a.intensity <= 1.0)) {
      throw Error(ErrorCode::Validation, "motor intensity outside [0, 1]");
    }
  }
  if (!(duration_ms >= 0.0)) throw Error(ErrorCode::Validation, "negative stimulus duration");
}

std::string_view arrangement_name(Arrangement a) noexcept {
  return a == Arrangement::Ring ? "ring" : "line";
}

BodySite BodySite::from_name(std::string_view name, int motors) {
  std::string n = lower(trim(name));
  std::replace(n.begin(), n.end(), '_', '-');
  if (n == "upper-arm" || n == "upperarm" || n == "arm") return upper_arm(motors);
  if (n == "shoulder") return shoulder(motors);
  if (n == "lower-back" || n == "lowerback" || n == "back") return lower_back(motors);
  if (n.empty()) throw Error(ErrorCode::InvalidArgument, "empty body site name");
  return {n, Arrangement::Line, motors};
}

int BodySite::distance(int a, int b) const {
  const int d = std::abs(a - b);
  if (arrangement == Arrangement::Ring) return std::min(d, num_motors - d);
  return d;
}

void BodySite::validate() const {
  if (num_motors < 1) throw Error(ErrorCode::Config, "body site needs at least one motor");
}

}  // namespace tactwin
