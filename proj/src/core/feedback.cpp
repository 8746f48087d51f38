#include "feedback.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace tactwin {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

int parse_int(std::string_view s, const std::string& what) {
  const std::string text(trim(s));
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::Parse, what + ": not an integer '" + text + "'");
}

// Maps each region to a motor (or NoFeedback) for every sensor in it.
std::vector<int> by_region(const SensorLayout& layout, const int (&motor_for)[6]) {
  std::vector<int> a(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    a[i] = motor_for[static_cast<int>(layout.region_of(i))];
  }
  return a;
}

}  // namespace

RegionMap::RegionMap(std::string name, int num_motors, std::vector<int> assignment)
    : name_(std::move(name)), num_motors_(num_motors), assignment_(std::move(assignment)) {
  if (num_motors_ < 1) throw Error(ErrorCode::Validation, "region map needs at least one motor");
  std::vector<int> hits(static_cast<std::size_t>(num_motors_), 0);
  for (int m : assignment_) {
    if (m == kNoFeedback) continue;
    if (m < 0 || m >= num_motors_) {
      throw Error(ErrorCode::Validation, "region map references motor " + std::to_string(m) +
                                             " but has " + std::to_string(num_motors_));
    }
    ++hits[static_cast<std::size_t>(m)];
  }
  for (int m = 0; m < num_motors_; ++m) {
    if (hits[static_cast<std::size_t>(m)] == 0) {
      throw Error(ErrorCode::Validation, "motor " + std::to_string(m) + " has no sensors");
    }
  }
}

std::vector<std::size_t> RegionMap::sensors_of(int motor) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment_.size(); ++i) {
    if (assignment_[i] == motor) out.push_back(i);
  }
  return out;
}

std::string_view focus_name(Focus f) noexcept {
  return f == Focus::FingerFocused ? "finger" : "palm";
}

std::string CompressionMode::label() const {
  return std::string(focus_name(focus)) + ":" + std::to_string(num_motors);
}

CompressionMode builtin_mode(Focus focus, int num_motors, const SensorLayout& layout) {
  constexpr int NF = kNoFeedback;
  // Region order: Thumb, Index, Middle, Ring, Pinky, Palm.
  std::vector<int> a;
  if (focus == Focus::FingerFocused) {
    switch (num_motors) {
      case 6: { const int m[6] = {0, 1, 2, 3, 4, 5}; a = by_region(layout, m); break; }
      case 3: { const int m[6] = {0, 0, 1, 1, 1, 2}; a = by_region(layout, m); break; }
      case 1: { const int m[6] = {0, 0, 0, 0, 0, NF}; a = by_region(layout, m); break; }
      default: break;
    }
  } else {
    switch (num_motors) {
      case 6: {
        // Palm split radial/ulnar across the column midpoint.
        const int m[6] = {2, 3, 4, 5, 5, 0};
        a = by_region(layout, m);
        const std::size_t cols = layout.grid().cols;
        for (std::size_t i = 0; i < a.size(); ++i) {
          if (layout.region_of(i) == Region::Palm && (i % cols) * 2 + 1 > cols) a[i] = 1;
        }
        break;
      }
      case 3: { const int m[6] = {1, 1, 2, 2, 2, 0}; a = by_region(layout, m); break; }
      case 1: { const int m[6] = {NF, NF, NF, NF, NF, 0}; a = by_region(layout, m); break; }
      default: break;
    }
  }
  if (a.empty()) {
    throw Error(ErrorCode::Config, "built-in modes use 1, 3 or 6 motors, not " + std::to_string(num_motors));
  }
  const std::string label = std::string(focus_name(focus)) + ":" + std::to_string(num_motors);
  return CompressionMode{focus, num_motors, RegionMap(label, num_motors, std::move(a))};
}

std::vector<CompressionMode> builtin_modes(const SensorLayout& layout) {
  std::vector<CompressionMode> out;
  for (Focus f : {Focus::FingerFocused, Focus::PalmFocused}) {
    for (int n : {1, 3, 6}) out.push_back(builtin_mode(f, n, layout));
  }
  return out;
}

CompressionMode parse_mode_spec(std::string_view spec, const SensorLayout& layout) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::Config, "mode spec must look like finger:6 or palm:3");
  }
  const std::string_view focus = trim(spec.substr(0, colon));
  Focus f;
  if (focus == "finger") {
    f = Focus::FingerFocused;
  } else if (focus == "palm") {
    f = Focus::PalmFocused;
  } else {
    throw Error(ErrorCode::Config, "unknown mode focus '" + std::string(focus) + "'");
  }
  int n = 0;
  try {
    n = parse_int(spec.substr(colon + 1), "mode spec");
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
  return builtin_mode(f, n, layout);
}

RegionMap parse_mode_file(std::istream& in, const SensorGrid& grid) {
  std::string name = "custom";
  std::optional<int> num_motors;
  std::vector<std::optional<int>> seen(grid.total());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const std::string where = "mode line " + std::to_string(lineno);
    if (const auto eq = body.find('='); eq != std::string_view::npos) {
      const std::string_view key = trim(body.substr(0, eq));
      const std::string_view value = trim(body.substr(eq + 1));
      if (key == "name") {
        name = std::string(value);
      } else if (key == "num_motors") {
        num_motors = parse_int(value, where);
      } else {
        throw Error(ErrorCode::Parse, where + ": unknown header key '" + std::string(key) + "'");
      }
      continue;
    }
    const auto comma = body.find(',');
    if (comma == std::string_view::npos) throw Error(ErrorCode::Parse, where + ": expected index,motor");
    const int index = parse_int(body.substr(0, comma), where);
    const std::string_view motor = trim(body.substr(comma + 1));
    if (index < 0 || static_cast<std::size_t>(index) >= grid.total()) {
      throw Error(ErrorCode::OutOfRange, where + ": sensor index out of range");
    }
    if (seen[static_cast<std::size_t>(index)]) {
      throw Error(ErrorCode::Validation, where + ": sensor assigned twice");
    }
    seen[static_cast<std::size_t>(index)] =
        (motor == "NF" || motor == "nf") ? kNoFeedback : parse_int(motor, where);
  }
  if (!num_motors) throw Error(ErrorCode::Parse, "mode file lacks num_motors header");
  std::vector<int> a;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw Error(ErrorCode::Validation, "mode file leaves sensor " + std::to_string(i) + " unassigned");
    a.push_back(*seen[i]);
  }
  return RegionMap(name, *num_motors, std::move(a));
}

RegionMap load_mode_file(const std::string& path, const SensorGrid& grid) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open mode file " + path);
  return parse_mode_file(in, grid);
}

std::string mode_to_text(const RegionMap& map) {
  std::ostringstream out;
  out << "name=" << map.name() << '\n' << "num_motors=" << map.num_motors() << '\n';
  for (std::size_t i = 0; i < map.size(); ++i) {
    out << i << ',';
    if (map.motor_of(i) == kNoFeedback) {
      out << "NF";
    } else {
      out << map.motor_of(i);
    }
    out << '\n';
  }
  return out.str();
}

std::vector<double> compress(const PressureFrame& frame, const RegionMap& map) {
  if (frame.values.size() != map.size()) {
    throw Error(ErrorCode::Precondition, "frame length does not match the region map");
  }
  const auto n = static_cast<std::size_t>(map.num_motors());
  std::vector<double> sum(n, 0.0);
  std::vector<std::size_t> count(n, 0);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const int m = map.motor_of(i);
    if (m == kNoFeedback) continue;
    sum[static_cast<std::size_t>(m)] += frame.values[i];
    ++count[static_cast<std::size_t>(m)];
  }
  for (std::size_t m = 0; m < n; ++m) sum[m] /= static_cast<double>(count[m]);
  return sum;
}

std::string_view encoder_name(EncoderKind k) noexcept {
  switch (k) {
    case EncoderKind::Binary: return "binary";
    case EncoderKind::Proportional: return "prop";
    case EncoderKind::Derivative: return "deriv";
  }
  return "?";
}

std::optional<EncoderKind> parse_encoder(std::string_view name) noexcept {
  if (name == "binary") return EncoderKind::Binary;
  if (name == "prop" || name == "proportional") return EncoderKind::Proportional;
  if (name == "deriv" || name == "derivative") return EncoderKind::Derivative;
  return std::nullopt;
}

void EncoderConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorCode::Config, "threshold must lie in (0, 1)");
  if (!(fixed_intensity > 0.0 && fixed_intensity <= 1.0)) {
    throw Error(ErrorCode::Config, "fixed intensity must lie in (0, 1]");
  }
  if (!(gain > 0.0)) throw Error(ErrorCode::Config, "gain must be positive");
  if (kind == EncoderKind::Derivative && !(dt_ms > 0.0)) {
    throw Error(ErrorCode::Config, "derivative encoder needs a positive sample interval");
  }
}

MotorCommand encode(std::span<const double> averages, const EncoderConfig& cfg,
                    std::optional<std::span<const double>> prev, double duration_ms) {
  for (double v : averages) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::Precondition, "motor average outside [0, 1]");
  }
  MotorCommand cmd;
  cmd.duration_ms = duration_ms;
  switch (cfg.kind) {
    case EncoderKind::Binary:
      for (std::size_t m = 0; m < averages.size(); ++m) {
        if (averages[m] > cfg.threshold) {
          cmd.activations.push_back({static_cast<int>(m), cfg.fixed_intensity});
        }
      }
      break;
    case EncoderKind::Proportional:
      for (std::size_t m = 0; m < averages.size(); ++m) {
        const double level = clamp_unit(cfg.gain * averages[m]);
        if (level > 0.0) cmd.activations.push_back({static_cast<int>(m), level});
      }
      break;
    case EncoderKind::Derivative: {
      if (!prev) throw Error(ErrorCode::Precondition, "derivative encoder needs the previous averages");
      if (prev->size() != averages.size()) {
        throw Error(ErrorCode::Precondition, "previous averages have a different motor count");
      }
      const double dt_s = cfg.dt_ms / 1000.0;
      for (std::size_t m = 0; m < averages.size(); ++m) {
        const double slope = std::max(0.0, (averages[m] - (*prev)[m]) / dt_s);
        const double level = clamp_unit(cfg.gain * slope);
        if (level > 0.0) cmd.activations.push_back({static_cast<int>(m), level});
      }
      break;
    }
  }
  return cmd;
}

}  // namespace tactwin
