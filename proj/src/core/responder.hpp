#pragma once

// Simulated participants: parametric confusion models for the discrimination
// protocols and a closed-loop pickup-time model for the object task.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "experiment.hpp"
#include "feedback.hpp"
#include "glove.hpp"

namespace tactwin {

enum class ResponderKind { Perfect, Uniform, ConfusionMatrix, SpatialGaussian };

std::string_view responder_kind_name(ResponderKind k) noexcept;
std::optional<ResponderKind> parse_responder_kind(std::string_view name) noexcept;

using Matrix = std::vector<std::vector<double>>;

// Throws Validation unless square, non-negative, and every row sums to 1
// within 1e-9.
void validate_row_stochastic(const Matrix& m);

// k lines of k numbers (whitespace or comma separated). Validated.
Matrix parse_confusion_table(std::istream& in);
Matrix load_confusion_table(const std::string& path);

struct ResponderModel {
  ResponderKind kind = ResponderKind::Perfect;
  Matrix confusion;    // ConfusionMatrix: k x k, row = true class
  double sigma = 1.0;  // SpatialGaussian, in motor-index units
  BodySite site;
  std::uint64_t seed = 1;

  void validate() const;
};

class Responder {
 public:
  explicit Responder(ResponderModel model);

  // Throws Validation for stimuli outside the discrimination domains.
  Stimulus respond(const Stimulus& stimulus);

  // Percept for one class among k on the given arrangement.
  int perceive(int truth, int k, Arrangement arrangement);

  const ResponderModel& model() const noexcept { return model_; }

 private:
  ResponderModel model_;
  std::mt19937_64 rng_;
};

class SimulatedParticipant final : public ResponseSource {
 public:
  SimulatedParticipant(ResponderModel model, ExperimentConfig cfg, double latency_ms = 900.0);

  // Responds to what was actually felt; guesses uniformly when nothing
  // arrived.
  ResponseEvent respond(const TrialPrompt& prompt, const std::optional<MotorCommand>& perceived) override;

 private:
  Responder responder_;
  ExperimentConfig cfg_;
  double latency_ms_;
  std::mt19937_64 guess_rng_;
};

struct PickupModelConfig {
  double reach_ms = 2500.0;
  double noise_sigma = 0.15;               // log-normal spread of the handling time
  double no_feedback_penalty_ms = 2000.0;  // added when the mode never fires
  std::array<double, 5> object_factor{1.0, 1.3, 1.1, 1.0, 0.9};  // kAllObjects order
  std::map<std::string, double> mode_factor;                      // optional per-mode effect
  GraspScenario grasp;
  EncoderConfig encoder;
  double scan_rate_hz = 100.0;
  std::uint64_t seed = 1;
};

// Simulates each grasp through the glove and the session's compression mode;
// pickup time = handling time + time until the first vibration (or a penalty
// when no motor fires).
class SimulatedPickup final : public PickupSource {
 public:
  SimulatedPickup(PickupModelConfig cfg, SensorLayout layout);

  std::optional<PickupEvent> pickup(ObjectKind object, std::size_t trial_index, const std::string& mode) override;

  // Time from contact start until the first non-empty command, if any.
  std::optional<double> feedback_onset_ms(ObjectKind object, const RegionMap& map, std::uint64_t seed) const;

 private:
  PickupModelConfig cfg_;
  SensorLayout layout_;
  std::mt19937_64 rng_;
};

}  // namespace tactwin
