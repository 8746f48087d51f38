#pragma once

// Psychophysics protocols: balanced randomized trial plans, the session state
// machine, stimulus dispatch / response capture, and the timed object task.

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "glove.hpp"
#include "model.hpp"
#include "transport.hpp"

namespace tactwin {

enum class Protocol { Intensity, SingleLocation, PairLocation, ObjectTask };

std::string_view protocol_name(Protocol p) noexcept;
// Accepts the canonical names plus "single", "pair" and "object".
std::optional<Protocol> parse_protocol(std::string_view name) noexcept;

struct IntensityLevel {
  int level = 1;  // 1 = low, 2 = mid, 3 = high
  friend auto operator<=>(const IntensityLevel&, const IntensityLevel&) = default;
};

struct MotorId {
  int id = 0;
  friend auto operator<=>(const MotorId&, const MotorId&) = default;
};

// Unordered pair of distinct motors, stored ascending.
struct MotorPair {
  int first = 0;
  int second = 1;

  // Throws Validation unless a != b and both are non-negative.
  static MotorPair of(int a, int b);
  friend auto operator<=>(const MotorPair&, const MotorPair&) = default;
};

using Stimulus = std::variant<IntensityLevel, MotorId, MotorPair, ObjectKind>;

Protocol protocol_of(const Stimulus& s) noexcept;
std::string stimulus_label(const Stimulus& s);

enum class PairPolicy { ExactMatch, PerMotor };

std::string_view pair_policy_name(PairPolicy p) noexcept;  // exact / per-motor
std::optional<PairPolicy> parse_pair_policy(std::string_view name) noexcept;

double score_pair_response(const MotorPair& stimulus, const MotorPair& response, PairPolicy policy);

struct ExperimentConfig {
  std::array<double, 3> intensity_levels{0.33, 0.66, 1.0};
  int intensity_motor = 0;
  double stimulus_ms = kDefaultStimulusMs;
  double timeout_ms = 30000.0;
  PairPolicy pair_policy = PairPolicy::ExactMatch;
  int intensity_reps = 10;
  int single_reps = 5;
  int pair_reps = 3;
  int object_reps = 3;
};

struct TrialPlan {
  Protocol protocol = Protocol::SingleLocation;
  BodySite site;
  std::vector<Stimulus> stimuli;
  std::optional<std::string> mode;  // compression mode label, object task only
  std::uint64_t seed = 0;
};

// Every class of a protocol's stimulus domain in canonical order.
std::vector<Stimulus> stimulus_domain(Protocol p, const BodySite& site);

// Exact balanced multiset, then a seeded uniform shuffle.
TrialPlan gen_plan(Protocol protocol, const BodySite& site, std::uint64_t seed,
                   std::optional<std::string> mode = std::nullopt, const ExperimentConfig& cfg = {});

// Throws Validation when the stimulus is outside the protocol's domain.
void validate_stimulus(const Stimulus& s, Protocol p, const BodySite& site);

double score_response(const Stimulus& stimulus, const std::optional<Stimulus>& response, PairPolicy policy);

// Pair stimuli drive both motors at full intensity; intensity stimuli drive
// the configured motor at the level's amplitude.
MotorCommand stimulus_command(const Stimulus& s, const ExperimentConfig& cfg);
// What a participant would report for a delivered command, given perfect
// perception (nearest intensity level, the active motor(s)).
std::optional<Stimulus> perceived_stimulus(const MotorCommand& cmd, Protocol p, const ExperimentConfig& cfg);

enum class SessionState { Idle, Training, Testing, Complete, Aborted };

std::string_view session_state_name(SessionState s) noexcept;

// Idle -> Training -> Testing -> Complete; any non-terminal -> Aborted.
class SessionStateMachine {
 public:
  SessionState state() const noexcept { return state_; }
  bool can_advance(SessionState to) const noexcept;
  // Throws State on an illegal transition.
  void advance(SessionState to);

 private:
  SessionState state_ = SessionState::Idle;
};

struct TrialRecord {
  std::size_t trial_index = 0;
  Stimulus stimulus;
  std::optional<Stimulus> response;
  double score = 0.0;
  bool correct = false;
  std::optional<double> elapsed_ms;  // object task
  double response_latency_ms = 0.0;

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct SessionConfigSnapshot {
  double threshold = 0.5;
  std::string encoder = "binary";
  std::string mode = "finger:6";
  std::uint64_t seed = 0;
  PairPolicy pair_policy = PairPolicy::ExactMatch;
  double timeout_ms = 30000.0;
  double stimulus_ms = kDefaultStimulusMs;
  std::array<double, 3> intensity_levels{0.33, 0.66, 1.0};
  std::string responder = "perfect";

  friend bool operator==(const SessionConfigSnapshot&, const SessionConfigSnapshot&) = default;
};

struct SessionLog {
  std::string session_id;
  std::string participant;
  BodySite site;
  Protocol protocol = Protocol::SingleLocation;
  SessionConfigSnapshot config;
  std::size_t plan_length = 0;
  std::vector<TrialRecord> records;
  bool complete = false;
  double started_ms = 0.0;
  double completed_ms = 0.0;

  friend bool operator==(const SessionLog&, const SessionLog&) = default;
};

struct SessionMeta {
  std::string session_id;
  std::string participant = "P01";
  SessionConfigSnapshot config;
};

std::string default_session_id(const std::string& participant, const TrialPlan& plan);

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now_ms() const = 0;
  virtual void wait(double ms) = 0;
};

class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(double start_ms = 0.0) : now_(start_ms) {}
  double now_ms() const override { return now_; }
  void wait(double ms) override { now_ += ms > 0 ? ms : 0; }
  void advance_to(double t_ms) { now_ = t_ms > now_ ? t_ms : now_; }

 private:
  double now_;
};

class SteadyClock final : public Clock {
 public:
  SteadyClock();
  double now_ms() const override;
  void wait(double ms) override;

 private:
  std::int64_t origin_ns_;
};

enum class Phase { Training, Testing };

class StimulusSink {
 public:
  virtual ~StimulusSink() = default;
  // Returns the command as it arrived at the patches, or nullopt if lost.
  virtual std::optional<MotorCommand> deliver(const MotorCommand& cmd, Phase phase) = 0;
};

// Loopback through the packet codec with no channel impairments.
class CodecStimulusSink final : public StimulusSink {
 public:
  std::optional<MotorCommand> deliver(const MotorCommand& cmd, Phase phase) override;
  std::size_t sent() const noexcept { return sent_; }

 private:
  std::uint8_t seq_ = 0;
  std::size_t sent_ = 0;
};

// Sends each command over the simulated link and retransmits until the patch
// acknowledges it or the attempts run out. Acks travel the same channel.
class LinkStimulusSink final : public StimulusSink {
 public:
  LinkStimulusSink(ChannelConfig channel, VirtualClock& clock, int max_attempts = 8,
                   double ack_timeout_ms = 200.0);
  std::optional<MotorCommand> deliver(const MotorCommand& cmd, Phase phase) override;

  const Channel& channel() const noexcept { return channel_; }
  std::size_t attempts() const noexcept { return attempts_; }
  std::size_t failures() const noexcept { return failures_; }

 private:
  Channel channel_;
  VirtualClock& clock_;
  int max_attempts_;
  double ack_timeout_ms_;
  std::uint8_t seq_ = 0;
  std::size_t attempts_ = 0;
  std::size_t failures_ = 0;
};

struct TrialPrompt {
  Protocol protocol = Protocol::SingleLocation;
  std::size_t trial_index = 0;
  std::size_t total = 0;
};

struct ResponseEvent {
  std::optional<Stimulus> response;
  double latency_ms = 0.0;
  bool abort = false;
};

class ResponseSource {
 public:
  virtual ~ResponseSource() = default;
  virtual ResponseEvent respond(const TrialPrompt& prompt, const std::optional<MotorCommand>& perceived) = 0;
};

// Step-wise session driver shared by the batch runner and the live service.
class SessionRunner {
 public:
  SessionRunner(TrialPlan plan, ExperimentConfig cfg, SessionMeta meta);

  SessionState state() const noexcept { return machine_.state(); }
  const TrialPlan& plan() const noexcept { return plan_; }
  const ExperimentConfig& config() const noexcept { return cfg_; }

  // Idle -> Training; returns the familiarization replay (each distinct
  // stimulus once, canonical order). Empty for the object task.
  std::vector<Stimulus> begin_training(double now_ms);
  void begin_testing();

  bool has_next() const noexcept;
  std::size_t next_index() const noexcept { return log_.records.size(); }
  const Stimulus& next_stimulus() const;
  TrialPrompt next_prompt() const;

  // Discrimination trial. A missing response or a latency beyond the timeout
  // records response = None, correct = false.
  const TrialRecord& record_response(std::optional<Stimulus> response, double latency_ms);
  // Object trial.
  const TrialRecord& record_pickup(std::optional<double> elapsed_ms);

  void finish(double now_ms);
  void abort(double now_ms);

  const SessionLog& log() const noexcept { return log_; }

 private:
  TrialPlan plan_;
  ExperimentConfig cfg_;
  SessionStateMachine machine_;
  SessionLog log_;
  bool missing_pickup_ = false;
};

SessionLog run_session(const TrialPlan& plan, StimulusSink& sink, ResponseSource& source, Clock& clock,
                       const ExperimentConfig& cfg, const SessionMeta& meta);

struct PickupEvent {
  ObjectKind object = ObjectKind::Ball;
  double elapsed_ms = 0.0;
};

class PickupSource {
 public:
  virtual ~PickupSource() = default;
  virtual std::optional<PickupEvent> pickup(ObjectKind object, std::size_t trial_index,
                                            const std::string& mode) = 0;
};

SessionLog run_object_task(const TrialPlan& plan, PickupSource& source, Clock& clock,
                           const ExperimentConfig& cfg, const SessionMeta& meta);

struct ObjectStudy {
  std::vector<std::string> mode_order;  // a permutation of the six built-in modes
  std::vector<TrialPlan> plans;         // one per mode, in mode_order
};

ObjectStudy gen_object_study(const BodySite& site, std::uint64_t seed, const ExperimentConfig& cfg = {});

std::vector<SessionLog> run_object_study(const ObjectStudy& study, PickupSource& source, Clock& clock,
                                         const ExperimentConfig& cfg, const SessionMeta& meta);

}  // namespace tactwin
