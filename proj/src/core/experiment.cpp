#include "experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <thread>

#include "feedback.hpp"

namespace tactwin {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

std::string_view protocol_name(Protocol p) noexcept {
  switch (p) {
    case Protocol::Intensity: return "intensity";
    case Protocol::SingleLocation: return "single-location";
    case Protocol::PairLocation: return "pair-location";
    case Protocol::ObjectTask: return "object-task";
  }
  return "?";
}

std::optional<Protocol> parse_protocol(std::string_view name) noexcept {
  if (name == "intensity") return Protocol::Intensity;
  if (name == "single-location" || name == "single") return Protocol::SingleLocation;
  if (name == "pair-location" || name == "pair") return Protocol::PairLocation;
  if (name == "object-task" || name == "object") return Protocol::ObjectTask;
  return std::nullopt;
}

MotorPair MotorPair::of(int a, int b) {
  if (a == b) throw Error(ErrorCode::Validation, "a motor pair needs two distinct motors");
  if (a < 0 || b < 0) throw Error(ErrorCode::Validation, "motor ids must be non-negative");
  return a < b ? MotorPair{a, b} : MotorPair{b, a};
}

Protocol protocol_of(const Stimulus& s) noexcept {
  return std::visit(overloaded{
                        [](const IntensityLevel&) { return Protocol::Intensity; },
                        [](const MotorId&) { return Protocol::SingleLocation; },
                        [](const MotorPair&) { return Protocol::PairLocation; },
                        [](const ObjectKind&) { return Protocol::ObjectTask; },
                    },
                    s);
}

std::string stimulus_label(const Stimulus& s) {
  return std::visit(overloaded{
                        [](const IntensityLevel& l) { return "L" + std::to_string(l.level); },
                        [](const MotorId& m) { return "M" + std::to_string(m.id); },
                        [](const MotorPair& p) {
                          return "M" + std::to_string(p.first) + "+M" + std::to_string(p.second);
                        },
                        [](const ObjectKind& o) { return std::string(object_name(o)); },
                    },
                    s);
}

std::string_view pair_policy_name(PairPolicy p) noexcept {
  return p == PairPolicy::ExactMatch ? "exact" : "per-motor";
}

std::optional<PairPolicy> parse_pair_policy(std::string_view name) noexcept {
  if (name == "exact" || name == "exact-match") return PairPolicy::ExactMatch;
  if (name == "per-motor" || name == "permotor") return PairPolicy::PerMotor;
  return std::nullopt;
}

double score_pair_response(const MotorPair& stimulus, const MotorPair& response, PairPolicy policy) {
  for (const MotorPair& p : {stimulus, response}) {
    if (p.first == p.second || p.first < 0 || p.second < 0) {
      throw Error(ErrorCode::Validation, "malformed motor pair");
    }
  }
  const auto norm = [](const MotorPair& p) { return MotorPair::of(p.first, p.second); };
  const MotorPair s = norm(stimulus);
  const MotorPair r = norm(response);
  if (policy == PairPolicy::ExactMatch) return s == r ? 1.0 : 0.0;
  int shared = 0;
  for (int a : {s.first, s.second}) {
    if (a == r.first || a == r.second) ++shared;
  }
  return shared / 2.0;
}

std::vector<Stimulus> stimulus_domain(Protocol p, const BodySite& site) {
  std::vector<Stimulus> out;
  switch (p) {
    case Protocol::Intensity:
      for (int l = 1; l <= 3; ++l) out.emplace_back(IntensityLevel{l});
      break;
    case Protocol::SingleLocation:
      for (int m = 0; m < site.num_motors; ++m) out.emplace_back(MotorId{m});
      break;
    case Protocol::PairLocation:
      for (int a = 0; a < site.num_motors; ++a) {
        for (int b = a + 1; b < site.num_motors; ++b) out.emplace_back(MotorPair{a, b});
      }
      break;
    case Protocol::ObjectTask:
      for (ObjectKind o : kAllObjects) out.emplace_back(o);
      break;
  }
  return out;
}

TrialPlan gen_plan(Protocol protocol, const BodySite& site, std::uint64_t seed,
                   std::optional<std::string> mode, const ExperimentConfig& cfg) {
  site.validate();
  if (protocol == Protocol::PairLocation && site.num_motors < 2) {
    throw Error(ErrorCode::Config, "pair protocol needs at least two motors");
  }
  int reps = 0;
  switch (protocol) {
    case Protocol::Intensity: reps = cfg.intensity_reps; break;
    case Protocol::SingleLocation: reps = cfg.single_reps; break;
    case Protocol::PairLocation: reps = cfg.pair_reps; break;
    case Protocol::ObjectTask: reps = cfg.object_reps; break;
  }
  if (reps < 1) throw Error(ErrorCode::Config, "repetition count must be positive");

  TrialPlan plan;
  plan.protocol = protocol;
  plan.site = site;
  plan.seed = seed;
  plan.mode = std::move(mode);
  const auto domain = stimulus_domain(protocol, site);
  for (int r = 0; r < reps; ++r) plan.stimuli.insert(plan.stimuli.end(), domain.begin(), domain.end());
  std::mt19937_64 rng(seed);
  std::shuffle(plan.stimuli.begin(), plan.stimuli.end(), rng);
  return plan;
}

void validate_stimulus(const Stimulus& s, Protocol p, const BodySite& site) {
  if (protocol_of(s) != p) {
    throw Error(ErrorCode::Validation, "response " + stimulus_label(s) + " does not belong to the " +
                                           std::string(protocol_name(p)) + " protocol");
  }
  std::visit(overloaded{
                 [](const IntensityLevel& l) {
                   if (l.level < 1 || l.level > 3) throw Error(ErrorCode::Validation, "intensity level must be 1..3");
                 },
                 [&](const MotorId& m) {
                   if (m.id < 0 || m.id >= site.num_motors) throw Error(ErrorCode::Validation, "motor id out of range");
                 },
                 [&](const MotorPair& pr) {
                   if (pr.first == pr.second || pr.first < 0 || pr.second < 0 || pr.first >= site.num_motors ||
                       pr.second >= site.num_motors) {
                     throw Error(ErrorCode::Validation, "malformed motor pair");
                   }
                 },
                 [](const ObjectKind&) {},
             },
             s);
}

double score_response(const Stimulus& stimulus, const std::optional<Stimulus>& response, PairPolicy policy) {
  if (!response || protocol_of(*response) != protocol_of(stimulus)) return 0.0;
  if (const auto* sp = std::get_if<MotorPair>(&stimulus)) {
    return score_pair_response(*sp, std::get<MotorPair>(*response), policy);
  }
  return stimulus == *response ? 1.0 : 0.0;
}

MotorCommand stimulus_command(const Stimulus& s, const ExperimentConfig& cfg) {
  MotorCommand cmd;
  cmd.duration_ms = cfg.stimulus_ms;
  std::visit(overloaded{
                 [&](const IntensityLevel& l) {
                   cmd.activations.push_back({cfg.intensity_motor, cfg.intensity_levels.at(static_cast<std::size_t>(l.level - 1))});
                 },
                 [&](const MotorId& m) { cmd.activations.push_back({m.id, 1.0}); },
                 [&](const MotorPair& p) {
                   cmd.activations.push_back({p.first, 1.0});
                   cmd.activations.push_back({p.second, 1.0});
                 },
                 [](const ObjectKind&) {
                   throw Error(ErrorCode::InvalidArgument, "object presentations have no motor stimulus");
                 },
             },
             s);
  return cmd;
}

std::optional<Stimulus> perceived_stimulus(const MotorCommand& cmd, Protocol p, const ExperimentConfig& cfg) {
  switch (p) {
    case Protocol::Intensity: {
      if (cmd.activations.size() != 1) return std::nullopt;
      const double v = cmd.activations.front().intensity;
      int best = 1;
      for (int l = 2; l <= 3; ++l) {
        if (std::abs(cfg.intensity_levels[static_cast<std::size_t>(l - 1)] - v) <
            std::abs(cfg.intensity_levels[static_cast<std::size_t>(best - 1)] - v)) {
          best = l;
        }
      }
      return IntensityLevel{best};
    }
    case Protocol::SingleLocation:
      if (cmd.activations.size() != 1) return std::nullopt;
      return MotorId{cmd.activations.front().motor_id};
    case Protocol::PairLocation: {
      const auto ids = cmd.active_motors();
      if (ids.size() != 2 || ids[0] == ids[1]) return std::nullopt;
      return MotorPair{ids[0], ids[1]};
    }
    case Protocol::ObjectTask: return std::nullopt;
  }
  return std::nullopt;
}

std::string_view session_state_name(SessionState s) noexcept {
  switch (s) {
    case SessionState::Idle: return "idle";
    case SessionState::Training: return "training";
    case SessionState::Testing: return "testing";
    case SessionState::Complete: return "complete";
    case SessionState::Aborted: return "aborted";
  }
  return "?";
}

bool SessionStateMachine::can_advance(SessionState to) const noexcept {
  switch (state_) {
    case SessionState::Idle: return to == SessionState::Training || to == SessionState::Aborted;
    case SessionState::Training: return to == SessionState::Testing || to == SessionState::Aborted;
    case SessionState::Testing: return to == SessionState::Complete || to == SessionState::Aborted;
    case SessionState::Complete:
    case SessionState::Aborted: return false;
  }
  return false;
}

void SessionStateMachine::advance(SessionState to) {
  if (!can_advance(to)) {
    throw Error(ErrorCode::State, "illegal session transition " + std::string(session_state_name(state_)) + " -> " +
                                      std::string(session_state_name(to)));
  }
  state_ = to;
}

std::string default_session_id(const std::string& participant, const TrialPlan& plan) {
  std::string id = participant + "_" + std::string(protocol_name(plan.protocol)) + "_" + plan.site.name;
  if (plan.mode) {
    std::string m = *plan.mode;
    std::replace(m.begin(), m.end(), ':', '-');
    id += "_" + m;
  }
  return id + "_s" + std::to_string(plan.seed);
}

SteadyClock::SteadyClock()
    : origin_ns_(std::chrono::duration_cast<std::chrono::nanoseconds>(
                     std::chrono::steady_clock::now().time_since_epoch())
                     .count()) {}

double SteadyClock::now_ms() const {
  const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                      std::chrono::steady_clock::now().time_since_epoch())
                      .count();
  return static_cast<double>(ns - origin_ns_) / 1e6;
}

void SteadyClock::wait(double ms) {
  if (ms > 0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

std::optional<MotorCommand> CodecStimulusSink::deliver(const MotorCommand& cmd, Phase) {
  ++sent_;
  const auto bytes = encode_packet({PacketType::MotorCommand, seq_++, motor_command_payload(cmd)});
  const auto decoded = decode_packet(bytes);
  if (const auto* p = std::get_if<Packet>(&decoded)) return motor_command_from_payload(p->payload, cmd.duration_ms);
  return std::nullopt;
}

LinkStimulusSink::LinkStimulusSink(ChannelConfig channel, VirtualClock& clock, int max_attempts,
                                   double ack_timeout_ms)
    : channel_(channel), clock_(clock), max_attempts_(max_attempts), ack_timeout_ms_(ack_timeout_ms) {
  if (max_attempts_ < 1) throw Error(ErrorCode::Config, "at least one delivery attempt is required");
}

std::optional<MotorCommand> LinkStimulusSink::deliver(const MotorCommand& cmd, Phase) {
  const std::uint8_t seq = seq_++;
  const auto bytes = encode_packet({PacketType::MotorCommand, seq, motor_command_payload(cmd)});
  std::optional<MotorCommand> applied;
  for (int attempt = 0; attempt < max_attempts_; ++attempt) {
    ++attempts_;
    channel_.send(bytes, clock_.now_ms());
    const double deadline = clock_.now_ms() + ack_timeout_ms_;
    bool acked = false;
    while (!acked) {
      const auto next = channel_.next_delivery_ms();
      if (!next || *next > deadline) break;
      clock_.advance_to(*next);
      for (const auto& d : channel_.poll(clock_.now_ms())) {
        const auto decoded = decode_packet(d.bytes);
        const auto* p = std::get_if<Packet>(&decoded);
        if (!p || p->seq != seq) continue;
        if (p->type == PacketType::MotorCommand) {
          // Patch side: apply once, acknowledge every copy.
          if (!applied) applied = motor_command_from_payload(p->payload, cmd.duration_ms);
          channel_.send(encode_packet({PacketType::Ack, seq, {}}), clock_.now_ms());
        } else if (p->type == PacketType::Ack) {
          acked = true;
        }
      }
    }
    if (acked) return applied;
    clock_.advance_to(deadline);
  }
  // Drain stragglers so they do not leak into the next stimulus.
  channel_.drain();
  if (!applied) ++failures_;
  return applied;
}

SessionRunner::SessionRunner(TrialPlan plan, ExperimentConfig cfg, SessionMeta meta)
    : plan_(std::move(plan)), cfg_(cfg) {
  plan_.site.validate();
  for (const auto& s : plan_.stimuli) validate_stimulus(s, plan_.protocol, plan_.site);
  log_.session_id = meta.session_id.empty() ? default_session_id(meta.participant, plan_) : meta.session_id;
  log_.participant = meta.participant;
  log_.site = plan_.site;
  log_.protocol = plan_.protocol;
  log_.config = meta.config;
  log_.config.seed = plan_.seed;
  log_.config.pair_policy = cfg_.pair_policy;
  log_.config.timeout_ms = cfg_.timeout_ms;
  log_.config.stimulus_ms = cfg_.stimulus_ms;
  log_.config.intensity_levels = cfg_.intensity_levels;
  if (plan_.mode) log_.config.mode = *plan_.mode;
  log_.plan_length = plan_.stimuli.size();
}

std::vector<Stimulus> SessionRunner::begin_training(double now_ms) {
  machine_.advance(SessionState::Training);
  log_.started_ms = now_ms;
  if (plan_.protocol == Protocol::ObjectTask) return {};
  return stimulus_domain(plan_.protocol, plan_.site);
}

void SessionRunner::begin_testing() { machine_.advance(SessionState::Testing); }

bool SessionRunner::has_next() const noexcept {
  return machine_.state() == SessionState::Testing && log_.records.size() < plan_.stimuli.size();
}

const Stimulus& SessionRunner::next_stimulus() const {
  if (!has_next()) throw Error(ErrorCode::State, "no trial pending");
  return plan_.stimuli[log_.records.size()];
}

TrialPrompt SessionRunner::next_prompt() const {
  return {plan_.protocol, next_index(), plan_.stimuli.size()};
}

const TrialRecord& SessionRunner::record_response(std::optional<Stimulus> response, double latency_ms) {
  if (plan_.protocol == Protocol::ObjectTask) throw Error(ErrorCode::State, "object trials record pickups");
  const Stimulus& stimulus = next_stimulus();
  if (response) validate_stimulus(*response, plan_.protocol, plan_.site);
  TrialRecord r;
  r.trial_index = next_index();
  r.stimulus = stimulus;
  if (!response || latency_ms > cfg_.timeout_ms) {
    r.response = std::nullopt;
    r.response_latency_ms = std::min(latency_ms, cfg_.timeout_ms);
  } else {
    r.response = std::move(response);
    r.response_latency_ms = latency_ms;
  }
  r.score = score_response(r.stimulus, r.response, cfg_.pair_policy);
  r.correct = r.score == 1.0;
  log_.records.push_back(std::move(r));
  return log_.records.back();
}

const TrialRecord& SessionRunner::record_pickup(std::optional<double> elapsed_ms) {
  if (plan_.protocol != Protocol::ObjectTask) throw Error(ErrorCode::State, "only object trials record pickups");
  TrialRecord r;
  r.trial_index = next_index();
  r.stimulus = next_stimulus();
  if (elapsed_ms && !(*elapsed_ms > 0.0)) throw Error(ErrorCode::Validation, "pickup time must be positive");
  r.elapsed_ms = elapsed_ms;
  r.correct = elapsed_ms.has_value();
  r.score = r.correct ? 1.0 : 0.0;
  if (!elapsed_ms) missing_pickup_ = true;
  log_.records.push_back(std::move(r));
  return log_.records.back();
}

void SessionRunner::finish(double now_ms) {
  machine_.advance(SessionState::Complete);
  log_.completed_ms = now_ms;
  log_.complete = log_.records.size() == plan_.stimuli.size() && !missing_pickup_;
}

void SessionRunner::abort(double now_ms) {
  machine_.advance(SessionState::Aborted);
  log_.completed_ms = now_ms;
  log_.complete = false;
}

SessionLog run_session(const TrialPlan& plan, StimulusSink& sink, ResponseSource& source, Clock& clock,
                       const ExperimentConfig& cfg, const SessionMeta& meta) {
  if (plan.protocol == Protocol::ObjectTask) {
    throw Error(ErrorCode::InvalidArgument, "use run_object_task for the object protocol");
  }
  SessionRunner runner(plan, cfg, meta);
  for (const auto& s : runner.begin_training(clock.now_ms())) {
    sink.deliver(stimulus_command(s, cfg), Phase::Training);
    clock.wait(cfg.stimulus_ms);
  }
  runner.begin_testing();
  while (runner.has_next()) {
    const TrialPrompt prompt = runner.next_prompt();
    const auto perceived = sink.deliver(stimulus_command(runner.next_stimulus(), cfg), Phase::Testing);
    clock.wait(cfg.stimulus_ms);
    const ResponseEvent ev = source.respond(prompt, perceived);
    if (ev.abort) {
      runner.abort(clock.now_ms());
      return runner.log();
    }
    clock.wait(std::min(ev.latency_ms, cfg.timeout_ms));
    runner.record_response(ev.response, ev.latency_ms);
  }
  runner.finish(clock.now_ms());
  return runner.log();
}

SessionLog run_object_task(const TrialPlan& plan, PickupSource& source, Clock& clock,
                           const ExperimentConfig& cfg, const SessionMeta& meta) {
  if (plan.protocol != Protocol::ObjectTask) throw Error(ErrorCode::InvalidArgument, "not an object-task plan");
  SessionRunner runner(plan, cfg, meta);
  runner.begin_training(clock.now_ms());
  runner.begin_testing();
  const std::string mode = plan.mode.value_or("");
  while (runner.has_next()) {
    const auto object = std::get<ObjectKind>(runner.next_stimulus());
    const auto ev = source.pickup(object, runner.next_index(), mode);
    if (ev && ev->object != object) {
      throw Error(ErrorCode::Validation, "pickup event for " + std::string(object_name(ev->object)) +
                                             " while " + std::string(object_name(object)) + " was presented");
    }
    if (ev) clock.wait(ev->elapsed_ms);
    runner.record_pickup(ev ? std::optional<double>(ev->elapsed_ms) : std::nullopt);
  }
  runner.finish(clock.now_ms());
  return runner.log();
}

ObjectStudy gen_object_study(const BodySite& site, std::uint64_t seed, const ExperimentConfig& cfg) {
  ObjectStudy study;
  for (const auto& m : builtin_modes(default_layout())) study.mode_order.push_back(m.label());
  std::mt19937_64 rng(mix_seed(seed, 0));
  std::shuffle(study.mode_order.begin(), study.mode_order.end(), rng);
  for (std::size_t i = 0; i < study.mode_order.size(); ++i) {
    TrialPlan plan = gen_plan(Protocol::ObjectTask, site, mix_seed(seed, i + 1), study.mode_order[i], cfg);
    study.plans.push_back(std::move(plan));
  }
  return study;
}

std::vector<SessionLog> run_object_study(const ObjectStudy& study, PickupSource& source, Clock& clock,
                                         const ExperimentConfig& cfg, const SessionMeta& meta) {
  std::vector<SessionLog> logs;
  for (const auto& plan : study.plans) {
    SessionMeta m = meta;
    m.session_id.clear();
    logs.push_back(run_object_task(plan, source, clock, cfg, m));
  }
  return logs;
}

}  // namespace tactwin
