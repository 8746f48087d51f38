#include "responder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tactwin {

std::string_view responder_kind_name(ResponderKind k) noexcept {
  switch (k) {
    case ResponderKind::Perfect: return "perfect";
    case ResponderKind::Uniform: return "uniform";
    case ResponderKind::ConfusionMatrix: return "confusion";
    case ResponderKind::SpatialGaussian: return "gaussian";
  }
  return "?";
}

std::optional<ResponderKind> parse_responder_kind(std::string_view name) noexcept {
  if (name == "perfect") return ResponderKind::Perfect;
  if (name == "uniform") return ResponderKind::Uniform;
  if (name == "confusion" || name == "confusion-matrix") return ResponderKind::ConfusionMatrix;
  if (name == "gaussian" || name == "spatial-gaussian") return ResponderKind::SpatialGaussian;
  return std::nullopt;
}

void validate_row_stochastic(const Matrix& m) {
  if (m.empty()) throw Error(ErrorCode::Validation, "confusion matrix is empty");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != m.size()) throw Error(ErrorCode::Validation, "confusion matrix is not square");
    double sum = 0.0;
    for (double v : m[i]) {
      if (!(v >= 0.0)) throw Error(ErrorCode::Validation, "confusion matrix has a negative entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw Error(ErrorCode::Validation, "confusion row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
  }
}

Matrix parse_confusion_table(std::istream& in) {
  Matrix m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw Error(ErrorCode::Parse, "confusion table: bad number '" + tok + "'");
      }
    }
    if (!row.empty()) m.push_back(std::move(row));
  }
  validate_row_stochastic(m);
  return m;
}

Matrix load_confusion_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open confusion table " + path);
  return parse_confusion_table(in);
}

void ResponderModel::validate() const {
  site.validate();
  if (kind == ResponderKind::ConfusionMatrix) validate_row_stochastic(confusion);
  if (kind == ResponderKind::SpatialGaussian && !(sigma > 0.0)) {
    throw Error(ErrorCode::Validation, "spatial sigma must be positive");
  }
}

Responder::Responder(ResponderModel model) : model_(std::move(model)), rng_(model_.seed) { model_.validate(); }

int Responder::perceive(int truth, int k, Arrangement arrangement) {
  switch (model_.kind) {
    case ResponderKind::Perfect: return truth;
    case ResponderKind::Uniform: return std::uniform_int_distribution<int>(0, k - 1)(rng_);
    case ResponderKind::ConfusionMatrix: {
      if (static_cast<int>(model_.confusion.size()) != k) {
        throw Error(ErrorCode::Validation, "confusion matrix has " + std::to_string(model_.confusion.size()) +
                                               " classes, stimulus domain has " + std::to_string(k));
      }
      const auto& row = model_.confusion[static_cast<std::size_t>(truth)];
      return std::discrete_distribution<int>(row.begin(), row.end())(rng_);
    }
    case ResponderKind::SpatialGaussian: {
      const BodySite geometry{"", arrangement, k};
      std::vector<double> w(static_cast<std::size_t>(k));
      for (int j = 0; j < k; ++j) {
        const double d = geometry.distance(truth, j);
        w[static_cast<std::size_t>(j)] = std::exp(-d * d / (2.0 * model_.sigma * model_.sigma));
      }
      return std::discrete_distribution<int>(w.begin(), w.end())(rng_);
    }
  }
  return truth;
}

Stimulus Responder::respond(const Stimulus& stimulus) {
  const int motors = model_.site.num_motors;
  if (const auto* l = std::get_if<IntensityLevel>(&stimulus)) {
    if (l->level < 1 || l->level > 3) throw Error(ErrorCode::Validation, "intensity level must be 1..3");
    return IntensityLevel{perceive(l->level - 1, 3, Arrangement::Line) + 1};
  }
  if (const auto* m = std::get_if<MotorId>(&stimulus)) {
    if (m->id < 0 || m->id >= motors) throw Error(ErrorCode::Validation, "motor id outside the site");
    return MotorId{perceive(m->id, motors, model_.site.arrangement)};
  }
  if (const auto* p = std::get_if<MotorPair>(&stimulus)) {
    if (p->first == p->second || p->first < 0 || p->second < 0 || p->first >= motors || p->second >= motors) {
      throw Error(ErrorCode::Validation, "malformed motor pair");
    }
    if (motors < 2) throw Error(ErrorCode::Validation, "pair stimuli need two motors");
    const int a = perceive(p->first, motors, model_.site.arrangement);
    int b = perceive(p->second, motors, model_.site.arrangement);
    // Nobody reports the same motor twice: resample the second percept.
    for (int tries = 0; b == a && tries < 1000; ++tries) b = perceive(p->second, motors, model_.site.arrangement);
    if (b == a) {
      b = std::uniform_int_distribution<int>(0, motors - 2)(rng_);
      if (b >= a) ++b;
    }
    return MotorPair::of(a, b);
  }
  throw Error(ErrorCode::Validation, "object presentations are not discrimination stimuli");
}

SimulatedParticipant::SimulatedParticipant(ResponderModel model, ExperimentConfig cfg, double latency_ms)
    : responder_(std::move(model)), cfg_(cfg), latency_ms_(latency_ms), guess_rng_(responder_.model().seed ^ 0x5EEDu) {}

ResponseEvent SimulatedParticipant::respond(const TrialPrompt& prompt, const std::optional<MotorCommand>& perceived) {
  ResponseEvent ev;
  ev.latency_ms = latency_ms_;
  std::optional<Stimulus> felt;
  if (perceived) felt = perceived_stimulus(*perceived, prompt.protocol, cfg_);
  if (!felt) {
    const auto domain = stimulus_domain(prompt.protocol, responder_.model().site);
    if (domain.empty()) return ev;
    ev.response = domain[std::uniform_int_distribution<std::size_t>(0, domain.size() - 1)(guess_rng_)];
    return ev;
  }
  ev.response = responder_.respond(*felt);
  return ev;
}

SimulatedPickup::SimulatedPickup(PickupModelConfig cfg, SensorLayout layout)
    : cfg_(std::move(cfg)), layout_(std::move(layout)), rng_(cfg_.seed) {
  cfg_.grasp.validate();
  cfg_.encoder.validate();
}

std::optional<double> SimulatedPickup::feedback_onset_ms(ObjectKind object, const RegionMap& map,
                                                         std::uint64_t seed) const {
  GraspScenario g = cfg_.grasp;
  g.object = object;
  GloveSimulator glove(g, default_template(object, layout_), PiezoModel{},
                       ScanConfig::row_major(layout_.grid(), cfg_.scan_rate_hz), seed, layout_.grid());
  const PiezoModel piezo{};
  EncoderConfig enc = cfg_.encoder;
  enc.dt_ms = 1000.0 / cfg_.scan_rate_hz;
  std::optional<std::vector<double>> prev;
  while (glove.now_ms() < g.end_ms()) {
    const auto sample = glove.next();
    const auto averages = compress(normalize(sample.raw, piezo).frame, map);
    const std::vector<double>& before = prev ? *prev : averages;
    if (!encode(averages, enc, std::span<const double>(before)).empty()) {
      return sample.truth.timestamp_ms - g.start_ms;
    }
    prev = averages;
  }
  return std::nullopt;
}

std::optional<PickupEvent> SimulatedPickup::pickup(ObjectKind object, std::size_t trial_index, const std::string& mode) {
  const CompressionMode m = parse_mode_spec(mode, layout_);
  std::lognormal_distribution<double> handling(0.0, cfg_.noise_sigma);
  const double factor = cfg_.object_factor[static_cast<std::size_t>(object)];
  double elapsed = cfg_.reach_ms * factor * handling(rng_);
  if (const auto it = cfg_.mode_factor.find(mode); it != cfg_.mode_factor.end()) elapsed *= it->second;
  const auto onset = feedback_onset_ms(object, m.map, cfg_.seed + trial_index);
  elapsed += onset ? *onset : cfg_.no_feedback_penalty_ms;
  return PickupEvent{object, elapsed};
}

}  // namespace tactwin
