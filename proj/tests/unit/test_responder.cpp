#include <cmath>
#include <sstream>

#include "doctest.h"
#include "responder.hpp"

using namespace tactwin;

namespace {

Matrix band_matrix() {
  Matrix m(6, std::vector<double>(6, 0.0));
  for (int i = 0; i < 6; ++i) {
    m[i][i] = 0.7;
    m[i][(i + 1) % 6] = 0.2;
    m[i][(i + 5) % 6] = 0.1;
  }
  return m;
}

std::size_t end_confusions(Arrangement a, double sigma) {
  ResponderModel model;
  model.kind = ResponderKind::SpatialGaussian;
  model.sigma = sigma;
  model.site = {"s", a, 6};
  model.seed = 17;
  Responder r(model);
  std::size_t n = 0;
  for (int i = 0; i < 5000; ++i) {
    n += std::get<MotorId>(r.respond(MotorId{0})).id == 5;
    n += std::get<MotorId>(r.respond(MotorId{5})).id == 0;
  }
  return n;
}

}  // namespace

TEST_CASE("confusion responder reproduces its matrix") {
  ResponderModel model;
  model.kind = ResponderKind::ConfusionMatrix;
  model.confusion = band_matrix();
  model.site = BodySite::shoulder();
  model.seed = 2;
  Responder r(model);
  const int per = 10000;
  for (int i = 0; i < 6; ++i) {
    std::vector<int> counts(6, 0);
    for (int t = 0; t < per; ++t) ++counts[std::get<MotorId>(r.respond(MotorId{i})).id];
    for (int j = 0; j < 6; ++j) CHECK(std::abs(counts[j] / double(per) - model.confusion[i][j]) <= 0.03);
  }
}

TEST_CASE("ring adjacency confuses the end motors") {
  CHECK(end_confusions(Arrangement::Ring, 1.0) > end_confusions(Arrangement::Line, 1.0));
  CHECK(end_confusions(Arrangement::Line, 1.0) < 20);
}

TEST_CASE("pair responses never repeat a motor") {
  ResponderModel model;
  model.kind = ResponderKind::Uniform;
  model.site = BodySite::upper_arm();
  Responder r(model);
  for (int i = 0; i < 2000; ++i) {
    const auto p = std::get<MotorPair>(r.respond(MotorPair::of(0, 3)));
    CHECK(p.first != p.second);
    CHECK(p.first < p.second);
  }
}

TEST_CASE("confusion tables are validated") {
  std::istringstream ok("0.5 0.5\n0.25,0.75\n");
  CHECK(parse_confusion_table(ok).size() == 2);
  std::istringstream off("0.5 0.6\n0.5 0.5\n");
  CHECK_THROWS_AS(parse_confusion_table(off), Error);
  std::istringstream neg("1.5 -0.5\n0.5 0.5\n");
  CHECK_THROWS_AS(parse_confusion_table(neg), Error);
  std::istringstream ragged("1\n0.5 0.5\n");
  CHECK_THROWS_AS(parse_confusion_table(ragged), Error);

  ResponderModel model;
  model.kind = ResponderKind::ConfusionMatrix;
  model.confusion = {{1.0, 0.0}, {0.0, 1.0}};
  model.site = BodySite::shoulder();
  Responder r(model);
  CHECK_THROWS_AS(r.respond(MotorId{1}), Error);
}

TEST_CASE("pickup model penalizes modes that never fire") {
  PickupModelConfig cfg;
  cfg.noise_sigma = 0.0;
  SimulatedPickup p(cfg, default_layout());
  const auto layout = default_layout();
  const auto onset = p.feedback_onset_ms(ObjectKind::Ball, parse_mode_spec("finger:6", layout).map, 1);
  REQUIRE(onset.has_value());
  CHECK(*onset > 0.0);
  CHECK(*onset < cfg.grasp.onset_ms + 20.0);
  // Glass barely touches the palm, so a palm-only mode stays silent.
  CHECK_FALSE(p.feedback_onset_ms(ObjectKind::Glass, parse_mode_spec("palm:1", layout).map, 1).has_value());
  const auto silent = p.pickup(ObjectKind::Glass, 0, "palm:1");
  REQUIRE(silent.has_value());
  CHECK(silent->elapsed_ms == doctest::Approx(cfg.reach_ms * cfg.object_factor[2] + cfg.no_feedback_penalty_ms));

  cfg.encoder.kind = EncoderKind::Derivative;
  cfg.encoder.gain = 0.5;
  SimulatedPickup d(cfg, layout);
  CHECK(d.feedback_onset_ms(ObjectKind::Ball, parse_mode_spec("finger:6", layout).map, 1).has_value());
}
