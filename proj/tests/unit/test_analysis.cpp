#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <unistd.h>

#include "analysis.hpp"
#include "doctest.h"
#include "responder.hpp"
#include "session_log.hpp"

using namespace tactwin;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tactwin_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

SessionLog simulated(Protocol p, const BodySite& site, ResponderKind kind, std::uint64_t seed,
                     const std::string& who = "P01") {
  const auto plan = gen_plan(p, site, seed);
  CodecStimulusSink sink;
  ResponderModel model;
  model.kind = kind;
  model.site = site;
  model.seed = seed;
  SimulatedParticipant part(model, {});
  VirtualClock clock;
  SessionMeta meta;
  meta.participant = who;
  return run_session(plan, sink, part, clock, {}, meta);
}

std::string read(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("aggregate site scores") {
  CHECK(percent_round(aggregate_site_score(0.76, 0.88, 0.66)) == 77);
  CHECK(percent_round(aggregate_site_score(0.76, 0.90, 0.49)) == 72);
  CHECK(percent_round(aggregate_site_score(0.73, 0.81, 0.42)) == 65);
  CHECK(aggregate_site_score(0.76, 0.88, 0.66) == doctest::Approx(0.766667).epsilon(1e-5));
  CHECK(aggregate_site_score(0.1, 0.5, 0.9) == aggregate_site_score(0.9, 0.1, 0.5));
  CHECK(percent_round(0.125) == 13);
  CHECK(percent_round(0.005) == 1);
  CHECK_THROWS_AS(aggregate_site_score(1.2, 0.0, 0.0), Error);
}

TEST_CASE("confusion of a perfect session is diagonal") {
  const auto log = simulated(Protocol::SingleLocation, BodySite::shoulder(), ResponderKind::Perfect, 1);
  const auto m = confusion(log.records, log.protocol, log.site);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) CHECK(m.counts[i][j] == (i == j ? 5u : 0u));
  }
  CHECK(m.accuracy() == 1.0);

  const auto empty = confusion({}, Protocol::Intensity, BodySite::shoulder());
  CHECK(empty.total() == 0);
  CHECK_FALSE(empty.accuracy().has_value());
}

TEST_CASE("confusion counts equal an independent tally") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto log = simulated(Protocol::PairLocation, BodySite::upper_arm(), ResponderKind::Uniform, seed);
    const auto m = confusion(log.records, log.protocol, log.site);
    std::map<std::pair<std::string, std::string>, std::size_t> tally;
    for (const auto& r : log.records) tally[{stimulus_label(r.stimulus), stimulus_label(*r.response)}]++;
    for (std::size_t i = 0; i < m.size(); ++i) {
      for (std::size_t j = 0; j < m.size(); ++j) {
        const auto it = tally.find({m.labels[i], m.labels[j]});
        CHECK(m.counts[i][j] == (it == tally.end() ? 0 : it->second));
      }
    }
    CHECK(m.total() == log.records.size());
  }
}

TEST_CASE("confusion rejects mixed protocols and keeps rejections apart") {
  auto a = simulated(Protocol::SingleLocation, BodySite::shoulder(), ResponderKind::Perfect, 1);
  const auto b = simulated(Protocol::Intensity, BodySite::shoulder(), ResponderKind::Perfect, 1);
  auto mixed = a.records;
  mixed.push_back(b.records.front());
  CHECK_THROWS_AS(confusion(mixed, Protocol::SingleLocation, a.site), Error);
  CHECK_THROWS_AS(confusion(a.records, Protocol::ObjectTask, a.site), Error);

  a.records[0].response.reset();
  const auto m = confusion(a.records, a.protocol, a.site);
  CHECK(m.total() == 30);
  CHECK(m.trace() == 29);
  std::size_t rej = 0;
  for (auto r : m.rejections) rej += r;
  CHECK(rej == 1);
}

TEST_CASE("normalize times") {
  std::vector<TimedTrial> t{{"s", "a", ObjectKind::Ball, 2.0}, {"s", "a", ObjectKind::Book, 4.0}};
  const auto n = normalize_times(t);
  CHECK(n[0] == doctest::Approx(2.0 / 3.0));
  CHECK(n[1] == doctest::Approx(4.0 / 3.0));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(100.0, 5000.0);
  std::vector<TimedTrial> many;
  for (int i = 0; i < 90; ++i) many.push_back({"s" + std::to_string(i % 3), "m" + std::to_string(i % 6), ObjectKind::Ball, u(rng)});
  for (NormScope scope : {NormScope::PerSubject, NormScope::PerSubjectCondition, NormScope::Global}) {
    const auto out = normalize_times(many, scope);
    std::map<std::string, std::pair<double, int>> acc;
    for (std::size_t i = 0; i < many.size(); ++i) {
      const std::string key = scope == NormScope::Global        ? ""
                              : scope == NormScope::PerSubject ? many[i].subject
                                                               : many[i].subject + "|" + many[i].condition;
      acc[key].first += out[i];
      acc[key].second++;
    }
    for (const auto& [k, v] : acc) CHECK(v.first / v.second == doctest::Approx(1.0).epsilon(1e-12));
  }
  std::vector<TimedTrial> constant(5, TimedTrial{"s", "a", ObjectKind::Ball, 7.0});
  for (double v : normalize_times(constant)) CHECK(v == 1.0);
  CHECK_THROWS_AS(normalize_times({}), Error);
  std::vector<TimedTrial> zero{{"s", "a", ObjectKind::Ball, 0.0}};
  CHECK_THROWS_AS(normalize_times(zero), Error);
}

namespace {

class ConstantPickup final : public PickupSource {
 public:
  explicit ConstantPickup(double ms) : ms_(ms) {}
  std::optional<PickupEvent> pickup(ObjectKind o, std::size_t, const std::string&) override {
    return PickupEvent{o, ms_};
  }

 private:
  double ms_;
};

std::vector<SessionLog> study_logs(PickupSource& src, int subjects) {
  std::vector<SessionLog> logs;
  for (int s = 0; s < subjects; ++s) {
    const auto study = gen_object_study(BodySite::upper_arm(), 100 + s);
    VirtualClock clock;
    SessionMeta meta;
    meta.participant = "S" + std::to_string(s + 1);
    for (auto& l : run_object_study(study, src, clock, {}, meta)) logs.push_back(std::move(l));
  }
  return logs;
}

}  // namespace

TEST_CASE("object task summary") {
  ConstantPickup constant(3000.0);
  const auto flat = study_logs(constant, 3);
  const auto s = object_task_summary(flat);
  CHECK(s.data.size() == 3);
  CHECK(s.data.front().size() == 6);
  CHECK(s.friedman.p == 1.0);
  for (double m : s.mean_normalized) CHECK(m == doctest::Approx(1.0));

  PickupModelConfig cfg;
  SimulatedPickup sim(cfg, default_layout());
  const auto logs = study_logs(sim, 3);
  const auto r = object_task_summary(logs);
  // Recompute from the raw logs.
  std::map<std::string, std::pair<double, int>> subject_totals;
  for (const auto& l : logs) {
    for (const auto& rec : l.records) {
      subject_totals[l.participant].first += *rec.elapsed_ms;
      subject_totals[l.participant].second++;
    }
  }
  std::map<std::string, std::pair<double, int>> per_mode;
  for (const auto& l : logs) {
    const auto& [tot, n] = subject_totals[l.participant];
    for (const auto& rec : l.records) {
      per_mode[l.config.mode].first += *rec.elapsed_ms / (tot / n);
      per_mode[l.config.mode].second++;
    }
  }
  for (std::size_t j = 0; j < r.modes.size(); ++j) {
    const auto& [sum, n] = per_mode[r.modes[j]];
    CHECK(r.mean_normalized[j] == doctest::Approx(sum / n).epsilon(1e-12));
  }
  const auto by_object = object_task_summary(logs, FriedmanBlocks::SubjectObject);
  CHECK(by_object.data.size() == 15);
  CHECK(by_object.friedman.method == PValueMethod::ChiSquare);

  auto missing = logs;
  missing.erase(missing.begin());
  CHECK_THROWS_AS(object_task_summary(missing), Error);
}

TEST_CASE("session logs round trip through JSONL") {
  for (Protocol p : {Protocol::Intensity, Protocol::SingleLocation, Protocol::PairLocation}) {
    auto log = simulated(p, BodySite::lower_back(), ResponderKind::Uniform, 4);
    log.records[2].response.reset();
    std::istringstream in(session_log_to_jsonl(log));
    const auto back = parse_session_log(in);
    CHECK(back == log);
    CHECK(session_summary_text(back) == session_summary_text(log));
  }
  std::istringstream junk("{\"kind\":\"session\"}\n");
  CHECK_THROWS_AS(parse_session_log(junk), Error);
  std::istringstream empty("");
  CHECK_THROWS_AS(parse_session_log(empty), Error);
}

TEST_CASE("analyze a directory of logs") {
  const auto dir = temp_dir("analyze_in");
  const auto out = temp_dir("analyze_out");
  for (Protocol p : {Protocol::Intensity, Protocol::SingleLocation, Protocol::PairLocation}) {
    const auto log = simulated(p, BodySite::shoulder(), ResponderKind::Perfect, 7);
    persist_session(log, dir);
    std::ofstream(dir / (log.session_id + ".summary.json"), std::ios::binary) << session_summary_text(log);
  }
  const auto summary = analyze_path(dir, out);
  CHECK(summary["sessions"].size() == 3);
  for (const auto& s : summary["sessions"]) CHECK(s["accuracy"].get<double>() == 1.0);
  CHECK(summary["site_scores"].size() == 2);
  CHECK(summary["site_scores"][0]["percent"] == 100);
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().string().ends_with(".summary.json")) {
      CHECK(read(entry.path()) == read(out / entry.path().filename()));
    }
  }
  CHECK(std::filesystem::exists(out / "site_scores.csv"));
  CHECK(std::filesystem::exists(out / "summary.json"));
  CHECK(read(dir / "sessions.index").find("P01_pair-location_shoulder_s7") != std::string::npos);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(out);
}
