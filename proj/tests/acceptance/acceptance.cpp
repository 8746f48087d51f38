// One PASS/FAIL line per acceptance criterion; exit status is the number of
// failed criteria.
//
//   acceptance <path-to-cli> [work-dir]

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "feedback.hpp"
#include "glove.hpp"
#include "pipeline.hpp"
#include "responder.hpp"
#include "service.hpp"
#include "session_log.hpp"
#include "stats.hpp"
#include "transport.hpp"
#include "ws_client.hpp"

using namespace tactwin;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && pass) {
      pass = false;
      detail = what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Motor for a sensor under each built-in mode, written out from the mode
// table rather than taken from the library.
int table_motor(const std::string& mode, Region region, std::size_t col) {
  const bool palm = region == Region::Palm;
  const int finger = palm ? -1 : static_cast<int>(region);  // Thumb..Pinky = 0..4
  if (mode == "finger:6") return palm ? 5 : finger;
  if (mode == "finger:3") return palm ? 2 : (finger <= 1 ? 0 : 1);
  if (mode == "finger:1") return palm ? kNoFeedback : 0;
  if (mode == "palm:6") {
    if (palm) return col <= 2 ? 0 : 1;
    return finger <= 2 ? finger + 2 : 5;
  }
  if (mode == "palm:3") return palm ? 0 : (finger <= 1 ? 1 : 2);
  if (mode == "palm:1") return palm ? 0 : kNoFeedback;
  return -2;
}

Outcome compression_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto layout = default_layout();
  const auto modes = builtin_modes(layout);
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int f = 0; f < 1000; ++f) {
    PressureFrame frame;
    for (int i = 0; i < 25; ++i) frame.values.push_back(u(rng));
    for (const auto& m : modes) {
      std::map<int, std::pair<double, int>> groups;
      for (std::size_t i = 0; i < 25; ++i) {
        const int motor = table_motor(m.label(), layout.region_of(i), cell_of(i, layout.grid()).second);
        if (motor == kNoFeedback) continue;
        groups[motor].first += frame.values[i];
        groups[motor].second += 1;
      }
      const auto got = compress(frame, m.map);
      o.require(got.size() == groups.size(), m.label() + ": motor count differs from the table");
      for (const auto& [motor, acc] : groups) {
        if (motor < 0 || static_cast<std::size_t>(motor) >= got.size()) continue;
        worst = std::max(worst, std::abs(got[motor] - acc.first / acc.second));
      }
    }
  }
  const double secs = seconds_since(t0);
  o.require(worst <= 1e-12, "max deviation " + fmt(worst));
  o.require(secs < 5.0, "took " + fmt(secs) + " s");
  if (o.pass) o.detail = "6000 mode-frames, max |diff| " + fmt(worst) + ", " + fmt(secs, 3) + " s";
  return o;
}

Outcome scan_oracle() {
  Outcome o;
  const PiezoModel m;
  const auto cfg = ScanConfig::row_major({});
  const double bound = quantization_bound(m);
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  std::size_t mismatches = 0;
  for (int f = 0; f < 1000; ++f) {
    PressureFrame field;
    for (int i = 0; i < 25; ++i) field.values.push_back(u(rng));
    const auto raw = tdma_scan(field, m, cfg);
    for (std::size_t i = 0; i < 25; ++i) mismatches += raw.counts[i] != piezo_readout(field.values[i], m);
    const auto back = normalize(raw, m).frame;
    for (std::size_t i = 0; i < 25; ++i) worst = std::max(worst, std::abs(back.values[i] - field.values[i]));
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " cells differ from the cellwise readout");
  o.require(worst <= bound, "round trip error " + fmt(worst) + " > bound " + fmt(bound));
  if (o.pass) o.detail = "1000 fields exact; round trip " + fmt(worst) + " <= bound " + fmt(bound);
  return o;
}

Outcome trial_balance() {
  Outcome o;
  struct Expect {
    Protocol p;
    std::size_t total;
    std::size_t classes;
    std::size_t each;
  };
  const std::vector<Expect> expect{{Protocol::Intensity, 30, 3, 10},
                                   {Protocol::SingleLocation, 30, 6, 5},
                                   {Protocol::PairLocation, 45, 15, 3},
                                   {Protocol::ObjectTask, 15, 5, 3}};
  const std::vector<BodySite> sites{BodySite::upper_arm(), BodySite::shoulder(), BodySite::lower_back()};
  for (const auto& e : expect) {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const auto& site = sites[seed % sites.size()];
      const auto plan = gen_plan(e.p, site, seed,
                                 e.p == Protocol::ObjectTask ? std::optional<std::string>("finger:6") : std::nullopt);
      std::map<std::string, std::size_t> counts;
      for (const auto& s : plan.stimuli) counts[stimulus_label(s)]++;
      bool ok = plan.stimuli.size() == e.total && counts.size() == e.classes;
      for (const auto& [label, n] : counts) ok = ok && n == e.each;
      if (!ok) {
        o.require(false, std::string(protocol_name(e.p)) + " seed " + std::to_string(seed));
        return o;
      }
    }
  }
  o.detail = "4 protocols x 1000 seeds: 30/30/45/15 with 10/5/3/3 per stimulus";
  return o;
}

Outcome aggregate_fixtures() {
  Outcome o;
  const int a = percent_round(aggregate_site_score(0.76, 0.88, 0.66));
  const int b = percent_round(aggregate_site_score(0.76, 0.90, 0.49));
  const int c = percent_round(aggregate_site_score(0.73, 0.81, 0.42));
  o.require(a == 77 && b == 72 && c == 65, "got " + std::to_string(a) + "/" + std::to_string(b) + "/" +
                                               std::to_string(c));
  o.detail = std::to_string(a) + "% " + std::to_string(b) + "% " + std::to_string(c) + "%";
  return o;
}

Outcome friedman_correctness() {
  Outcome o;
  const auto constant = friedman({{4, 4, 4}, {2, 2, 2}, {9, 9, 9}});
  o.require(constant.chi2 == 0.0 && constant.p == 1.0, "constant blocks gave chi2 " + fmt(constant.chi2));
  const auto fixture = friedman({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}}, PValueMethod::ChiSquare);
  o.require(std::abs(fixture.chi2 - 6.0) < 1e-12, "3x3 fixture chi2 " + fmt(fixture.chi2, 17));
  const double p6 = chi_square_sf(6.0, 2.0);
  o.require(std::abs(p6 - std::exp(-3.0)) <= 1e-9, "p(6, 2) = " + fmt(p6, 17));

  const auto t0 = Clock::now();
  std::mt19937_64 rng(31337);
  std::normal_distribution<double> z;
  const int runs = 10000;
  int reject = 0, reject_chi2 = 0;
  for (int r = 0; r < runs; ++r) {
    std::vector<std::vector<double>> data(3, std::vector<double>(6));
    for (auto& row : data) {
      for (auto& v : row) v = z(rng);
    }
    reject += friedman(data).p < 0.05;
    reject_chi2 += friedman(data, PValueMethod::ChiSquare).p < 0.05;
  }
  const double secs = seconds_since(t0);
  const double rate = reject / double(runs);
  o.require(rate >= 0.035 && rate <= 0.065, "null rejection rate " + fmt(rate));
  o.require(secs < 60.0, "null calibration took " + fmt(secs) + " s");
  if (o.pass) {
    o.detail = "chi2(3x3) = 6, |p - e^-3| < 1e-9, null rate " + fmt(rate) + " (asymptotic p would give " +
               fmt(reject_chi2 / double(runs)) + "), " + fmt(secs, 3) + " s";
  }
  return o;
}

Outcome responder_convergence() {
  Outcome o;
  Matrix target(6, std::vector<double>(6));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (auto& row : target) {
    double sum = 0.0;
    for (auto& v : row) sum += (v = u(rng));
    for (auto& v : row) v /= sum;
  }
  ResponderModel model;
  model.kind = ResponderKind::ConfusionMatrix;
  model.confusion = target;
  model.site = BodySite::shoulder();
  model.seed = 99;
  Responder r(model);
  double worst = 0.0;
  for (int i = 0; i < 6; ++i) {
    std::vector<int> counts(6, 0);
    for (int t = 0; t < 10000; ++t) ++counts[std::get<MotorId>(r.respond(MotorId{i})).id];
    for (int j = 0; j < 6; ++j) worst = std::max(worst, std::abs(counts[j] / 10000.0 - target[i][j]));
  }
  o.require(worst <= 0.03, "max cell error " + fmt(worst));

  auto end_swaps = [](Arrangement a) {
    ResponderModel g;
    g.kind = ResponderKind::SpatialGaussian;
    g.sigma = 1.0;
    g.site = {"site", a, 6};
    g.seed = 4;
    Responder resp(g);
    int n = 0;
    for (int t = 0; t < 10000; ++t) {
      n += std::get<MotorId>(resp.respond(MotorId{0})).id == 5;
      n += std::get<MotorId>(resp.respond(MotorId{5})).id == 0;
    }
    return n;
  };
  const int ring = end_swaps(Arrangement::Ring);
  const int line = end_swaps(Arrangement::Line);
  o.require(ring > line, "ring " + std::to_string(ring) + " vs line " + std::to_string(line));
  if (o.pass) {
    o.detail = "max cell error " + fmt(worst) + "; 0<->5 confusions ring " + std::to_string(ring) + " > line " +
               std::to_string(line) + " (sigma 1)";
  }
  return o;
}

Outcome codec() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> byte(0, 255), type(1, 4), len(0, static_cast<int>(kMaxPayload));
  for (int i = 0; i < 10000; ++i) {
    Packet p{static_cast<PacketType>(type(rng)), static_cast<std::uint8_t>(byte(rng)), {}};
    p.payload.resize(len(rng));
    for (auto& b : p.payload) b = static_cast<std::uint8_t>(byte(rng));
    const auto decoded = decode_packet(encode_packet(p));
    const auto* back = std::get_if<Packet>(&decoded);
    if (!back || !(*back == p)) {
      o.require(false, "fuzz packet " + std::to_string(i) + " did not round trip");
      break;
    }
  }
  const auto ref = encode_packet({PacketType::MotorCommand, 42, {0, 255, 1, 128, 3, 77}});
  std::size_t accepted = 0;
  for (std::size_t bit = 0; bit < ref.size() * 8; ++bit) {
    auto bad = ref;
    bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    accepted += std::holds_alternative<Packet>(decode_packet(bad));
  }
  o.require(accepted == 0, std::to_string(accepted) + " corrupted packets accepted");
  const std::string vec = "123456789";
  const auto crc = crc16_ccitt_false(std::span(reinterpret_cast<const std::uint8_t*>(vec.data()), vec.size()));
  o.require(crc == 0x29B1, "CRC check value " + std::to_string(crc));

  ChannelConfig cfg;
  cfg.loss_prob = 0.3;
  cfg.seed = 8;
  Channel ch(cfg);
  for (int i = 0; i < 10000; ++i) ch.send(encode_packet({PacketType::SensorFrame, std::uint8_t(i), {1}}), i * 10.0);
  const std::size_t delivered = ch.drain().size();
  const double frac = delivered / 10000.0;
  o.require(std::abs(frac - 0.70) <= 0.02, "delivery fraction " + fmt(frac));
  o.require(link_stats(ch.trace()).delivered == delivered, "trace disagrees with deliveries");
  if (o.pass) {
    o.detail = "10000 fuzzed round trips, " + std::to_string(ref.size() * 8) +
               " bit flips all rejected, crc 0x29B1, delivery " + fmt(frac) + " at loss 0.3";
  }
  return o;
}

int run(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

// Drives a live single-location session over the WebSocket API, answering
// with whatever was played.
std::string live_session(const fs::path& log_dir) {
  ServiceConfig cfg;
  cfg.bind = "127.0.0.1:0";
  cfg.log_dir = log_dir;
  cfg.stimulus_pace_ms = 0.0;
  Service svc(cfg);
  svc.start();
  testing_support::WsTestClient op(svc.port());
  op.send({{"type", "control"}, {"action", "start"}, {"protocol", "single"}, {"site", "upper-arm"}, {"seed", 11}});
  std::vector<int> felt;
  std::string id;
  for (;;) {
    const auto j = op.read();
    const std::string type = j.value("type", "");
    if (type == "error") throw std::runtime_error(j.dump());
    if (type == "motor_state" && j["source"] == "stimulus") felt = j["active"].get<std::vector<int>>();
    if (type == "trial_start") op.send({{"type", "response"}, {"value", felt.at(0)}});
    if (type == "session_summary") {
      id = j["summary"]["session_id"];
      break;
    }
  }
  op.close();
  svc.stop();
  return id;
}

Outcome end_to_end(const std::string& cli, const fs::path& work) {
  Outcome o;
  fs::remove_all(work);
  const fs::path logs = work / "logs";
  const fs::path report = work / "report";
  fs::create_directories(logs);
  std::vector<std::string> ids;
  for (const char* p : {"intensity", "single", "pair"}) {
    const std::string cmd = "\"" + cli + "\" run-experiment --responder perfect --protocol " + p +
                            " --site shoulder --seed 7 --log-dir \"" + logs.string() + "\" > \"" +
                            (work / (std::string(p) + ".out")).string() + "\"";
    o.require(run(cmd) == 0, std::string("run-experiment ") + p + " failed");
  }
  for (const auto& entry : fs::directory_iterator(logs)) {
    if (entry.path().extension() != kSessionLogExtension) continue;
    const auto log = load_session_log(entry.path());
    const auto s = session_summary(log);
    o.require(s["accuracy"].is_number() && s["accuracy"].get<double>() == 1.0,
              log.session_id + " accuracy " + s["accuracy"].dump());
    ids.push_back(log.session_id);
  }
  o.require(ids.size() == 3, std::to_string(ids.size()) + " logs written");

  std::string live_id;
  try {
    live_id = live_session(logs);
    ids.push_back(live_id);
  } catch (const std::exception& e) {
    o.require(false, std::string("live session: ") + e.what());
  }

  o.require(run("\"" + cli + "\" analyze --input \"" + logs.string() + "\" --report \"" + report.string() +
                "\" > \"" + (work / "analyze.out").string() + "\"") == 0,
            "analyze failed");
  std::size_t identical = 0;
  for (const auto& id : ids) {
    const auto live = slurp(logs / (id + ".summary.json"));
    const auto offline = slurp(report / (id + ".summary.json"));
    o.require(!live.empty() && live == offline, id + ": re-analysis differs from the live summary");
    identical += !live.empty() && live == offline;
  }

  const auto layout = default_layout();
  PipelineConfig pcfg;
  pcfg.loop = true;
  pcfg.scenario.noise_sigma = 0.02;
  Pipeline pipe(pcfg, layout, parse_mode_spec("finger:6", layout).map);
  const std::size_t flight_cap =
      2 * (static_cast<std::size_t>(std::ceil((pcfg.channel.latency_ms + pcfg.channel.jitter_ms) / pipe.period_ms())) + 1);
  std::size_t first_half = 0, second_half = 0;
  for (int i = 0; i < 6000; ++i) {
    const auto t = pipe.step();
    auto& half = i < 3000 ? first_half : second_half;
    half = std::max(half, t.in_flight + t.inbox_high_water);
  }
  o.require(pipe.max_in_flight() <= flight_cap, "in flight reached " + std::to_string(pipe.max_in_flight()));
  o.require(pipe.max_inbox_depth() <= pcfg.queue_capacity && pipe.inbox_evictions() == 0, "inbox overflowed");
  o.require(second_half <= first_half, "queue depth grew over the run");
  if (o.pass) {
    o.detail = "3 CLI sessions at 1.0, " + std::to_string(identical) + "/" + std::to_string(ids.size()) +
               " summaries byte-identical (incl. live service), 60 s pipeline max in flight " +
               std::to_string(pipe.max_in_flight()) + " <= " + std::to_string(flight_cap) + ", inbox " +
               std::to_string(pipe.max_inbox_depth()) + "/" + std::to_string(pcfg.queue_capacity);
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <tactwin-cli> [work-dir]\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / ("tactwin_accept_" + std::to_string(::getpid()));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"compression-oracle", compression_oracle},
      {"scan-oracle", scan_oracle},
      {"trial-balance", trial_balance},
      {"aggregate-score-fixtures", aggregate_fixtures},
      {"friedman-correctness", friedman_correctness},
      {"responder-convergence", responder_convergence},
      {"codec", codec},
      {"end-to-end", [&] { return end_to_end(cli, work); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("%s %-26s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed;
}
