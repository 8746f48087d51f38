#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "analysis.hpp"
#include "doctest.h"
#include "service.hpp"
#include "session_log.hpp"
#include "ws_client.hpp"

using namespace tactwin;
using nlohmann::json;
using testing_support::WsTestClient;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tactwin_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ServiceConfig test_config(const std::filesystem::path& logs) {
  ServiceConfig cfg;
  cfg.bind = "127.0.0.1:0";
  cfg.log_dir = logs;
  cfg.stimulus_pace_ms = 0.0;
  return cfg;
}

// Reads broadcast events until a session summary arrives.
std::vector<std::string> observe(WsTestClient& c) {
  std::vector<std::string> events;
  for (;;) {
    auto text = c.read_text();
    const auto j = json::parse(text);
    if (!j.contains("id")) continue;
    events.push_back(text);
    if (j["type"] == "session_summary") return events;
  }
}

// Answers each trial with whatever the patches just played.
json operate(WsTestClient& op, const json& start) {
  op.send(start);
  std::vector<int> felt;
  for (;;) {
    const auto j = op.read();
    const std::string type = j.value("type", "");
    if (type == "error") FAIL("unexpected error " << j.dump());
    if (type == "motor_state" && j["source"] == "stimulus") felt = j["active"].get<std::vector<int>>();
    if (type == "trial_start") {
      if (j["protocol"] == "pair-location") {
        op.send({{"type", "response"}, {"value", felt}});
      } else {
        op.send({{"type", "response"}, {"value", felt.at(0)}});
      }
    }
    if (type == "session_summary") return j;
  }
}

}  // namespace

TEST_CASE("bind addresses") {
  CHECK(parse_bind("0.0.0.0:80") == std::pair<std::string, std::uint16_t>{"0.0.0.0", 80});
  CHECK(parse_bind("[::1]:9000").first == "::1");
  CHECK_THROWS_AS(parse_bind("localhost"), Error);
  CHECK_THROWS_AS(parse_bind("host:99999"), Error);
  ::setenv(kBindEnvVar, "127.0.0.1:9911", 1);
  CHECK(default_bind() == "127.0.0.1:9911");
  ::unsetenv(kBindEnvVar);
  CHECK(default_bind() == kDefaultBind);
  CHECK_THROWS_AS(service_config_from_json({{"colour", "red"}}), Error);
  CHECK(service_config_from_json({{"mode", "palm:3"}}).mode == "palm:3");
}

TEST_CASE("live single-location session with two observers") {
  const auto logs = temp_dir("svc_logs");
  Service svc(test_config(logs));
  svc.start();
  const auto port = svc.port();
  REQUIRE(port != 0);

  WsTestClient a(port), b(port), op(port);
  // Frames are flowing before any session exists.
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  std::vector<std::string> ea, eb;
  std::thread ta([&] { ea = observe(a); });
  std::thread tb([&] { eb = observe(b); });

  // Malformed input gets a typed error and changes nothing.
  op.send_text("{not json");
  json err;
  do {
    err = op.read();
  } while (err.contains("id"));
  CHECK(err["type"] == "error");
  CHECK(err["code"] == "parse");
  op.send({{"type", "response"}, {"value", 1}});
  do {
    err = op.read();
  } while (err.contains("id"));
  CHECK(err["code"] == "state");
  op.send({{"type", "control"}, {"action", "start"}, {"protocol", "telepathy"}});
  do {
    err = op.read();
  } while (err.contains("id"));
  CHECK(err["code"] == "validation");
  CHECK(svc.control({{"type", "control"}, {"action", "status"}})["session"].is_null());

  const json summary_msg = operate(op, {{"type", "control"}, {"action", "start"}, {"protocol", "single"},
                                        {"site", "shoulder"}, {"seed", 7}, {"participant", "P01"}});
  ta.join();
  tb.join();

  const auto& summary = summary_msg["summary"];
  CHECK(summary["accuracy"] == 1.0);
  CHECK(summary["trials"] == 30);
  const auto counts = summary["confusion"]["counts"].get<std::vector<std::vector<int>>>();
  REQUIRE(counts.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) CHECK(counts[i][j] == (i == j ? 5 : 0));
  }

  // Both observers saw the same stream once they were both connected.
  const auto first_common = std::max(json::parse(ea.front())["id"].get<long>(), json::parse(eb.front())["id"].get<long>());
  auto tail = [&](const std::vector<std::string>& ev) {
    std::vector<std::string> out;
    for (const auto& e : ev) {
      if (json::parse(e)["id"].get<long>() >= first_common) out.push_back(e);
    }
    return out;
  };
  CHECK(tail(ea) == tail(eb));
  long prev_id = 0, prev_seq = 0;
  std::size_t frames = 0;
  for (const auto& e : ea) {
    const auto j = json::parse(e);
    if (prev_id) CHECK(j["id"].get<long>() == prev_id + 1);
    prev_id = j["id"].get<long>();
    if (j.contains("seq")) {
      CHECK(j["seq"].get<long>() == prev_seq + 1);
      prev_seq = j["seq"].get<long>();
    }
    frames += j["type"] == "frame";
  }
  CHECK(frames > 0);

  // Persisted log reproduces the live summary byte for byte.
  const std::string id = summary["session_id"];
  const auto log = load_session_log(logs / (id + ".jsonl"));
  CHECK(session_summary(log) == summary);
  CHECK(session_summary_text(log) == slurp(logs / (id + ".summary.json")));

  // HTTP endpoints.
  const auto health = testing_support::http_get(port, "/health");
  CHECK(health.status == 200);
  CHECK(json::parse(health.body)["status"] == "ok");
  const auto list = json::parse(testing_support::http_get(port, "/sessions").body);
  REQUIRE(list.size() == 1);
  CHECK(list[0]["session_id"] == id);
  const auto got = testing_support::http_get(port, "/sessions/" + id + "/log");
  CHECK(got.status == 200);
  CHECK(got.body == slurp(logs / (id + ".jsonl")));
  CHECK(testing_support::http_get(port, "/sessions/nope/log").status == 404);
  CHECK(testing_support::http_get(port, "/sessions/..%2Fx/log").status == 400);
  CHECK(testing_support::http_get(port, "/elsewhere").status == 404);

  a.close();
  b.close();
  op.close();
  svc.stop();
  CHECK_FALSE(svc.running());
  std::filesystem::remove_all(logs);
}

TEST_CASE("control path: config changes, abort and timeouts") {
  const auto logs = temp_dir("svc_ctl");
  auto cfg = test_config(logs);
  cfg.stream = false;
  Service svc(cfg);
  svc.start();
  auto ctl = [&](json m) {
    m["type"] = "control";
    return svc.control(m);
  };
  CHECK(ctl({{"action", "set_mode"}, {"mode", "palm:6"}})["config"]["mode"] == "palm:6");
  CHECK(ctl({{"action", "set_mode"}, {"mode", "palm:5"}})["type"] == "error");
  CHECK(ctl({{"action", "status"}})["config"]["mode"] == "palm:6");
  CHECK(ctl({{"action", "set_threshold"}, {"threshold", 0.3}})["config"]["threshold"] == 0.3);
  CHECK(ctl({{"action", "set_threshold"}, {"threshold", "high"}})["type"] == "error");
  CHECK(ctl({{"action", "set_object"}, {"object", "glass"}})["config"]["object"] == "glass");
  CHECK(ctl({{"action", "fly"}})["type"] == "error");

  CHECK(ctl({{"action", "start"}, {"protocol", "pair"}, {"seed", 3}})["type"] == "ack");
  CHECK(ctl({{"action", "start"}, {"protocol", "pair"}})["code"] == "state");
  for (int i = 0; i < 200 && ctl({{"action", "status"}})["session"]["state"] != "testing"; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  CHECK(svc.control({{"type", "response"}, {"value", {1, 1}}})["type"] == "error");
  CHECK(svc.control({{"type", "response"}, {"value", "M1"}})["type"] == "error");
  CHECK(ctl({{"action", "status"}})["session"]["done"] == 0);
  CHECK(svc.control({{"type", "response"}, {"value", {2, 0}}})["type"] == "ack");
  CHECK(ctl({{"action", "status"}})["session"]["done"] == 1);
  CHECK(ctl({{"action", "abort"}})["session"]["state"] == "aborted");
  CHECK(ctl({{"action", "abort"}})["code"] == "state");

  // A short timeout turns silence into a rejected trial.
  CHECK(ctl({{"action", "start"}, {"protocol", "intensity"}, {"timeout_ms", 20}})["type"] == "ack");
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  const auto st = ctl({{"action", "status"}});
  CHECK(st["session"]["done"].get<int>() >= 2);
  ctl({{"action", "abort"}});
  svc.stop();
  std::filesystem::remove_all(logs);
}

TEST_CASE("bind failure is reported") {
  const auto logs = temp_dir("svc_bind");
  Service first(test_config(logs));
  first.start();
  auto cfg = test_config(logs);
  cfg.bind = "127.0.0.1:" + std::to_string(first.port());
  Service second(cfg);
  CHECK_THROWS_AS(second.start(), Error);
  first.stop();
}
