#include "session_log.hpp"

#include <fstream>
#include <sstream>

namespace tactwin {

using nlohmann::json;

json stimulus_to_json(const Stimulus& s) {
  if (const auto* l = std::get_if<IntensityLevel>(&s)) return l->level;
  if (const auto* m = std::get_if<MotorId>(&s)) return m->id;
  if (const auto* p = std::get_if<MotorPair>(&s)) return json::array({p->first, p->second});
  return std::string(object_name(std::get<ObjectKind>(s)));
}

Stimulus stimulus_from_json(const json& j, Protocol p) {
  try {
    switch (p) {
      case Protocol::Intensity: return IntensityLevel{j.get<int>()};
      case Protocol::SingleLocation: return MotorId{j.get<int>()};
      case Protocol::PairLocation:
        if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::Parse, "pair stimulus must be a two-element array");
        return MotorPair::of(j[0].get<int>(), j[1].get<int>());
      case Protocol::ObjectTask: {
        const auto o = parse_object(j.get<std::string>());
        if (!o) throw Error(ErrorCode::Parse, "unknown object " + j.dump());
        return *o;
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("bad stimulus value: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::Parse, e.what());
  }
  throw Error(ErrorCode::Parse, "unknown protocol");
}

json session_header_json(const SessionLog& log) {
  const auto& c = log.config;
  return json{
      {"kind", "session"},
      {"session_id", log.session_id},
      {"participant", log.participant},
      {"protocol", protocol_name(log.protocol)},
      {"site", {{"name", log.site.name}, {"arrangement", arrangement_name(log.site.arrangement)},
                {"num_motors", log.site.num_motors}}},
      {"config", {{"threshold", c.threshold}, {"encoder", c.encoder}, {"mode", c.mode}, {"seed", c.seed},
                  {"pair_policy", pair_policy_name(c.pair_policy)}, {"timeout_ms", c.timeout_ms},
                  {"stimulus_ms", c.stimulus_ms}, {"intensity_levels", c.intensity_levels},
                  {"responder", c.responder}}},
      {"plan_length", log.plan_length},
      {"record_count", log.records.size()},
      {"complete", log.complete},
      {"started_ms", log.started_ms},
      {"completed_ms", log.completed_ms},
  };
}

json trial_record_json(const TrialRecord& r) {
  json j{
      {"trial_index", r.trial_index},
      {"stimulus", stimulus_to_json(r.stimulus)},
      {"response", r.response ? stimulus_to_json(*r.response) : json(nullptr)},
      {"correct", r.correct},
      {"score", r.score},
      {"response_latency_ms", r.response_latency_ms},
  };
  if (r.elapsed_ms) j["elapsed_ms"] = *r.elapsed_ms;
  return j;
}

std::string session_log_to_jsonl(const SessionLog& log) {
  std::string out = session_header_json(log).dump();
  out += '\n';
  for (const auto& r : log.records) {
    out += trial_record_json(r).dump();
    out += '\n';
  }
  return out;
}

SessionLog parse_session_log(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  SessionLog log;
  bool have_header = false;
  std::size_t declared_records = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (!have_header) {
        if (j.value("kind", "") != "session") throw Error(ErrorCode::Parse, "first line is not a session header");
        const auto protocol = parse_protocol(j.at("protocol").get<std::string>());
        if (!protocol) throw Error(ErrorCode::Parse, "unknown protocol in header");
        log.protocol = *protocol;
        log.session_id = j.at("session_id").get<std::string>();
        log.participant = j.at("participant").get<std::string>();
        const auto& site = j.at("site");
        log.site.name = site.at("name").get<std::string>();
        log.site.arrangement = site.at("arrangement").get<std::string>() == "ring" ? Arrangement::Ring : Arrangement::Line;
        log.site.num_motors = site.at("num_motors").get<int>();
        const auto& c = j.at("config");
        log.config.threshold = c.at("threshold").get<double>();
        log.config.encoder = c.at("encoder").get<std::string>();
        log.config.mode = c.at("mode").get<std::string>();
        log.config.seed = c.at("seed").get<std::uint64_t>();
        const auto policy = parse_pair_policy(c.at("pair_policy").get<std::string>());
        if (!policy) throw Error(ErrorCode::Parse, "unknown pair policy");
        log.config.pair_policy = *policy;
        log.config.timeout_ms = c.at("timeout_ms").get<double>();
        log.config.stimulus_ms = c.at("stimulus_ms").get<double>();
        log.config.intensity_levels = c.at("intensity_levels").get<std::array<double, 3>>();
        log.config.responder = c.value("responder", "");
        log.plan_length = j.at("plan_length").get<std::size_t>();
        declared_records = j.at("record_count").get<std::size_t>();
        log.complete = j.at("complete").get<bool>();
        log.started_ms = j.at("started_ms").get<double>();
        log.completed_ms = j.at("completed_ms").get<double>();
        have_header = true;
        continue;
      }
      TrialRecord r;
      r.trial_index = j.at("trial_index").get<std::size_t>();
      r.stimulus = stimulus_from_json(j.at("stimulus"), log.protocol);
      if (!j.at("response").is_null()) r.response = stimulus_from_json(j.at("response"), log.protocol);
      r.correct = j.at("correct").get<bool>();
      r.score = j.at("score").get<double>();
      r.response_latency_ms = j.at("response_latency_ms").get<double>();
      if (j.contains("elapsed_ms")) r.elapsed_ms = j.at("elapsed_ms").get<double>();
      log.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, "session log line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_header) throw Error(ErrorCode::Parse, "session log has no header");
  if (declared_records != log.records.size()) {
    throw Error(ErrorCode::Parse, "session log declares " + std::to_string(declared_records) + " records but has " +
                                      std::to_string(log.records.size()));
  }
  return log;
}

void save_session_log(const SessionLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << session_log_to_jsonl(log);
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

SessionLog load_session_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return parse_session_log(in);
}

std::filesystem::path persist_session(const SessionLog& log, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  const auto path = dir / (log.session_id + kSessionLogExtension);
  save_session_log(log, path);
  std::ofstream index(dir / kSessionIndexFile, std::ios::app);
  if (!index) throw Error(ErrorCode::Io, "cannot append to the session index");
  index << json{{"session_id", log.session_id},
                {"participant", log.participant},
                {"protocol", protocol_name(log.protocol)},
                {"site", log.site.name},
                {"complete", log.complete},
                {"records", log.records.size()},
                {"file", path.filename().string()}}
               .dump()
        << '\n';
  return path;
}

}  // namespace tactwin
