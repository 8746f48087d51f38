#include "tactwin/tactwin.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include "analysis.hpp"
#include "error.hpp"
#include "feedback.hpp"
#include "glove.hpp"
#include "json.hpp"
#include "pipeline.hpp"
#include "responder.hpp"
#include "service.hpp"
#include "session_log.hpp"
#include "stats.hpp"
#include "transport.hpp"

#ifndef TACTWIN_VERSION
#define TACTWIN_VERSION "0.0.0"
#endif

using nlohmann::json;
using namespace tactwin;

struct tw_pipeline {
  std::unique_ptr<Pipeline> pipeline;
};

struct tw_service {
  std::unique_ptr<Service> service;
};

namespace {

thread_local std::string g_last_error;

tw_status fail(tw_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

tw_status status_of(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return TW_ERR_INVALID_ARGUMENT;
    case ErrorCode::OutOfRange: return TW_ERR_OUT_OF_RANGE;
    case ErrorCode::Config: return TW_ERR_CONFIG;
    case ErrorCode::Parse: return TW_ERR_PARSE;
    case ErrorCode::Io: return TW_ERR_IO;
    case ErrorCode::Precondition: return TW_ERR_PRECONDITION;
    case ErrorCode::Validation: return TW_ERR_VALIDATION;
    case ErrorCode::Encoding: return TW_ERR_ENCODING;
    case ErrorCode::State: return TW_ERR_STATE;
  }
  return TW_ERR_INTERNAL;
}

template <class F>
tw_status guarded(F&& f) {
  g_last_error.clear();
  try {
    return f();
  } catch (const Error& e) {
    return fail(status_of(e.code()), e.what());
  } catch (const json::parse_error& e) {
    return fail(TW_ERR_PARSE, e.what());
  } catch (const json::exception& e) {
    return fail(TW_ERR_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(TW_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(TW_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size());
  out[s.size()] = '\0';
  return out;
}

json parse_config(const char* text) {
  if (!text || !*text) return json::object();
  json j = json::parse(text);
  if (!j.is_object()) throw Error(ErrorCode::Config, "configuration must be a JSON object");
  return j;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorCode::Config, "unknown key '" + key + "'");
  }
}

RegionMap resolve_mode(const std::string& spec, const SensorLayout& layout) {
  if (spec.find(':') != std::string::npos && !std::filesystem::exists(spec)) {
    return parse_mode_spec(spec, layout).map;
  }
  return load_mode_file(spec, layout.grid());
}

json command_json(const MotorCommand& c) {
  json ids = json::array();
  json levels = json::array();
  for (const auto& a : c.activations) {
    ids.push_back(a.motor_id);
    levels.push_back(a.intensity);
  }
  return {{"motors", ids}, {"intensities", levels}};
}

json link_json(const LinkStats& s) {
  return {{"sent", s.sent},           {"delivered", s.delivered}, {"dropped", s.dropped},
          {"reordered", s.reordered}, {"in_flight", s.in_flight}, {"mean_latency_ms", s.mean_latency_ms}};
}

ExperimentConfig experiment_config(const json& j) {
  ExperimentConfig cfg;
  const auto policy = parse_pair_policy(j.value("pair_policy", "exact"));
  if (!policy) throw Error(ErrorCode::Config, "unknown pair policy '" + j.value("pair_policy", "") + "'");
  cfg.pair_policy = *policy;
  return cfg;
}

json run_experiment(const json& j) {
  check_keys(j, {"protocol", "site", "seed", "responder", "sigma", "confusion", "participant", "session_id",
                 "pair_policy", "loss", "log_dir", "mode"});
  const std::string protocol_text = j.value("protocol", "single-location");
  const auto protocol = parse_protocol(protocol_text);
  if (!protocol) throw Error(ErrorCode::Config, "unknown protocol '" + protocol_text + "'");
  const BodySite site = BodySite::from_name(j.value("site", "shoulder"));
  site.validate();
  const std::uint64_t seed = j.value("seed", std::uint64_t{1});
  const ExperimentConfig cfg = experiment_config(j);
  const double loss = j.value("loss", 0.0);

  SessionMeta meta;
  meta.participant = j.value("participant", "P01");
  meta.session_id = j.value("session_id", "");
  VirtualClock clock;
  std::vector<SessionLog> logs;

  if (*protocol == Protocol::ObjectTask) {
    PickupModelConfig pcfg;
    pcfg.seed = seed;
    SimulatedPickup source(pcfg, default_layout());
    meta.config.responder = "simulated-pickup";
    if (j.contains("mode")) {
      const TrialPlan plan = gen_plan(Protocol::ObjectTask, site, seed, j["mode"].get<std::string>(), cfg);
      logs.push_back(run_object_task(plan, source, clock, cfg, meta));
    } else {
      logs = run_object_study(gen_object_study(site, seed, cfg), source, clock, cfg, meta);
    }
  } else {
    ResponderModel model;
    const std::string kind = j.value("responder", "perfect");
    const auto k = parse_responder_kind(kind);
    if (!k) throw Error(ErrorCode::Config, "unknown responder '" + kind + "'");
    model.kind = *k;
    model.site = site;
    model.seed = seed;
    model.sigma = j.value("sigma", model.sigma);
    if (j.contains("confusion")) {
      if (j["confusion"].is_string()) {
        model.confusion = load_confusion_table(j["confusion"].get<std::string>());
      } else {
        model.confusion = j["confusion"].get<Matrix>();
      }
    }
    model.validate();
    meta.config.responder = std::string(responder_kind_name(model.kind));
    SimulatedParticipant participant(model, cfg);
    const TrialPlan plan = gen_plan(*protocol, site, seed, std::nullopt, cfg);
    if (loss > 0.0) {
      ChannelConfig ch;
      ch.loss_prob = loss;
      ch.seed = seed;
      LinkStimulusSink sink(ch, clock);
      logs.push_back(run_session(plan, sink, participant, clock, cfg, meta));
    } else {
      CodecStimulusSink sink;
      logs.push_back(run_session(plan, sink, participant, clock, cfg, meta));
    }
  }

  json sessions = json::array();
  for (const auto& log : logs) {
    json entry{{"session_id", log.session_id}, {"summary", session_summary(log)}};
    if (j.contains("log_dir")) {
      const std::filesystem::path dir = j["log_dir"].get<std::string>();
      entry["log_file"] = persist_session(log, dir).string();
      std::ofstream out(dir / (log.session_id + ".summary.json"), std::ios::binary | std::ios::trunc);
      out << session_summary_text(log);
      if (!out) throw Error(ErrorCode::Io, "cannot write summary for " + log.session_id);
    }
    sessions.push_back(std::move(entry));
  }
  return {{"sessions", sessions}};
}

PipelineConfig pipeline_config(const json& j, std::string& mode) {
  check_keys(j, {"object", "grip", "noise", "mode", "threshold", "encoder", "gain", "scan_rate_hz", "seed", "loss",
                 "latency_ms", "jitter_ms", "reorder", "queue_capacity", "loop"});
  PipelineConfig cfg;
  if (j.contains("object")) {
    const auto o = parse_object(j["object"].get<std::string>());
    if (!o) throw Error(ErrorCode::Config, "unknown object '" + j["object"].get<std::string>() + "'");
    cfg.scenario.object = *o;
  }
  cfg.scenario.grip_strength = j.value("grip", cfg.scenario.grip_strength);
  cfg.scenario.noise_sigma = j.value("noise", cfg.scenario.noise_sigma);
  if (j.contains("encoder")) {
    const auto e = parse_encoder(j["encoder"].get<std::string>());
    if (!e) throw Error(ErrorCode::Config, "unknown encoder '" + j["encoder"].get<std::string>() + "'");
    cfg.encoder.kind = *e;
  }
  cfg.encoder.threshold = j.value("threshold", cfg.encoder.threshold);
  cfg.encoder.gain = j.value("gain", cfg.encoder.gain);
  cfg.scan_rate_hz = j.value("scan_rate_hz", cfg.scan_rate_hz);
  if (!(cfg.scan_rate_hz > 0.0)) throw Error(ErrorCode::Config, "scan rate must be positive");
  cfg.encoder.dt_ms = 1000.0 / cfg.scan_rate_hz;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.channel.seed = cfg.seed;
  cfg.channel.loss_prob = j.value("loss", cfg.channel.loss_prob);
  cfg.channel.latency_ms = j.value("latency_ms", cfg.channel.latency_ms);
  cfg.channel.jitter_ms = j.value("jitter_ms", cfg.channel.jitter_ms);
  cfg.channel.reorder_prob = j.value("reorder", cfg.channel.reorder_prob);
  cfg.queue_capacity = j.value("queue_capacity", cfg.queue_capacity);
  cfg.loop = j.value("loop", cfg.loop);
  cfg.scenario.validate();
  cfg.encoder.validate();
  cfg.channel.validate();
  mode = j.value("mode", "finger:6");
  return cfg;
}

}  // namespace

extern "C" {

const char* tw_version(void) { return TACTWIN_VERSION; }

const char* tw_status_string(tw_status status) {
  switch (status) {
    case TW_OK: return "ok";
    case TW_ERR_INVALID_ARGUMENT: return "invalid argument";
    case TW_ERR_OUT_OF_RANGE: return "out of range";
    case TW_ERR_CONFIG: return "configuration error";
    case TW_ERR_PARSE: return "parse error";
    case TW_ERR_IO: return "i/o error";
    case TW_ERR_PRECONDITION: return "precondition failed";
    case TW_ERR_VALIDATION: return "validation error";
    case TW_ERR_ENCODING: return "encoding error";
    case TW_ERR_STATE: return "invalid state";
    case TW_ERR_NULL_POINTER: return "null pointer";
    case TW_ERR_BUFFER_TOO_SMALL: return "buffer too small";
    case TW_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* tw_last_error(void) { return g_last_error.c_str(); }

void tw_string_free(char* s) { std::free(s); }

tw_status tw_piezo_readout(double pressure, uint16_t* count) {
  if (!count) return fail(TW_ERR_NULL_POINTER, "count is null");
  return guarded([&] {
    *count = piezo_readout(pressure, PiezoModel{});
    return TW_OK;
  });
}

tw_status tw_invert_count(double count, double* pressure, int* saturated) {
  if (!pressure) return fail(TW_ERR_NULL_POINTER, "pressure is null");
  return guarded([&] {
    bool sat = false;
    *pressure = invert_count(count, PiezoModel{}, &sat);
    if (saturated) *saturated = sat ? 1 : 0;
    return TW_OK;
  });
}

tw_status tw_quantization_bound(double* bound) {
  if (!bound) return fail(TW_ERR_NULL_POINTER, "bound is null");
  return guarded([&] {
    *bound = quantization_bound(PiezoModel{});
    return TW_OK;
  });
}

tw_status tw_scan(const double* pressure, size_t n, uint16_t* counts) {
  if (!pressure || !counts) return fail(TW_ERR_NULL_POINTER, "null buffer");
  return guarded([&] {
    const SensorGrid grid;
    if (n != grid.total()) return fail(TW_ERR_INVALID_ARGUMENT, "expected " + std::to_string(grid.total()) + " values");
    PressureFrame f{std::vector<double>(pressure, pressure + n), 0.0};
    const auto raw = tdma_scan(f, PiezoModel{}, ScanConfig::row_major(grid), grid);
    std::copy(raw.counts.begin(), raw.counts.end(), counts);
    return TW_OK;
  });
}

tw_status tw_layout_text(char** text) {
  if (!text) return fail(TW_ERR_NULL_POINTER, "text is null");
  return guarded([&] {
    *text = dup_string(layout_to_text(default_layout()));
    return TW_OK;
  });
}

tw_status tw_template_text(const char* object, char** text) {
  if (!object || !text) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    const auto o = parse_object(object);
    if (!o) return fail(TW_ERR_INVALID_ARGUMENT, std::string("unknown object '") + object + "'");
    *text = dup_string(template_to_text(default_template(*o, default_layout())));
    return TW_OK;
  });
}

tw_status tw_mode_list(char** out) {
  if (!out) return fail(TW_ERR_NULL_POINTER, "output is null");
  return guarded([&] {
    json list = json::array();
    for (const auto& m : builtin_modes(default_layout())) {
      list.push_back({{"mode", m.label()}, {"focus", focus_name(m.focus)}, {"num_motors", m.num_motors},
                      {"assignment", m.map.assignment()}});
    }
    *out = dup_string(list.dump());
    return TW_OK;
  });
}

tw_status tw_mode_show(const char* spec, char** text) {
  if (!spec || !text) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    *text = dup_string(mode_to_text(resolve_mode(spec, default_layout())));
    return TW_OK;
  });
}

tw_status tw_compress(const char* spec, const double* frame, size_t n, double* averages, size_t capacity,
                      size_t* num_motors) {
  if (!spec || !frame || !num_motors) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    const auto map = resolve_mode(spec, default_layout());
    if (n != map.size()) return fail(TW_ERR_INVALID_ARGUMENT, "expected " + std::to_string(map.size()) + " values");
    const auto out = compress(PressureFrame{std::vector<double>(frame, frame + n), 0.0}, map);
    *num_motors = out.size();
    if (!averages || capacity < out.size()) return fail(TW_ERR_BUFFER_TOO_SMALL, "averages buffer too small");
    std::copy(out.begin(), out.end(), averages);
    return TW_OK;
  });
}

tw_status tw_pipeline_create(const char* config_json, tw_pipeline** out) {
  if (!out) return fail(TW_ERR_NULL_POINTER, "output is null");
  *out = nullptr;
  return guarded([&] {
    std::string mode;
    const auto cfg = pipeline_config(parse_config(config_json), mode);
    const auto layout = default_layout();
    auto map = resolve_mode(mode, layout);
    auto p = std::make_unique<tw_pipeline>();
    p->pipeline = std::make_unique<Pipeline>(cfg, layout, std::move(map));
    *out = p.release();
    return TW_OK;
  });
}

tw_status tw_pipeline_step(tw_pipeline* p, char** tick_json) {
  if (!p || !tick_json) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    const auto t = p->pipeline->step();
    json j{{"t_ms", t.t_ms},
           {"truth", t.truth.values},
           {"counts", t.raw.counts},
           {"averages", t.averages},
           {"command", command_json(t.sent_command)},
           {"received", t.received.values},
           {"frame_fresh", t.frame_fresh},
           {"motor_state", command_json(t.motor_state)},
           {"in_flight", t.in_flight}};
    *tick_json = dup_string(j.dump());
    return TW_OK;
  });
}

tw_status tw_pipeline_stats(const tw_pipeline* p, char** out) {
  if (!p || !out) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    const auto& pl = *p->pipeline;
    json j{{"t_ms", pl.now_ms()},
           {"mode", pl.map().name()},
           {"link", link_json(pl.link())},
           {"max_inbox_depth", pl.max_inbox_depth()},
           {"queue_capacity", pl.config().queue_capacity},
           {"inbox_evictions", pl.inbox_evictions()},
           {"max_in_flight", pl.max_in_flight()},
           {"missing_seqs", pl.missing_seqs().size()}};
    *out = dup_string(j.dump());
    return TW_OK;
  });
}

void tw_pipeline_destroy(tw_pipeline* p) { delete p; }

tw_status tw_experiment_run(const char* config_json, char** result_json) {
  if (!result_json) return fail(TW_ERR_NULL_POINTER, "output is null");
  return guarded([&] {
    *result_json = dup_string(run_experiment(parse_config(config_json)).dump());
    return TW_OK;
  });
}

tw_status tw_analyze_path(const char* input, const char* report_dir, const char* options_json,
                          char** summary_json) {
  if (!input || !report_dir) return fail(TW_ERR_NULL_POINTER, "null path");
  return guarded([&] {
    const json o = parse_config(options_json);
    check_keys(o, {"blocks", "scope", "method"});
    AnalysisOptions opts;
    if (o.contains("blocks")) {
      const std::string b = o["blocks"].get<std::string>();
      if (b == "subjects") {
        opts.blocks = FriedmanBlocks::Subjects;
      } else if (b == "subject-object") {
        opts.blocks = FriedmanBlocks::SubjectObject;
      } else {
        return fail(TW_ERR_CONFIG, "unknown blocking '" + b + "'");
      }
    }
    if (o.contains("scope")) {
      const auto s = parse_norm_scope(o["scope"].get<std::string>());
      if (!s) return fail(TW_ERR_CONFIG, "unknown normalization scope");
      opts.scope = *s;
    }
    if (o.contains("method")) {
      const std::string m = o["method"].get<std::string>();
      if (m == "auto") {
        opts.method = PValueMethod::Auto;
      } else if (m == "chi-square") {
        opts.method = PValueMethod::ChiSquare;
      } else if (m == "exact") {
        opts.method = PValueMethod::Exact;
      } else {
        return fail(TW_ERR_CONFIG, "unknown p-value method '" + m + "'");
      }
    }
    const json summary = analyze_path(input, report_dir, opts);
    if (summary_json) *summary_json = dup_string(summary.dump(2) + "\n");
    return TW_OK;
  });
}

tw_status tw_session_summary(const char* log_path, char** summary_text) {
  if (!log_path || !summary_text) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    *summary_text = dup_string(session_summary_text(load_session_log(log_path)));
    return TW_OK;
  });
}

tw_status tw_service_create(const char* config_json, tw_service** out) {
  if (!out) return fail(TW_ERR_NULL_POINTER, "output is null");
  *out = nullptr;
  return guarded([&] {
    auto s = std::make_unique<tw_service>();
    s->service = std::make_unique<Service>(service_config_from_json(parse_config(config_json)));
    *out = s.release();
    return TW_OK;
  });
}

tw_status tw_service_start(tw_service* s) {
  if (!s) return fail(TW_ERR_NULL_POINTER, "service is null");
  return guarded([&] {
    s->service->start();
    return TW_OK;
  });
}

tw_status tw_service_port(const tw_service* s, uint16_t* port) {
  if (!s || !port) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    *port = s->service->port();
    return TW_OK;
  });
}

tw_status tw_service_control(tw_service* s, const char* message_json, char** reply_json) {
  if (!s || !message_json || !reply_json) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    *reply_json = dup_string(s->service->control(json::parse(message_json)).dump());
    return TW_OK;
  });
}

tw_status tw_service_last_summary(const tw_service* s, char** summary_json) {
  if (!s || !summary_json) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    const auto summary = s->service->last_summary();
    if (!summary) return fail(TW_ERR_STATE, "no session has completed");
    *summary_json = dup_string(summary->dump(2) + "\n");
    return TW_OK;
  });
}

tw_status tw_service_wait(tw_service* s) {
  if (!s) return fail(TW_ERR_NULL_POINTER, "service is null");
  return guarded([&] {
    s->service->wait();
    return TW_OK;
  });
}

tw_status tw_service_stop(tw_service* s) {
  if (!s) return fail(TW_ERR_NULL_POINTER, "service is null");
  return guarded([&] {
    s->service->stop();
    return TW_OK;
  });
}

void tw_service_destroy(tw_service* s) {
  try {
    delete s;
  } catch (...) {
  }
}

tw_status tw_friedman(const double* data, size_t n_blocks, size_t k, tw_pvalue_method method, double* chi2,
                      double* p) {
  if (!data || !chi2 || !p) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    PValueMethod m = PValueMethod::Auto;
    switch (method) {
      case TW_PVALUE_AUTO: m = PValueMethod::Auto; break;
      case TW_PVALUE_CHI_SQUARE: m = PValueMethod::ChiSquare; break;
      case TW_PVALUE_EXACT: m = PValueMethod::Exact; break;
      default: return fail(TW_ERR_INVALID_ARGUMENT, "unknown p-value method");
    }
    std::vector<std::vector<double>> rows(n_blocks);
    for (size_t i = 0; i < n_blocks; ++i) rows[i].assign(data + i * k, data + (i + 1) * k);
    const auto r = friedman(rows, m);
    *chi2 = r.chi2;
    *p = r.p;
    return TW_OK;
  });
}

tw_status tw_chi_square_sf(double x, double df, double* p) {
  if (!p) return fail(TW_ERR_NULL_POINTER, "p is null");
  return guarded([&] {
    *p = chi_square_sf(x, df);
    return TW_OK;
  });
}

tw_status tw_aggregate_site_score(double intensity, double single, double pair, double* score, int* percent) {
  if (!score) return fail(TW_ERR_NULL_POINTER, "score is null");
  return guarded([&] {
    *score = aggregate_site_score(intensity, single, pair);
    if (percent) *percent = percent_round(*score);
    return TW_OK;
  });
}

uint16_t tw_crc16(const uint8_t* bytes, size_t len) {
  if (!bytes) len = 0;
  return crc16_ccitt_false(std::span<const std::uint8_t>(bytes, len));
}

tw_status tw_packet_encode(uint8_t type, uint8_t seq, const uint8_t* payload, size_t len, uint8_t* out,
                           size_t capacity, size_t* written) {
  if ((!payload && len) || !written) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    Packet pk{static_cast<PacketType>(type), seq, std::vector<std::uint8_t>(payload, payload + len)};
    const auto bytes = encode_packet(pk);
    *written = bytes.size();
    if (!out || capacity < bytes.size()) return fail(TW_ERR_BUFFER_TOO_SMALL, "output buffer too small");
    std::copy(bytes.begin(), bytes.end(), out);
    return TW_OK;
  });
}

tw_status tw_packet_decode(const uint8_t* bytes, size_t len, uint8_t* type, uint8_t* seq, uint8_t* payload,
                           size_t capacity, size_t* payload_len) {
  if ((!bytes && len) || !type || !seq || !payload_len) return fail(TW_ERR_NULL_POINTER, "null argument");
  return guarded([&] {
    const auto r = decode_packet(std::span<const std::uint8_t>(bytes, len));
    if (const auto* err = std::get_if<DecodeError>(&r)) return fail(TW_ERR_PARSE, decode_error_name(*err));
    const auto& pk = std::get<Packet>(r);
    *type = static_cast<uint8_t>(pk.type);
    *seq = pk.seq;
    *payload_len = pk.payload.size();
    if (capacity < pk.payload.size() || (!payload && !pk.payload.empty())) {
      return fail(TW_ERR_BUFFER_TOO_SMALL, "payload buffer too small");
    }
    std::copy(pk.payload.begin(), pk.payload.end(), payload);
    return TW_OK;
  });
}

}  // extern "C"
