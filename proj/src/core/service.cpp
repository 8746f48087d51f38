#include "service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <cctype>
#include <charconv>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <future>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "analysis.hpp"
#include "experiment.hpp"
#include "session_log.hpp"

namespace tactwin {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

std::pair<std::string, std::uint16_t> parse_bind(std::string_view spec) {
  const auto colon = spec.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw Error(ErrorCode::Config, "bind address must look like host:port, got '" + std::string(spec) + "'");
  }
  unsigned port = 0;
  const auto digits = spec.substr(colon + 1);
  const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (digits.empty() || res.ec != std::errc() || res.ptr != digits.data() + digits.size() || port > 65535) {
    throw Error(ErrorCode::Config, "bad port in bind address '" + std::string(spec) + "'");
  }
  std::string host(spec.substr(0, colon));
  if (host.size() > 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  return {host, static_cast<std::uint16_t>(port)};
}

std::string default_bind() {
  const char* env = std::getenv(kBindEnvVar);
  return env && *env ? std::string(env) : std::string(kDefaultBind);
}

void ServiceConfig::validate() const {
  parse_bind(bind);
  if (!(frame_rate_hz > 0.0)) throw Error(ErrorCode::Config, "frame rate must be positive");
  if (client_queue_limit == 0) throw Error(ErrorCode::Config, "client queue limit must be positive");
  if (!(stimulus_pace_ms >= 0.0)) throw Error(ErrorCode::Config, "stimulus pace must be non-negative");
  if (!(pipeline.scan_rate_hz > 0.0)) throw Error(ErrorCode::Config, "scan rate must be positive");
  parse_mode_spec(mode, default_layout());
  pipeline.channel.validate();
  pipeline.encoder.validate();
}

ServiceConfig service_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Config, "service config must be a JSON object");
  ServiceConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "bind") c.bind = v.get<std::string>();
      else if (key == "log_dir") c.log_dir = v.get<std::string>();
      else if (key == "mode") c.mode = v.get<std::string>();
      else if (key == "site") c.site = v.get<std::string>();
      else if (key == "frame_rate_hz") c.frame_rate_hz = v.get<double>();
      else if (key == "client_queue_limit") c.client_queue_limit = v.get<std::size_t>();
      else if (key == "stimulus_pace_ms") c.stimulus_pace_ms = v.get<double>();
      else if (key == "stream") c.stream = v.get<bool>();
      else if (key == "handle_signals") c.handle_signals = v.get<bool>();
      else if (key == "stop_after_session") c.stop_after_session = v.get<bool>();
      else if (key == "scan_rate_hz") c.pipeline.scan_rate_hz = v.get<double>();
      else if (key == "threshold") c.pipeline.encoder.threshold = v.get<double>();
      else if (key == "seed") c.pipeline.seed = v.get<std::uint64_t>();
      else if (key == "loss") c.pipeline.channel.loss_prob = v.get<double>();
      else if (key == "object") {
        const auto o = parse_object(v.get<std::string>());
        if (!o) throw Error(ErrorCode::Config, "unknown object " + v.dump());
        c.pipeline.scenario.object = *o;
      } else if (key == "encoder") {
        const auto e = parse_encoder(v.get<std::string>());
        if (!e) throw Error(ErrorCode::Config, "unknown encoder " + v.dump());
        c.pipeline.encoder.kind = *e;
      } else {
        throw Error(ErrorCode::Config, "unknown service config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("bad service config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace detail {
class WsClient;
}
using detail::WsClient;

namespace {

json motor_levels(const MotorCommand& cmd, int motors) {
  std::vector<double> levels(static_cast<std::size_t>(motors), 0.0);
  for (const auto& a : cmd.activations) {
    if (a.motor_id >= 0 && a.motor_id < motors) levels[static_cast<std::size_t>(a.motor_id)] = a.intensity;
  }
  return levels;
}

bool safe_session_id(std::string_view id) {
  if (id.empty() || id.size() > 200 || id.find("..") != std::string_view::npos) return false;
  for (char c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

struct ApiError {
  std::string code;
  std::string message;
};

}  // namespace

struct Service::Impl : std::enable_shared_from_this<Service::Impl> {
  explicit Impl(ServiceConfig c)
      : cfg(std::move(c)),
        acceptor(ioc),
        tick_timer(ioc),
        trial_timer(ioc),
        pace_timer(ioc),
        layout(default_layout()),
        mode(cfg.mode),
        threshold(cfg.pipeline.encoder.threshold),
        object(cfg.pipeline.scenario.object) {}

  ServiceConfig cfg;
  net::io_context ioc;
  tcp::acceptor acceptor;
  net::steady_timer tick_timer;
  net::steady_timer trial_timer;
  net::steady_timer pace_timer;
  std::optional<net::signal_set> signals;
  std::thread worker;
  std::uint16_t bound_port = 0;

  mutable std::mutex state_mutex;  // guards the fields shared with callers
  std::condition_variable stopped_cv;
  bool started = false;
  bool stopped = false;
  std::optional<json> summary;

  // Everything below is touched only on the io thread.
  std::set<std::shared_ptr<WsClient>> clients;
  SteadyClock clock;
  SensorLayout layout;
  std::string mode;
  double threshold;
  ObjectKind object;
  std::optional<Pipeline> pipeline;
  std::uint64_t steps = 0;
  std::optional<MotorCommand> last_motor_state;
  std::uint64_t next_event_id = 1;

  std::optional<SessionRunner> runner;
  CodecStimulusSink sink;
  std::uint64_t session_seq = 0;
  std::uint64_t trial_generation = 0;
  double trial_started_ms = 0.0;
  std::vector<Stimulus> training;
  std::size_t training_next = 0;

  void run_start();
  void do_accept();
  void shutdown();
  void rebuild_pipeline();
  void schedule_tick();
  void on_tick();

  void broadcast(const std::string& type, json body, bool session_scoped = false);
  void add_client(const std::shared_ptr<WsClient>& c) { clients.insert(c); }
  void remove_client(const std::shared_ptr<WsClient>& c) { clients.erase(c); }
  json handle_message(const std::string& text);
  json dispatch(const json& msg);

  json start_session(const json& msg);
  json submit_response(const json& msg, bool timed_out = false);
  json abort_session();
  json set_config(const std::string& action, const json& msg);
  void play_training();
  void start_trial();
  void finish_session();
  bool session_active() const {
    return runner && (runner->state() == SessionState::Training || runner->state() == SessionState::Testing);
  }
  json session_state_json() const;
  json config_json() const;

  http::response<http::string_body> handle_http(const http::request<http::string_body>& req);
};

namespace detail {

class WsClient : public std::enable_shared_from_this<WsClient> {
 public:
  WsClient(tcp::socket&& socket, std::shared_ptr<Service::Impl> svc) : ws_(std::move(socket)), svc_(std::move(svc)) {}

  void accept(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.set_option(websocket::stream_base::decorator(
        [](websocket::response_type& res) { res.set(http::field::server, "tactwin"); }));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->svc_->add_client(self);
      self->read();
    });
  }

  // Returns false when the client has fallen too far behind.
  bool send(std::shared_ptr<const std::string> msg, std::size_t limit) {
    if (closed_) return false;
    if (queue_.size() >= limit) {
      drop();
      return false;
    }
    queue_.push_back(std::move(msg));
    if (!writing_) write_next();
    return true;
  }

  void drop() {
    if (closed_) return;
    closed_ = true;
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->svc_->remove_client(self);
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      const json reply = self->svc_->handle_message(text);
      if (!reply.is_null()) self->send(std::make_shared<const std::string>(reply.dump()), SIZE_MAX);
      self->read();
    });
  }

  void write_next() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->writing_ = false;
        self->drop();
        self->svc_->remove_client(self);
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) {
        self->write_next();
      } else {
        self->writing_ = false;
      }
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<Service::Impl> svc_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool writing_ = false;
  bool closed_ = false;
};

}  // namespace detail

namespace {

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, std::shared_ptr<Service::Impl> svc)
      : stream_(std::move(socket)), svc_(std::move(svc)) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->on_read();
    });
  }

 private:
  void on_read() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/session") {
        stream_.expires_never();
        std::make_shared<WsClient>(stream_.release_socket(), svc_)->accept(std::move(req_));
        return;
      }
      res_ = svc_->handle_http(req_);
    } else {
      res_ = svc_->handle_http(req_);
    }
    res_.keep_alive(false);
    res_.prepare_payload();
    http::async_write(stream_, res_, [self = shared_from_this()](beast::error_code, std::size_t) {
      beast::error_code ec;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  beast::tcp_stream stream_;
  std::shared_ptr<Service::Impl> svc_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  http::response<http::string_body> res_;
};

http::response<http::string_body> json_response(http::status status, const json& body, unsigned version) {
  http::response<http::string_body> res{status, version};
  res.set(http::field::server, "tactwin");
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");
  res.body() = body.dump() + "\n";
  return res;
}

}  // namespace

void Service::Impl::run_start() {
  const auto [host, port] = parse_bind(cfg.bind);
  beast::error_code ec;
  const auto address = net::ip::make_address(host == "localhost" ? "127.0.0.1" : host, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot parse bind host '" + host + "': " + ec.message());
  const tcp::endpoint endpoint(address, port);
  acceptor.open(endpoint.protocol(), ec);
  if (!ec) acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) acceptor.bind(endpoint, ec);
  if (!ec) acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot bind " + cfg.bind + ": " + ec.message());
  bound_port = acceptor.local_endpoint().port();

  if (cfg.handle_signals) {
    signals.emplace(ioc, SIGINT, SIGTERM);
    signals->async_wait([self = shared_from_this()](beast::error_code e, int) {
      if (!e) self->shutdown();
    });
  }
  if (cfg.stream) {
    rebuild_pipeline();
    schedule_tick();
  }
  do_accept();
}

void Service::Impl::do_accept() {
  acceptor.async_accept([self = shared_from_this()](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<HttpSession>(std::move(socket), self)->run();
    self->do_accept();
  });
}

void Service::Impl::shutdown() {
  beast::error_code ec;
  acceptor.close(ec);
  tick_timer.cancel();
  trial_timer.cancel();
  pace_timer.cancel();
  if (signals) signals->cancel(ec);
  for (const auto& c : clients) c->drop();
  clients.clear();
  ioc.stop();
}

void Service::Impl::rebuild_pipeline() {
  PipelineConfig pc = cfg.pipeline;
  pc.scenario.object = object;
  pc.encoder.threshold = threshold;
  pc.loop = true;
  pipeline.emplace(pc, layout, parse_mode_spec(mode, layout).map);
  last_motor_state.reset();
}

void Service::Impl::schedule_tick() {
  const auto period = std::chrono::duration<double, std::milli>(pipeline->period_ms());
  tick_timer.expires_after(std::chrono::duration_cast<net::steady_timer::duration>(period));
  tick_timer.async_wait([self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->on_tick();
    self->schedule_tick();
  });
}

void Service::Impl::on_tick() {
  const std::uint64_t every =
      std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(cfg.pipeline.scan_rate_hz / cfg.frame_rate_hz)));
  const PipelineTick tick = pipeline->step();
  ++steps;
  if (steps % every != 0) return;
  if (!tick.received.values.empty()) {
    broadcast("frame", {{"values", tick.received.values}, {"sim_ms", tick.t_ms}});
  }
  if (!last_motor_state || *last_motor_state != tick.motor_state) {
    last_motor_state = tick.motor_state;
    broadcast("motor_state", {{"source", "glove"},
                              {"mode", mode},
                              {"levels", motor_levels(tick.motor_state, pipeline->map().num_motors())},
                              {"active", tick.motor_state.active_motors()}});
  }
}

void Service::Impl::broadcast(const std::string& type, json body, bool session_scoped) {
  body["type"] = type;
  body["id"] = next_event_id++;
  body["t_ms"] = clock.now_ms();
  if (session_scoped && runner) {
    body["session_id"] = runner->log().session_id;
    body["seq"] = ++session_seq;
  }
  const auto text = std::make_shared<const std::string>(body.dump());
  std::vector<std::shared_ptr<WsClient>> slow;
  for (const auto& c : clients) {
    if (!c->send(text, cfg.client_queue_limit)) slow.push_back(c);
  }
  for (const auto& c : slow) clients.erase(c);
}

json Service::Impl::handle_message(const std::string& text) {
  json msg;
  try {
    msg = json::parse(text);
  } catch (const json::exception& e) {
    return {{"type", "error"}, {"code", "parse"}, {"message", std::string("malformed JSON: ") + e.what()}};
  }
  json reply;
  try {
    reply = dispatch(msg);
  } catch (const ApiError& e) {
    reply = {{"type", "error"}, {"code", e.code}, {"message", e.message}};
  } catch (const Error& e) {
    reply = {{"type", "error"}, {"code", std::string(error_code_name(e.code()))}, {"message", e.what()}};
  } catch (const json::exception& e) {
    reply = {{"type", "error"}, {"code", "validation"}, {"message", e.what()}};
  }
  if (msg.is_object() && msg.contains("req")) reply["reply_to"] = msg["req"];
  return reply;
}

json Service::Impl::dispatch(const json& msg) {
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    throw ApiError{"validation", "message must be an object with a string 'type'"};
  }
  const std::string type = msg["type"].get<std::string>();
  if (type == "response") return submit_response(msg);
  if (type != "control") throw ApiError{"validation", "unknown message type '" + type + "'"};
  if (!msg.contains("action") || !msg["action"].is_string()) {
    throw ApiError{"validation", "control message needs a string 'action'"};
  }
  const std::string action = msg["action"].get<std::string>();
  if (action == "start") return start_session(msg);
  if (action == "abort") return abort_session();
  if (action == "set_mode" || action == "set_threshold" || action == "set_object") return set_config(action, msg);
  if (action == "status") return {{"type", "ack"}, {"session", session_state_json()}, {"config", config_json()}};
  throw ApiError{"validation", "unknown control action '" + action + "'"};
}

json Service::Impl::session_state_json() const {
  if (!runner) return nullptr;
  const auto& log = runner->log();
  return {{"session_id", log.session_id},
          {"state", session_state_name(runner->state())},
          {"protocol", protocol_name(log.protocol)},
          {"site", log.site.name},
          {"done", log.records.size()},
          {"total", log.plan_length}};
}

json Service::Impl::config_json() const {
  return {{"mode", mode}, {"threshold", threshold}, {"object", object_name(object)},
          {"encoder", encoder_name(cfg.pipeline.encoder.kind)}};
}

json Service::Impl::set_config(const std::string& action, const json& msg) {
  if (action == "set_mode") {
    if (!msg.contains("mode") || !msg["mode"].is_string()) throw ApiError{"validation", "set_mode needs 'mode'"};
    const std::string m = msg["mode"].get<std::string>();
    const auto parsed = parse_mode_spec(m, layout);  // throws before anything changes
    mode = m;
    if (pipeline) pipeline->set_map(parsed.map);
  } else if (action == "set_threshold") {
    if (!msg.contains("threshold") || !msg["threshold"].is_number()) {
      throw ApiError{"validation", "set_threshold needs a numeric 'threshold'"};
    }
    const double t = msg["threshold"].get<double>();
    EncoderConfig enc = cfg.pipeline.encoder;
    enc.threshold = t;
    enc.validate();
    threshold = t;
    if (pipeline) pipeline->set_encoder(enc);
  } else {
    if (!msg.contains("object") || !msg["object"].is_string()) throw ApiError{"validation", "set_object needs 'object'"};
    const auto o = parse_object(msg["object"].get<std::string>());
    if (!o) throw ApiError{"validation", "unknown object '" + msg["object"].get<std::string>() + "'"};
    object = *o;
    if (pipeline) rebuild_pipeline();
  }
  json body = config_json();
  body["event"] = "config";
  broadcast("control", body);
  return {{"type", "ack"}, {"config", config_json()}};
}

json Service::Impl::start_session(const json& msg) {
  if (session_active()) throw ApiError{"state", "a session is already running"};
  auto str = [&](const char* key, const std::string& dflt) {
    if (!msg.contains(key)) return dflt;
    if (!msg[key].is_string()) throw ApiError{"validation", std::string("'") + key + "' must be a string"};
    return msg[key].get<std::string>();
  };
  const std::string protocol_text = str("protocol", "");
  const auto protocol = parse_protocol(protocol_text);
  if (!protocol) throw ApiError{"validation", "unknown protocol '" + protocol_text + "'"};
  const BodySite site = BodySite::from_name(str("site", cfg.site));
  site.validate();
  std::uint64_t seed = 1;
  if (msg.contains("seed")) {
    if (!msg["seed"].is_number_unsigned()) throw ApiError{"validation", "'seed' must be a non-negative integer"};
    seed = msg["seed"].get<std::uint64_t>();
  }
  ExperimentConfig ecfg;
  const auto policy = parse_pair_policy(str("pair_policy", "exact"));
  if (!policy) throw ApiError{"validation", "unknown pair policy"};
  ecfg.pair_policy = *policy;
  if (msg.contains("timeout_ms")) {
    if (!msg["timeout_ms"].is_number() || !(msg["timeout_ms"].get<double>() > 0.0)) {
      throw ApiError{"validation", "'timeout_ms' must be positive"};
    }
    ecfg.timeout_ms = msg["timeout_ms"].get<double>();
  }
  const std::string session_mode = str("mode", mode);
  parse_mode_spec(session_mode, layout);
  const std::string participant = str("participant", "P01");
  if (!safe_session_id(participant)) throw ApiError{"validation", "participant ids use letters, digits, '-', '_', '.'"};
  const std::string id = str("session_id", "");
  if (!id.empty() && !safe_session_id(id)) throw ApiError{"validation", "unsafe session id"};

  TrialPlan plan = gen_plan(*protocol, site, seed,
                            *protocol == Protocol::ObjectTask ? std::optional<std::string>(session_mode) : std::nullopt,
                            ecfg);
  SessionMeta meta;
  meta.session_id = id;
  meta.participant = participant;
  meta.config.threshold = threshold;
  meta.config.encoder = std::string(encoder_name(cfg.pipeline.encoder.kind));
  meta.config.mode = session_mode;
  meta.config.responder = "live";
  runner.emplace(std::move(plan), ecfg, meta);
  session_seq = 0;
  ++trial_generation;

  training = runner->begin_training(clock.now_ms());
  training_next = 0;
  json labels = json::array();
  for (const auto& s : training) labels.push_back(stimulus_label(s));
  json body = session_state_json();
  body["event"] = "session_started";
  body["training"] = labels;
  broadcast("control", body, true);
  play_training();
  return {{"type", "ack"}, {"session", session_state_json()}};
}

void Service::Impl::play_training() {
  if (training_next >= training.size()) {
    runner->begin_testing();
    json body = session_state_json();
    body["event"] = "state";
    broadcast("control", body, true);
    start_trial();
    return;
  }
  const Stimulus s = training[training_next++];
  const auto delivered = sink.deliver(stimulus_command(s, runner->config()), Phase::Training);
  broadcast("motor_state", {{"source", "training"},
                            {"stimulus", stimulus_label(s)},
                            {"levels", motor_levels(delivered.value_or(MotorCommand{}), runner->plan().site.num_motors)},
                            {"active", delivered ? delivered->active_motors() : std::vector<int>{}}},
            true);
  const std::uint64_t gen = trial_generation;
  auto next = [self = shared_from_this(), gen](beast::error_code ec) {
    if (ec || gen != self->trial_generation || !self->runner) return;
    self->play_training();
  };
  if (cfg.stimulus_pace_ms <= 0.0) {
    net::post(ioc, [next] { next({}); });
  } else {
    pace_timer.expires_after(std::chrono::duration_cast<net::steady_timer::duration>(
        std::chrono::duration<double, std::milli>(cfg.stimulus_pace_ms)));
    pace_timer.async_wait(next);
  }
}

void Service::Impl::start_trial() {
  if (!runner->has_next()) {
    finish_session();
    return;
  }
  const auto prompt = runner->next_prompt();
  const Stimulus& stimulus = runner->next_stimulus();
  trial_started_ms = clock.now_ms();
  json body{{"trial_index", prompt.trial_index}, {"total", prompt.total}, {"protocol", protocol_name(prompt.protocol)}};
  if (prompt.protocol == Protocol::ObjectTask) {
    body["object"] = object_name(std::get<ObjectKind>(stimulus));
    body["mode"] = runner->log().config.mode;
  } else {
    const auto delivered = sink.deliver(stimulus_command(stimulus, runner->config()), Phase::Testing);
    broadcast("motor_state",
              {{"source", "stimulus"},
               {"levels", motor_levels(delivered.value_or(MotorCommand{}), runner->plan().site.num_motors)},
               {"active", delivered ? delivered->active_motors() : std::vector<int>{}}},
              true);
  }
  broadcast("trial_start", body, true);

  const std::uint64_t gen = ++trial_generation;
  trial_timer.expires_after(std::chrono::duration_cast<net::steady_timer::duration>(
      std::chrono::duration<double, std::milli>(runner->config().timeout_ms)));
  trial_timer.async_wait([self = shared_from_this(), gen](beast::error_code ec) {
    if (ec || gen != self->trial_generation || !self->runner || !self->runner->has_next()) return;
    try {
      self->submit_response({{"type", "response"}, {"value", nullptr}}, true);
    } catch (const std::exception&) {
    }
  });
}

json Service::Impl::submit_response(const json& msg, bool timed_out) {
  if (!runner || runner->state() != SessionState::Testing || !runner->has_next()) {
    throw ApiError{"state", "no trial is waiting for a response"};
  }
  const double latency = timed_out ? runner->config().timeout_ms : clock.now_ms() - trial_started_ms;
  const Protocol protocol = runner->plan().protocol;
  const std::size_t index = runner->next_index();
  const TrialRecord* rec = nullptr;
  json shown;
  if (protocol == Protocol::ObjectTask) {
    std::optional<double> elapsed;
    if (!timed_out) {
      if (msg.contains("elapsed_ms") && msg["elapsed_ms"].is_null()) {
        elapsed.reset();
      } else if (msg.contains("elapsed_ms")) {
        if (!msg["elapsed_ms"].is_number()) throw ApiError{"validation", "'elapsed_ms' must be a number or null"};
        elapsed = msg["elapsed_ms"].get<double>();
      } else {
        elapsed = latency;
      }
    }
    rec = &runner->record_pickup(elapsed);
    shown = elapsed ? json(*elapsed) : json(nullptr);
  } else {
    std::optional<Stimulus> response;
    if (!msg.contains("value")) throw ApiError{"validation", "response needs a 'value'"};
    if (!msg["value"].is_null()) response = stimulus_from_json(msg["value"], protocol);
    rec = &runner->record_response(response, latency);
    shown = rec->response ? stimulus_to_json(*rec->response) : json(nullptr);
  }
  ++trial_generation;
  trial_timer.cancel();

  broadcast("response", {{"trial_index", index}, {"value", shown}, {"latency_ms", rec->response_latency_ms},
                         {"timed_out", timed_out}},
            true);
  json result = trial_record_json(*rec);
  result["stimulus_label"] = stimulus_label(rec->stimulus);
  result["progress"] = {{"done", runner->log().records.size()}, {"total", runner->log().plan_length}};
  broadcast("trial_result", result, true);
  const json ack{{"type", "ack"}, {"trial_index", index}};
  start_trial();
  return ack;
}

json Service::Impl::abort_session() {
  if (!session_active()) throw ApiError{"state", "no session is running"};
  runner->abort(clock.now_ms());
  ++trial_generation;
  trial_timer.cancel();
  pace_timer.cancel();
  json body = session_state_json();
  body["event"] = "aborted";
  broadcast("control", body, true);
  if (cfg.stop_after_session) net::post(ioc, [self = shared_from_this()] { self->shutdown(); });
  return {{"type", "ack"}, {"session", session_state_json()}};
}

void Service::Impl::finish_session() {
  runner->finish(clock.now_ms());
  const SessionLog& log = runner->log();
  json body;
  try {
    persist_session(log, cfg.log_dir);
    std::ofstream out(cfg.log_dir / (log.session_id + ".summary.json"), std::ios::binary | std::ios::trunc);
    out << session_summary_text(log);
    body["persisted"] = true;
  } catch (const Error& e) {
    body["persisted"] = false;
    body["error"] = e.what();
  }
  const json s = session_summary(log);
  body["summary"] = s;
  broadcast("session_summary", body, true);
  {
    std::lock_guard lock(state_mutex);
    summary = s;
  }
  if (cfg.stop_after_session) net::post(ioc, [self = shared_from_this()] { self->shutdown(); });
}

http::response<http::string_body> Service::Impl::handle_http(const http::request<http::string_body>& req) {
  const unsigned v = req.version();
  if (req.method() != http::verb::get) {
    return json_response(http::status::method_not_allowed, {{"error", "only GET is supported"}}, v);
  }
  std::string target(req.target());
  if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
  if (target == "/health") {
    return json_response(http::status::ok,
                         {{"status", "ok"},
                          {"clients", clients.size()},
                          {"uptime_ms", clock.now_ms()},
                          {"events", next_event_id - 1},
                          {"session", session_state_json()},
                          {"config", config_json()}},
                         v);
  }
  if (target == "/sessions") {
    json list = json::array();
    std::ifstream in(cfg.log_dir / kSessionIndexFile);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        list.push_back(json::parse(line));
      } catch (const json::exception&) {
      }
    }
    return json_response(http::status::ok, list, v);
  }
  const std::string prefix = "/sessions/";
  const std::string suffix = "/log";
  if (target.size() > prefix.size() + suffix.size() && target.starts_with(prefix) && target.ends_with(suffix)) {
    const std::string id = target.substr(prefix.size(), target.size() - prefix.size() - suffix.size());
    if (!safe_session_id(id)) return json_response(http::status::bad_request, {{"error", "bad session id"}}, v);
    std::ifstream in(cfg.log_dir / (id + kSessionLogExtension), std::ios::binary);
    if (!in) return json_response(http::status::not_found, {{"error", "no such session " + id}}, v);
    std::ostringstream body;
    body << in.rdbuf();
    http::response<http::string_body> res{http::status::ok, v};
    res.set(http::field::server, "tactwin");
    res.set(http::field::content_type, "application/x-ndjson");
    res.set(http::field::access_control_allow_origin, "*");
    res.body() = body.str();
    return res;
  }
  return json_response(http::status::not_found, {{"error", "not found"}}, v);
}

Service::Service(ServiceConfig cfg) {
  cfg.validate();
  impl_ = std::make_shared<Impl>(std::move(cfg));
}

Service::~Service() {
  stop();
}

void Service::start() {
  {
    std::lock_guard lock(impl_->state_mutex);
    if (impl_->started) throw Error(ErrorCode::State, "service already started");
  }
  impl_->run_start();
  {
    std::lock_guard lock(impl_->state_mutex);
    impl_->started = true;
  }
  impl_->worker = std::thread([impl = impl_] {
    impl->ioc.run();
    {
      std::lock_guard lock(impl->state_mutex);
      impl->stopped = true;
    }
    impl->stopped_cv.notify_all();
  });
}

std::uint16_t Service::port() const { return impl_->bound_port; }

bool Service::running() const {
  std::lock_guard lock(impl_->state_mutex);
  return impl_->started && !impl_->stopped;
}

void Service::stop() {
  if (!impl_) return;
  {
    std::lock_guard lock(impl_->state_mutex);
    if (!impl_->started) return;
  }
  net::post(impl_->ioc, [impl = impl_] { impl->shutdown(); });
  if (impl_->worker.joinable()) {
    if (impl_->worker.get_id() == std::this_thread::get_id()) {
      impl_->worker.detach();
      return;
    }
    impl_->worker.join();
    // Run the cancelled handlers so they release their references.
    impl_->ioc.restart();
    impl_->ioc.poll();
  }
}

void Service::wait() {
  std::unique_lock lock(impl_->state_mutex);
  impl_->stopped_cv.wait(lock, [&] { return !impl_->started || impl_->stopped; });
}

json Service::control(const json& message) {
  if (!running()) throw Error(ErrorCode::State, "service is not running");
  auto promise = std::make_shared<std::promise<json>>();
  auto future = promise->get_future();
  const std::string text = message.dump();
  net::post(impl_->ioc, [impl = impl_, promise, text] { promise->set_value(impl->handle_message(text)); });
  if (future.wait_for(std::chrono::seconds(10)) != std::future_status::ready) {
    throw Error(ErrorCode::State, "service did not answer");
  }
  return future.get();
}

std::optional<json> Service::last_summary() const {
  std::lock_guard lock(impl_->state_mutex);
  return impl_->summary;
}

}  // namespace tactwin
