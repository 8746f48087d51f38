#pragma once

// Live session service: streams the running pipeline to WebSocket observers,
// drives psychophysics sessions from control messages and persists the logs.
//
// WebSocket `/session`, HTTP GET `/health`, `/sessions`, `/sessions/{id}/log`.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "json.hpp"
#include "pipeline.hpp"

namespace tactwin {

inline constexpr const char* kBindEnvVar = "TACTWIN_BIND";
inline constexpr const char* kDefaultBind = "127.0.0.1:8765";

// "host:port" (port 0 picks a free one). Throws Config when malformed.
std::pair<std::string, std::uint16_t> parse_bind(std::string_view spec);
// TACTWIN_BIND when set, otherwise kDefaultBind.
std::string default_bind();

struct ServiceConfig {
  std::string bind = kDefaultBind;
  std::filesystem::path log_dir = "logs";
  PipelineConfig pipeline;
  std::string mode = "finger:6";
  std::string site = "upper-arm";
  double frame_rate_hz = 20.0;          // observer frame rate
  std::size_t client_queue_limit = 256;  // queued messages before a slow client is dropped
  double stimulus_pace_ms = 1000.0;      // training replay spacing
  bool stream = true;                    // run the live glove pipeline
  bool handle_signals = false;           // stop on SIGINT / SIGTERM
  bool stop_after_session = false;

  void validate() const;
};

// Reads the keys of ServiceConfig from a JSON object; unknown keys throw Config.
ServiceConfig service_config_from_json(const nlohmann::json& j);

class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and starts the worker thread. Throws Io when the bind fails.
  void start();
  std::uint16_t port() const;
  void stop();
  // Blocks until the service has stopped.
  void wait();
  bool running() const;

  // Handles a client message in-process, exactly as if a WebSocket client had
  // sent it; returns the direct reply.
  nlohmann::json control(const nlohmann::json& message);

  // Summary of the most recently completed session.
  std::optional<nlohmann::json> last_summary() const;

  struct Impl;

 private:
  std::shared_ptr<Impl> impl_;
};

}  // namespace tactwin
