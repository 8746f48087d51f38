#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "tactwin/tactwin.h"

using nlohmann::json;

namespace {

struct Failure {
  tw_status status;
  std::string message;
};

void check(tw_status s) {
  if (s != TW_OK) throw Failure{s, tw_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  tw_string_free(s);
  return out;
}

std::string default_bind() {
  const char* env = std::getenv("TACTWIN_BIND");
  return env && *env ? env : "127.0.0.1:8765";
}

struct SimulateArgs {
  std::string object = "ball";
  double grip = 1.0;
  std::string mode = "finger:6";
  double threshold = 0.5;
  std::string encoder = "binary";
  double scan_rate = 100.0;
  std::uint64_t seed = 1;
  double loss = 0.02;
  double noise = 0.0;
  double duration_ms = 2500.0;
  std::string out;
  bool stats = false;
};

int simulate(const SimulateArgs& a) {
  const json cfg{{"object", a.object},       {"grip", a.grip},  {"mode", a.mode},   {"threshold", a.threshold},
                 {"encoder", a.encoder},     {"seed", a.seed},  {"loss", a.loss},   {"noise", a.noise},
                 {"scan_rate_hz", a.scan_rate}};
  tw_pipeline* p = nullptr;
  check(tw_pipeline_create(cfg.dump().c_str(), &p));
  std::unique_ptr<tw_pipeline, void (*)(tw_pipeline*)> guard(p, tw_pipeline_destroy);
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::binary | std::ios::trunc);
    if (!file) throw Failure{TW_ERR_IO, "cannot write " + a.out};
  }
  std::ostream& out = a.out.empty() ? std::cout : file;
  const auto steps = static_cast<long>(std::ceil(a.duration_ms * a.scan_rate / 1000.0));
  for (long i = 0; i < steps; ++i) {
    char* tick = nullptr;
    check(tw_pipeline_step(p, &tick));
    out << take(tick) << '\n';
  }
  if (a.stats) {
    char* s = nullptr;
    check(tw_pipeline_stats(p, &s));
    std::cerr << take(s) << '\n';
  }
  return 0;
}

struct ExperimentArgs {
  std::string protocol = "single-location";
  std::string site = "shoulder";
  std::uint64_t seed = 1;
  std::string responder = "perfect";
  double sigma = 1.0;
  std::string confusion_file;
  std::string participant = "P01";
  std::string log_dir = "logs";
  std::string pair_policy = "exact";
  std::string mode;
  double loss = 0.0;
  std::string bind;
  double timeout_ms = 30000.0;
};

int run_live(const ExperimentArgs& a) {
  const json cfg{{"bind", a.bind.empty() ? default_bind() : a.bind},
                 {"log_dir", a.log_dir},
                 {"site", a.site},
                 {"stop_after_session", true},
                 {"handle_signals", true}};
  tw_service* s = nullptr;
  check(tw_service_create(cfg.dump().c_str(), &s));
  std::unique_ptr<tw_service, void (*)(tw_service*)> guard(s, tw_service_destroy);
  check(tw_service_start(s));
  std::uint16_t port = 0;
  check(tw_service_port(s, &port));
  std::cerr << "waiting for responses on ws://127.0.0.1:" << port << "/session\n";
  json start{{"type", "control"},       {"action", "start"},         {"protocol", a.protocol},
             {"site", a.site},           {"seed", a.seed},            {"participant", a.participant},
             {"pair_policy", a.pair_policy}, {"timeout_ms", a.timeout_ms}};
  if (!a.mode.empty()) start["mode"] = a.mode;
  char* reply = nullptr;
  check(tw_service_control(s, start.dump().c_str(), &reply));
  const json r = json::parse(take(reply));
  if (r.value("type", "") == "error") throw Failure{TW_ERR_VALIDATION, r.value("message", "session rejected")};
  check(tw_service_wait(s));
  char* summary = nullptr;
  if (tw_service_last_summary(s, &summary) != TW_OK) {
    std::cerr << "session ended without completing\n";
    return 1;
  }
  std::cout << take(summary);
  return 0;
}

int run_experiment(const ExperimentArgs& a) {
  if (a.responder == "live") return run_live(a);
  json cfg{{"protocol", a.protocol},       {"site", a.site},   {"seed", a.seed},
           {"responder", a.responder},     {"sigma", a.sigma}, {"participant", a.participant},
           {"pair_policy", a.pair_policy}, {"loss", a.loss},   {"log_dir", a.log_dir}};
  if (!a.confusion_file.empty()) cfg["confusion"] = a.confusion_file;
  if (!a.mode.empty()) cfg["mode"] = a.mode;
  char* result = nullptr;
  check(tw_experiment_run(cfg.dump().c_str(), &result));
  const json r = json::parse(take(result));
  for (const auto& s : r["sessions"]) {
    const auto& sum = s["summary"];
    std::cout << s["session_id"].get<std::string>();
    if (sum.contains("accuracy") && !sum["accuracy"].is_null()) {
      std::cout << " accuracy=" << sum["accuracy"].get<double>();
    }
    if (sum.contains("mean_elapsed_ms") && !sum["mean_elapsed_ms"].is_null()) {
      std::cout << " mean_elapsed_ms=" << sum["mean_elapsed_ms"].get<double>();
    }
    std::cout << " log=" << s.value("log_file", "") << '\n';
  }
  return 0;
}

int serve(const std::string& bind, const std::string& log_dir, const std::string& mode, const std::string& site,
          const std::string& object) {
  const json cfg{{"bind", bind.empty() ? default_bind() : bind},
                 {"log_dir", log_dir},
                 {"mode", mode},
                 {"site", site},
                 {"object", object},
                 {"handle_signals", true}};
  tw_service* s = nullptr;
  check(tw_service_create(cfg.dump().c_str(), &s));
  std::unique_ptr<tw_service, void (*)(tw_service*)> guard(s, tw_service_destroy);
  check(tw_service_start(s));
  std::uint16_t port = 0;
  check(tw_service_port(s, &port));
  std::cerr << "serving on port " << port << " (WebSocket /session, GET /health /sessions)\n";
  check(tw_service_wait(s));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tactwin: glove to vibrotactile feedback simulator"};
  app.set_version_flag("--version", std::string(tw_version()));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Stream a simulated grasp through the pipeline as JSONL");
  simulate_cmd->add_option("--object", sim.object, "ball, book, glass, bottle or teddy")->capture_default_str();
  simulate_cmd->add_option("--grip", sim.grip, "Grip strength in [0, 1]")->capture_default_str();
  simulate_cmd->add_option("--mode", sim.mode, "Compression mode or mode file")->capture_default_str();
  simulate_cmd->add_option("--threshold", sim.threshold)->capture_default_str();
  simulate_cmd->add_option("--encoder", sim.encoder, "binary, prop or deriv")->capture_default_str();
  simulate_cmd->add_option("--scan-rate", sim.scan_rate, "Scan rate in Hz")->capture_default_str();
  simulate_cmd->add_option("--seed", sim.seed)->capture_default_str();
  simulate_cmd->add_option("--loss", sim.loss, "Link loss probability")->capture_default_str();
  simulate_cmd->add_option("--noise", sim.noise, "Pressure noise sigma")->capture_default_str();
  simulate_cmd->add_option("--duration-ms", sim.duration_ms)->capture_default_str();
  simulate_cmd->add_option("-o,--out", sim.out, "Output file (default stdout)");
  simulate_cmd->add_flag("--stats", sim.stats, "Print link statistics to stderr");

  ExperimentArgs ex;
  auto* run_cmd = app.add_subcommand("run-experiment", "Run a psychophysics session and write its log");
  run_cmd->add_option("--protocol", ex.protocol, "intensity, single-location, pair-location or object-task")
      ->capture_default_str();
  run_cmd->add_option("--site", ex.site, "upper-arm, shoulder or lower-back")->capture_default_str();
  run_cmd->add_option("--seed", ex.seed)->capture_default_str();
  run_cmd->add_option("--responder", ex.responder)
      ->check(CLI::IsMember({"perfect", "uniform", "confusion", "gaussian", "live"}))
      ->capture_default_str();
  run_cmd->add_option("--sigma", ex.sigma, "Spread of the gaussian responder")->capture_default_str();
  run_cmd->add_option("--confusion-file", ex.confusion_file, "Row-stochastic confusion table");
  run_cmd->add_option("--participant", ex.participant)->capture_default_str();
  run_cmd->add_option("--log-dir", ex.log_dir)->capture_default_str();
  run_cmd->add_option("--pair-policy", ex.pair_policy, "exact or per-motor")->capture_default_str();
  run_cmd->add_option("--mode", ex.mode, "Object task: run one mode instead of all six");
  run_cmd->add_option("--loss", ex.loss, "Stimulus link loss probability")->capture_default_str();
  run_cmd->add_option("--bind", ex.bind, "Live responder: service address");
  run_cmd->add_option("--timeout-ms", ex.timeout_ms, "Live responder: per-trial timeout")->capture_default_str();

  std::string input, report = "reports", blocks, scope, method;
  auto* analyze_cmd = app.add_subcommand("analyze", "Summarize session logs");
  analyze_cmd->add_option("--input", input, "Log directory or file")->required();
  analyze_cmd->add_option("--report", report, "Report directory")->capture_default_str();
  analyze_cmd->add_option("--blocks", blocks, "subjects or subject-object");
  analyze_cmd->add_option("--scope", scope, "subject, subject-condition or global");
  analyze_cmd->add_option("--method", method, "auto, chi-square or exact");

  std::string bind, serve_logs = "logs", serve_mode = "finger:6", serve_site = "upper-arm", serve_object = "ball";
  auto* serve_cmd = app.add_subcommand("serve", "Run the live session service");
  serve_cmd->add_option("--bind", bind, "host:port (default $TACTWIN_BIND or 127.0.0.1:8765)");
  serve_cmd->add_option("--log-dir", serve_logs)->capture_default_str();
  serve_cmd->add_option("--mode", serve_mode)->capture_default_str();
  serve_cmd->add_option("--site", serve_site)->capture_default_str();
  serve_cmd->add_option("--object", serve_object)->capture_default_str();

  auto* modes_cmd = app.add_subcommand("modes", "Inspect compression modes");
  modes_cmd->require_subcommand(1);
  modes_cmd->add_subcommand("list", "List the built-in modes");
  std::string mode_spec;
  auto* show_cmd = modes_cmd->add_subcommand("show", "Print a mode as a mode file");
  show_cmd->add_option("mode", mode_spec)->required();

  std::string template_object;
  auto* template_cmd = app.add_subcommand("template", "Print an object's built-in pressure template");
  template_cmd->add_option("object", template_object)->required();
  app.add_subcommand("layout", "Print the default sensor layout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*simulate_cmd) return simulate(sim);
    if (*run_cmd) return run_experiment(ex);
    if (*analyze_cmd) {
      json opts = json::object();
      if (!blocks.empty()) opts["blocks"] = blocks;
      if (!scope.empty()) opts["scope"] = scope;
      if (!method.empty()) opts["method"] = method;
      char* summary = nullptr;
      check(tw_analyze_path(input.c_str(), report.c_str(), opts.dump().c_str(), &summary));
      std::cout << take(summary);
      return 0;
    }
    if (*serve_cmd) return serve(bind, serve_logs, serve_mode, serve_site, serve_object);
    if (*modes_cmd) {
      char* text = nullptr;
      if (*show_cmd) {
        check(tw_mode_show(mode_spec.c_str(), &text));
        std::cout << take(text);
      } else {
        check(tw_mode_list(&text));
        for (const auto& m : json::parse(take(text))) {
          std::cout << m["mode"].get<std::string>() << "  motors=" << m["num_motors"].get<int>() << '\n';
        }
      }
      return 0;
    }
    if (*template_cmd) {
      char* text = nullptr;
      check(tw_template_text(template_object.c_str(), &text));
      std::cout << take(text);
      return 0;
    }
    char* text = nullptr;
    check(tw_layout_text(&text));
    std::cout << take(text);
    return 0;
  } catch (const Failure& f) {
    std::cerr << "error: " << tw_status_string(f.status) << ": " << f.message << '\n';
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
