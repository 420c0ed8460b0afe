#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>
#include <thread>

#include "myo/bench.hpp"
#include "myo/error.hpp"
#include "myo/gateway.hpp"
#include "myo/session.hpp"
#include "myo/simdev.hpp"

using namespace myo;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

struct Common {
  std::string config;
  std::string device;
  bool sim = false;
  bool realtime = false;
  double snr = 6.0;
  std::uint64_t seed = 1;
  int rounds = -1;
  bool no_conformal = false;
  std::string log_level = "warn";
};

void add_common(CLI::App* app, Common& c, bool device_options) {
  app->add_option("--config", c.config, "engine config JSON (default: $MYO_CONFIG)");
  app->add_option("--log-level", c.log_level, "trace, debug, info, warn, error, off");
  app->add_option("--rounds", c.rounds, "boosting rounds override");
  app->add_flag("--no-conformal", c.no_conformal, "report argmax decisions only");
  if (device_options) {
    app->add_option("--device", c.device, "amplifier host:port");
    app->add_flag("--sim", c.sim, "use an in-process simulated amplifier that follows the guide");
    app->add_flag("--realtime", c.realtime, "pace the simulated amplifier at the real frame rate");
    app->add_option("--snr", c.snr, "simulated activation gain");
    app->add_option("--seed", c.seed, "simulator seed");
  }
}

session::EngineConfig load_config(const Common& c) {
  auto cfg = c.config.empty() ? session::EngineConfig::from_env() : session::EngineConfig::load(c.config);
  if (!c.device.empty()) cfg.device = c.device;
  if (c.rounds >= 0) cfg.gbdt.n_rounds = c.rounds;
  if (c.no_conformal) cfg.conformal.enabled = false;
  return cfg;
}

std::unique_ptr<session::Orchestrator> make_engine(const Common& c) {
  auto cfg = load_config(c);
  session::SourceFactory factory = session::tcp_source_factory();
  if (c.sim) {
    std::vector<std::string> ids;
    for (const auto& id : kin::Catalog::defaults().ids()) {
      if (id != kin::kRest) ids.push_back(id);
    }
    factory = session::synthetic_source_factory(sim::SyntheticModel::one_hot(ids, c.snr, 50.0, c.seed), c.realtime);
  }
  auto engine = std::make_unique<session::Orchestrator>(cfg, factory);
  engine->start();
  return engine;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

void wait_done(session::Orchestrator& engine, session::Phase phase, double budget_s) {
  if (!engine.wait_while_phase(phase, std::chrono::milliseconds(static_cast<long>(budget_s * 1000)))) {
    throw Error(Errc::IoError, "timed out in phase " + session::to_string(phase));
  }
}

void record_all(session::Orchestrator& engine, const std::vector<std::string>& movements, double duration) {
  for (const auto& m : movements) {
    engine.call({"start_recording", {{"movement", m}, {"duration_s", duration}}});
    wait_done(engine, session::Phase::Recording, duration * 4 + 30);
    if (engine.phase() != session::Phase::Monitoring) {
      throw Error(Errc::DeviceLost, "recording of '" + m + "' did not complete");
    }
  }
}

json train(session::Orchestrator& engine) {
  engine.call({"train"});
  wait_done(engine, session::Phase::Training, 600);
  auto result = engine.last_training();
  if (!result) {
    auto state = engine.state_json();
    throw Error(Errc::EmptyTrain, "training failed: " + state.value("last_error", std::string("unknown")));
  }
  return result->to_json();
}

json validate(session::Orchestrator& engine, const std::vector<std::string>& movements, int reps, double window) {
  json payload = {{"reps", reps}, {"window_s", window}};
  if (!movements.empty()) payload["movements"] = movements;
  engine.call({"start_validation", payload});
  wait_done(engine, session::Phase::Validating, window * 4 * std::max<std::size_t>(movements.size(), 8) + 60);
  auto report = engine.last_report();
  if (!report) throw Error(Errc::DeviceLost, "validation did not complete");
  return report->to_json();
}

int fail(const Error& e) {
  print({{"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}});
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("myo");
  spdlog::set_default_logger(logger);

  CLI::App app{"myo: real-time EMG decoding engine"};
  app.require_subcommand(1);
  Common c;

  double monitor_s = 10.0;
  auto* monitor = app.add_subcommand("monitor", "stream from the device and report ingestion statistics");
  add_common(monitor, c, true);
  monitor->add_option("--seconds", monitor_s, "how long to monitor");

  std::string movements_arg, out_path, session_path, model_path;
  double duration = -1.0;
  auto* record = app.add_subcommand("record", "record guided movements into a session file");
  add_common(record, c, true);
  record->add_option("--movements", movements_arg, "comma separated movement ids")->required();
  record->add_option("--duration", duration, "seconds per movement");
  record->add_option("--out", out_path, "session file (.mgr)")->required();

  auto* train_cmd = app.add_subcommand("train", "train a decoder from a session file");
  add_common(train_cmd, c, false);
  train_cmd->add_option("--session", session_path, "session file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", model_path, "model file (.mgd)");

  int reps = -1;
  double window = -1.0;
  auto* validate_cmd = app.add_subcommand("validate", "live validation against the guide");
  add_common(validate_cmd, c, true);
  validate_cmd->add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  validate_cmd->add_option("--movements", movements_arg, "comma separated movement ids (default: model classes)");
  validate_cmd->add_option("--reps", reps, "repetitions per movement");
  validate_cmd->add_option("--window", window, "seconds per movement");

  auto* replay = app.add_subcommand("replay-eval", "offline: train on a session and report held-out accuracy");
  add_common(replay, c, false);
  replay->add_option("--session", session_path, "session file")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", model_path, "also write the model here");

  bench::BenchOptions bench_opts;
  auto* bench_cmd = app.add_subcommand("bench", "window-processing latency and throughput on a realtime stream");
  bench_cmd->add_option("--seconds", bench_opts.seconds, "measurement length");
  bench_cmd->add_option("--rounds", bench_opts.rounds, "boosting rounds of the benchmark model");
  bench_cmd->add_option("--log-level", c.log_level, "log level");

  std::string bind = "127.0.0.1:8765";
  auto* serve = app.add_subcommand("serve", "run the engine behind the WebSocket/HTTP gateway");
  add_common(serve, c, true);
  serve->add_option("--bind", bind, "gateway host:port");

  auto* run = app.add_subcommand("run", "scripted record, train and validate in one go");
  add_common(run, c, true);
  run->add_option("--movements", movements_arg, "comma separated movement ids")->required();
  run->add_option("--duration", duration, "recording seconds per movement");
  run->add_option("--reps", reps, "validation repetitions per movement");
  run->add_option("--window", window, "validation seconds per movement");
  run->add_option("--session-out", session_path, "also save the session here");
  run->add_option("--model-out", model_path, "also save the model here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print({{"error", {{"code", "InvalidArgument"}, {"message", e.what()}}}});
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 2;
  }

  spdlog::set_level(spdlog::level::from_str(c.log_level));

  try {
    if (monitor->parsed()) {
      auto engine = make_engine(c);
      engine->call({"connect_device"});
      auto t0 = std::chrono::steady_clock::now();
      while (std::chrono::steady_clock::now() - t0 < std::chrono::duration<double>(monitor_s)) {
        std::this_thread::sleep_for(1s);
        if (engine->phase() != session::Phase::Monitoring) throw Error(Errc::DeviceLost, "device went away");
        std::cout << engine->stats().to_json().dump() << std::endl;
      }
      auto s = engine->stats();
      engine->call({"disconnect"});
      print({{"monitor", s.to_json()}});
    } else if (record->parsed()) {
      auto engine = make_engine(c);
      auto movements = split_list(movements_arg);
      if (duration <= 0) duration = engine->config().record_s;
      engine->call({"connect_device"});
      record_all(*engine, movements, duration);
      engine->call({"save_session", {{"path", out_path}}});
      auto st = engine->state_json();
      engine->call({"disconnect"});
      print({{"session", out_path}, {"recordings", st["recordings"]}, {"device", st["device"]}});
    } else if (train_cmd->parsed()) {
      auto engine = make_engine(c);
      engine->call({"load_session", {{"path", session_path}}});
      json result = train(*engine);
      if (!model_path.empty()) engine->call({"save_model", {{"path", model_path}}});
      print(result);
    } else if (validate_cmd->parsed()) {
      auto engine = make_engine(c);
      auto cfg = engine->config();
      auto loaded = engine->call({"load_model", {{"path", model_path}}});
      for (const auto& w : loaded["warnings"]) spdlog::warn("{}", w.get<std::string>());
      engine->call({"connect_device"});
      json report = validate(*engine, split_list(movements_arg), reps > 0 ? reps : cfg.validation_reps,
                             window > 0 ? window : cfg.validation_window_s);
      engine->call({"disconnect"});
      print(report);
    } else if (replay->parsed()) {
      auto cfg = load_config(c);
      auto rec = load_session(session_path);
      auto result = session::train_session(rec, cfg);
      if (!model_path.empty()) decoder::save_model(result.model, model_path);
      json report = result.holdout.to_json();
      report["training"] = result.to_json();
      report["training"].erase("holdout");
      print(report);
    } else if (bench_cmd->parsed()) {
      print(bench::run_bench(bench_opts).to_json());
    } else if (serve->parsed()) {
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);
      auto engine = make_engine(c);
      gateway::GatewayOptions opts;
      opts.bind = net::Endpoint::parse(bind);
      gateway::Gateway gw(*engine, opts);
      gw.start();
      spdlog::info("gateway listening on {}:{}", opts.bind.host, gw.port());
      print({{"listening", opts.bind.host + ":" + std::to_string(gw.port())}});
      int sig = 0;
      sigwait(&set, &sig);
      gw.stop();
      engine->stop();
    } else if (run->parsed()) {
      auto t0 = std::chrono::steady_clock::now();
      auto engine = make_engine(c);
      auto cfg = engine->config();
      auto movements = split_list(movements_arg);
      engine->call({"connect_device"});
      record_all(*engine, movements, duration > 0 ? duration : cfg.record_s);
      if (!session_path.empty()) engine->call({"save_session", {{"path", session_path}}});
      json training = train(*engine);
      if (!model_path.empty()) engine->call({"save_model", {{"path", model_path}}});
      json report = validate(*engine, movements, reps > 0 ? reps : cfg.validation_reps,
                             window > 0 ? window : cfg.validation_window_s);
      engine->call({"disconnect"});
      print({{"training", training},
             {"validation", report},
             {"wall_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}});
    }
  } catch (const Error& e) {
    return fail(e);
  } catch (const std::exception& e) {
    return fail(Error(Errc::IoError, e.what()));
  }
  return 0;
}
