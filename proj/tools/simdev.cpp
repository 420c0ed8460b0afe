#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>

#include "myo/error.hpp"
#include "myo/simdev.hpp"

using namespace myo;

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("simdev"));

  CLI::App app{"simdev: simulated 32-channel amplifier"};
  std::string bind = "127.0.0.1:5566";
  std::string mode = "synth";
  std::string script_path, recording_path, catalog_path, movements_arg = "thumb,index,middle";
  bool fast = false;
  double snr = 6.0, noise_floor = 50.0;
  std::uint64_t seed = 1;
  std::vector<std::size_t> noisy;
  std::string log_level = "info";

  app.add_option("--bind", bind, "listen host:port");
  app.add_option("--mode", mode, "synth or replay")->check(CLI::IsMember({"synth", "replay"}));
  app.add_option("--script", script_path, "session script JSON driving the synthetic participant")
      ->check(CLI::ExistingFile);
  app.add_option("--recording", recording_path, "session file to replay")->check(CLI::ExistingFile);
  app.add_option("--catalog", catalog_path, "movement catalog JSON")->check(CLI::ExistingFile);
  app.add_option("--movements", movements_arg, "movements with a synthetic pattern");
  app.add_flag("--fast", fast, "send as fast as the client reads instead of at the frame rate");
  app.add_option("--snr", snr, "activation gain over the noise floor");
  app.add_option("--noise-floor", noise_floor, "baseline RMS in counts");
  app.add_option("--seed", seed, "noise seed");
  app.add_option("--noisy-channels", noisy, "channels without skin contact")->delimiter(',');
  app.add_option("--log-level", log_level, "log level");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cout << nlohmann::json{{"error", {{"code", "InvalidArgument"}, {"message", e.what()}}}}.dump() << std::endl;
    std::cerr << app.help();
    return 2;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  try {
    sim::ServeOptions opts;
    opts.bind = net::Endpoint::parse(bind);
    opts.realtime = !fast;
    std::unique_ptr<sim::SimServer> server;
    if (mode == "replay") {
      if (recording_path.empty()) throw Error(Errc::InvalidArgument, "--mode replay needs --recording");
      auto rec = load_session(recording_path);
      std::vector<EmgFrame> frames;
      for (const auto& seg : rec.segments) frames.insert(frames.end(), seg.frames.begin(), seg.frames.end());
      server = std::make_unique<sim::SimServer>(std::move(frames), opts);
    } else {
      auto catalog = catalog_path.empty() ? kin::Catalog::defaults() : kin::Catalog::load(catalog_path);
      std::vector<std::string> movements;
      std::optional<sim::SessionScript> script;
      if (!script_path.empty()) {
        script = sim::SessionScript::load(script_path);
        for (const auto& b : script->blocks) {
          if (std::find(movements.begin(), movements.end(), b.movement) == movements.end()) {
            movements.push_back(b.movement);
          }
        }
      } else {
        std::stringstream ss(movements_arg);
        for (std::string m; std::getline(ss, m, ',');) {
          if (!m.empty()) movements.push_back(m);
        }
      }
      auto model = sim::SyntheticModel::one_hot(movements, snr, noise_floor, seed);
      model.noisy_channels = noisy;
      auto drive = script ? sim::script_drive(*script, catalog) : sim::rest_drive();
      server = std::make_unique<sim::SimServer>(std::move(model), std::move(drive), opts);
    }
    server->start();
    std::cout << nlohmann::json{{"listening", opts.bind.host + ":" + std::to_string(server->port())}, {"mode", mode}}
                     .dump()
              << std::endl;
    int sig = 0;
    sigwait(&set, &sig);
    server->stop();
    spdlog::info("served {} frames to {} clients", server->frames_sent(), server->clients_served());
  } catch (const Error& e) {
    std::cout << nlohmann::json{{"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}}.dump()
              << std::endl;
    return 1;
  }
  return 0;
}
