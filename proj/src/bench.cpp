#include "myo/bench.hpp"

#include <filesystem>
#include <thread>

#include <unistd.h>

#include "myo/simdev.hpp"

namespace myo::bench {

using nlohmann::json;

json BenchResult::to_json() const {
  return {{"seconds", seconds},   {"frames", frames},           {"windows", windows},
          {"seq_gaps", seq_gaps}, {"windows_per_s", windows_per_s}, {"train_s", train_s},
          {"latency", latency.to_json()}};
}

BenchResult run_bench(const BenchOptions& o) {
  using clock_type = std::chrono::steady_clock;
  BenchResult r;
  auto model = sim::SyntheticModel::one_hot(o.movements, o.snr, 50.0, o.seed);

  session::EngineConfig cfg;
  cfg.gbdt.n_rounds = o.rounds;
  auto rec = sim::scripted_session(model, o.movements, cfg.timing, 30.0);
  auto trained = session::train_session(rec, cfg);
  r.train_s = trained.fit_s;
  auto path = (std::filesystem::temp_directory_path() /
               ("myo-bench-" + std::to_string(::getpid()) + ".mgd")).string();
  decoder::save_model(trained.model, path);

  sim::SessionScript script;
  script.timing = cfg.timing;
  const double needed = o.seconds + o.warmup_s + 5.0;
  while (static_cast<double>(script.duration_us()) * 1e-6 < needed) {
    for (const auto& m : o.movements) script.blocks.push_back({m, 1});
  }
  sim::ServeOptions serve;
  serve.bind = {"127.0.0.1", 0};
  serve.realtime = true;
  sim::SimServer server(model, sim::script_drive(script, rec.catalog), serve);
  server.start();

  cfg.device = "127.0.0.1:" + std::to_string(server.port());
  session::Orchestrator engine(cfg, session::tcp_source_factory());
  engine.start();
  engine.call({"load_model", {{"path", path}}});
  std::filesystem::remove(path);
  engine.call({"connect_device"});

  std::this_thread::sleep_for(std::chrono::duration<double>(o.warmup_s));
  engine.reset_latency();
  auto s0 = engine.stats();
  auto t0 = clock_type::now();
  std::this_thread::sleep_for(std::chrono::duration<double>(o.seconds));
  auto s1 = engine.stats();
  auto t1 = clock_type::now();
  engine.call({"disconnect"});
  engine.stop();
  server.stop();

  r.seconds = std::chrono::duration<double>(t1 - t0).count();
  r.frames = s1.frames - s0.frames;
  r.windows = s1.windows - s0.windows;
  r.seq_gaps = s1.seq_gaps - s0.seq_gaps;
  r.windows_per_s = static_cast<double>(r.windows) / r.seconds;
  r.latency = s1.latency;
  return r;
}

}  // namespace myo::bench
