#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "toolgym/orchestrator.hpp"
#include "toolgym/service.hpp"

namespace {

// stop() joins threads and takes locks, neither is safe inside a signal
// handler, so the handler only raises this flag.
volatile std::sig_atomic_t g_stop_requested = 0;

void handle_signal(int) { g_stop_requested = 1; }

[[noreturn]] void die(const toolgym::Error& error) {
  std::fprintf(stderr, "error (%s): %s\n", toolgym::to_string(error.kind),
               error.detail.c_str());
  std::exit(1);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toolgym: simulated tool-calling environment for RL training"};
  app.require_subcommand(1);

  auto* run_cmd =
      app.add_subcommand("run", "Run training steps self-contained");
  std::string run_config_path;
  int steps = 0;
  uint64_t seed = 0;
  std::string out_dir;
  run_cmd->add_option("--config", run_config_path, "Config file (JSON)")
      ->required();
  auto* steps_opt =
      run_cmd->add_option("--steps", steps, "Override total_steps");
  auto* seed_opt = run_cmd->add_option("--seed", seed, "Override random seed");
  auto* out_opt =
      run_cmd->add_option("--out", out_dir, "Override output directory");
  run_cmd->callback([&] {
    auto loaded = toolgym::load_config(run_config_path);
    if (!loaded) die(loaded.error());
    toolgym::RunConfig config = loaded.value();
    if (steps_opt->count() > 0) config.total_steps = steps;
    if (seed_opt->count() > 0) config.seed = seed;
    if (out_opt->count() > 0) config.out_dir = out_dir;
    auto summary = toolgym::run(config);
    if (!summary) die(summary.error());
    std::printf("ran %d steps, final difficulty %d, artifacts in %s\n",
                summary.value().steps_run, summary.value().final_difficulty,
                summary.value().run_dir.c_str());
  });

  auto* serve_cmd =
      app.add_subcommand("serve", "Serve the environment over HTTP");
  std::string serve_config_path;
  int port = 0;
  serve_cmd->add_option("--config", serve_config_path, "Config file (JSON)")
      ->required();
  serve_cmd->add_option("--port", port, "Port to listen on")->required();
  serve_cmd->callback([&] {
    auto loaded = toolgym::load_config(serve_config_path);
    if (!loaded) die(loaded.error());
    auto env = toolgym::make_env(loaded.value(), /*need_agent=*/false);
    if (!env) die(env.error());
    toolgym::EnvService service(std::move(env.value()));
    auto bound = service.start(port);
    if (!bound) die(bound.error());
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::printf("serving on port %d\n", bound.value());
    std::fflush(stdout);
    while (g_stop_requested == 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    service.stop();
  });

  auto* inspect_cmd =
      app.add_subcommand("inspect", "Print a run's trace as CSV");
  std::string run_dir;
  inspect_cmd->add_option("--run", run_dir, "Run directory")->required();
  inspect_cmd->callback([&] {
    auto csv = toolgym::inspect_csv(run_dir);
    if (!csv) die(csv.error());
    std::fputs(csv.value().c_str(), stdout);
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}
