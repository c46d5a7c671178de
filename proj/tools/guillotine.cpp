// Command-line front end: run a scenario headlessly, serve it interactively,
// or replay a recorded event log.
//
// Exit codes: 0 all assertions passed, 1 an assertion failed, 2 invalid input,
// 3 replay diverged from the recorded log.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "guillotine/scenario.hpp"
#include "guillotine/service.hpp"
#include "guillotine/simrun.hpp"

namespace {

using namespace guillotine;

void print_report(const simrun::RunReport& r) {
  std::cout << "scenario " << r.scenario << " seed " << r.seed << " ticks " << r.ticks << " final level "
            << isolation::to_string(r.final_level) << "\n";
  for (const auto& a : r.assertions) {
    std::cout << (a.passed ? "PASS " : "FAIL ") << a.name << "  " << a.detail << "\n";
  }
  std::cout << "counts " << r.counts.dump() << "\n";
  std::cout << "log digest " << r.log_digest << "\n";
  std::cout << (r.passed() ? "RESULT pass" : "RESULT fail") << "\n";
}

simrun::Server* g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator of a Guillotine hypervisor deployment"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string log_path;
  std::optional<std::uint64_t> seed;
  std::optional<Tick> ticks;

  auto* run = app.add_subcommand("run", "Run a scenario headlessly and check its assertions");
  run->add_option("--scenario", scenario_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--ticks", ticks, "Override the scenario tick count");
  run->add_option("--log", log_path, "Write the event log (JSON Lines) here; audit, transition and session logs go alongside");

  std::string listen = "127.0.0.1:7070";
  double tps = 0;
  bool start_running = false;
  Tick summary_every = 100;
  auto* serve = app.add_subcommand("serve", "Host a scenario for interactive clients");
  serve->add_option("--scenario", scenario_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  serve->add_option("--listen", listen, "host:port to listen on (port 0 picks one)");
  serve->add_option("--seed", seed, "Override the scenario seed");
  serve->add_option("--log", log_path, "Write the event log here at shutdown");
  serve->add_option("--tps", tps, "Ticks per second while resumed (0 = unthrottled)");
  serve->add_option("--summary-every", summary_every, "Ticks between state summaries on the stream");
  serve->add_flag("--run", start_running, "Start resumed instead of paused");

  bool verify = false;
  auto* replay = app.add_subcommand("replay", "Re-execute a recorded event log");
  replay->add_option("--log", log_path, "Recorded event log")->required()->check(CLI::ExistingFile);
  replay->add_flag("--verify", verify, "Require the regenerated log to match byte for byte");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*replay) {
      std::ifstream in(log_path, std::ios::binary);
      std::stringstream buf;
      buf << in.rdbuf();
      auto res = simrun::replay(buf.str());
      if (!res.error.empty()) {
        std::cerr << "replay: " << res.error << "\n";
        return 2;
      }
      print_report(res.report);
      if (res.identical) {
        std::cout << "replay identical\n";
      } else {
        std::cout << "replay diverged at line " << res.first_difference << "\n";
        if (verify) return 3;
      }
      return res.report.passed() ? 0 : 1;
    }

    auto scenario = simrun::load_scenario(scenario_path);
    const auto effective_seed = seed.value_or(scenario.seed);

    if (*run) {
      const auto n = ticks.value_or(scenario.ticks);
      auto out = simrun::run(scenario, effective_seed, n);
      if (!log_path.empty()) simrun::write_logs(out, log_path);
      print_report(out.report);
      return out.report.passed() ? 0 : 1;
    }

    auto addr = simrun::parse_listen_address(listen);
    if (!addr) {
      std::cerr << "serve: bad --listen address '" << listen << "'\n";
      return 2;
    }
    simrun::ServeOptions opts;
    opts.address = *addr;
    opts.ticks_per_second = tps;
    opts.start_running = start_running;
    opts.summary_every = summary_every;
    opts.ticks = scenario.ticks;
    if (!log_path.empty()) opts.log_path = log_path;
    simrun::Server server(scenario, effective_seed, opts);
    const auto port = server.start();
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on " << addr->host << ":" << port << std::endl;
    server.wait();
    g_server = nullptr;
    print_report(server.report());
    return server.report().passed() ? 0 : 1;
  } catch (const simrun::ScenarioError& e) {
    std::cerr << "scenario_invalid: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
