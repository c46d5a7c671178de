#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "guillotine/console.hpp"
#include "guillotine/detector.hpp"
#include "guillotine/event_log.hpp"
#include "guillotine/guests/interpreter.hpp"
#include "guillotine/isolation.hpp"
#include "guillotine/machine.hpp"
#include "guillotine/netid.hpp"
#include "guillotine/ports.hpp"
#include "guillotine/scenario.hpp"

namespace guillotine::simrun {

inline constexpr ModelId kModel{0};

struct Assertion {
  std::string name;
  bool passed = true;
  std::string detail;

  [[nodiscard]] Json to_json() const { return {{"name", name}, {"passed", passed}, {"detail", detail}}; }
};

struct RunReport {
  std::string scenario;
  std::uint64_t seed = 0;
  Tick ticks = 0;
  isolation::Level final_level = isolation::Level::standard;
  std::vector<Assertion> assertions;
  Json counts = Json::object();
  std::string log_digest;  // over every record before run_end

  [[nodiscard]] bool passed() const;
  [[nodiscard]] const Assertion* find(std::string_view name) const;
  [[nodiscard]] Json to_json() const;
};

/// A validated operator command. Parsing never touches simulation state, so a
/// malformed command is refused before it is stamped into the log.
struct Command {
  std::string name;
  Json params = Json::object();

  [[nodiscard]] Json to_json() const;
};

inline const std::vector<std::string> kSimCommands = {
    "open_ballot", "cast_vote", "admin_vote", "tally", "issue_probation_directive", "manual_repair", "event"};

Outcome<Command, std::string> parse_command(const Json& j);

struct CommandResult {
  bool ok = true;
  std::string error;  // "command_refused: <module error>"
  Json result = Json::object();
};

/// One deployment of the simulated Guillotine stack: hardware, port broker,
/// isolation controller, console, detector and network, driven tick by tick.
class Deployment final : public guests::GuestServices, public ports::BrokerHooks {
 public:
  Deployment(const Scenario& scenario, std::uint64_t seed);
  Deployment(const Deployment&) = delete;
  Deployment& operator=(const Deployment&) = delete;

  /// Logs scenario_loaded, installs the hypervisor, attests and loads the model.
  /// `ticks` is the requested run length recorded in the log.
  void boot(Tick ticks);

  /// Advances one tick.
  void step();
  void run_until(Tick end);
  [[nodiscard]] Tick now() const noexcept { return log_.now(); }

  /// Stamps the command into the log at the current tick, then applies it.
  CommandResult apply_command(const Command& cmd);

  /// Evaluates the assertion bundle and appends run_end.
  RunReport finish();
  [[nodiscard]] RunReport evaluate() const;

  /// Immutable snapshot for the serve stream.
  [[nodiscard]] Json summary() const;

  // GuestServices
  guests::GuestStatus port_write(CoreId core, std::uint8_t slot, std::span<const std::uint8_t> payload) override;
  void raise_irq(CoreId core) override;
  std::size_t drain_inbound(CoreId core) override;

  // BrokerHooks
  ports::HookDecision inspect_egress(const ports::PortCapability& port, std::span<const std::uint8_t> payload) override;
  ports::HookDecision inspect_ingress(const ports::PortCapability& port, std::span<const std::uint8_t> payload) override;
  ports::DeviceOutcome perform(const ports::PortCapability& port, std::uint64_t audit_seq,
                               std::span<const std::uint8_t> payload) override;

  [[nodiscard]] EventLog& log() noexcept { return log_; }
  [[nodiscard]] const EventLog& log() const noexcept { return log_; }
  [[nodiscard]] machine::Machine& machine() noexcept { return machine_; }
  [[nodiscard]] ports::PortBroker& ports() noexcept { return ports_; }
  [[nodiscard]] const ports::PortBroker& ports() const noexcept { return ports_; }
  [[nodiscard]] guests::Interpreter& interpreter() noexcept { return interpreter_; }
  [[nodiscard]] isolation::IsolationController& isolation() noexcept { return isolation_; }
  [[nodiscard]] const isolation::IsolationController& isolation() const noexcept { return isolation_; }
  [[nodiscard]] console::Console& console() noexcept { return console_; }
  [[nodiscard]] const console::Console& console() const noexcept { return console_; }
  [[nodiscard]] detector::Detector& detector() noexcept { return detector_; }
  [[nodiscard]] netid::NetworkFabric& fabric() noexcept { return fabric_; }
  [[nodiscard]] const netid::NetworkFabric& fabric() const noexcept { return fabric_; }
  [[nodiscard]] const Scenario& scenario() const noexcept { return scenario_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

  [[nodiscard]] std::uint64_t missed_heartbeats() const noexcept { return missed_heartbeats_; }
  [[nodiscard]] std::uint64_t guest_faults() const noexcept { return guest_faults_; }
  [[nodiscard]] std::uint64_t model_instructions() const;
  [[nodiscard]] const crypto::Digest& hypervisor_digest_at_boot() const noexcept { return hyp_digest_; }
  [[nodiscard]] const std::optional<crypto::Digest>& code_digest_at_load() const noexcept { return code_digest_; }

  /// Genuine measurements of this deployment.
  [[nodiscard]] crypto::Digest silicon_measurement() const;
  [[nodiscard]] crypto::Digest software_measurement() const;

 private:
  void run_scripted_event(const ScriptedEvent& ev);
  CommandResult apply_event(const Json& params);
  CommandResult admin_vote(const Json& params);
  ports::HookDecision route_verdicts(const std::vector<detector::PluginVerdict>& verdicts);
  void raise_alarm(const std::string& plugin, const detector::Verdict& v);
  void process_inspections();
  void observe_fault(const machine::FaultNotice& notice);
  void on_restore(isolation::Level from, isolation::Level to, bool power_up);
  [[nodiscard]] std::size_t broker_capacity_tick();

  Scenario scenario_;
  std::uint64_t seed_;
  EventLog log_;
  machine::Machine machine_;
  ports::PortBroker ports_;
  guests::Interpreter interpreter_;
  isolation::IsolationController isolation_;
  console::Console console_;
  detector::Detector detector_;
  netid::NetworkFabric fabric_;

  std::size_t next_event_ = 0;
  std::deque<std::string> inspections_;
  bool hypervisor_spare_ = true;
  std::uint64_t missed_heartbeats_ = 0;
  std::uint64_t guest_faults_ = 0;
  crypto::Digest hyp_digest_{};
  std::optional<crypto::Digest> code_digest_;
  bool booted_ = false;
};

struct RunOutput {
  RunReport report;
  std::string event_log;  // JSON Lines
  std::string audit_log;
  std::string transition_log;
  std::string session_log;
};

/// Runs a scenario headlessly for `ticks` ticks.
RunOutput run(const Scenario& scenario, std::uint64_t seed, Tick ticks);

/// Writes the event log to `path` and the other logs next to it
/// (<stem>.audit.jsonl, <stem>.transitions.jsonl, <stem>.sessions.jsonl).
void write_logs(const RunOutput& out, const std::filesystem::path& path);

struct ReplayResult {
  bool identical = false;
  std::string error;              // set when the log cannot be replayed
  std::size_t first_difference = 0;  // 1-based line number, 0 if identical
  RunReport report;
  std::string regenerated;
};

/// Re-executes a recorded event log (headless or interactive) from its
/// scenario_loaded record and recorded commands, and compares the bytes.
ReplayResult replay(const std::string& recorded_jsonl);

}  // namespace guillotine::simrun
