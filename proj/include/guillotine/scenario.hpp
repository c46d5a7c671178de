#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "guillotine/console.hpp"
#include "guillotine/guests/isa.hpp"
#include "guillotine/isolation.hpp"
#include "guillotine/machine.hpp"
#include "guillotine/netid.hpp"
#include "guillotine/ports.hpp"

namespace guillotine::simrun {

/// Thrown for a scenario that does not validate; the message names the first
/// failing field or reference.
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string> kScriptedEventTypes = {
    "sever_console_link", "restore_link", "admin_vote", "external_input", "inject_fault"};

struct ScriptedEvent {
  Tick tick = 0;
  std::string type;
  Json params = Json::object();
};

struct HostConfig {
  std::string name;
  bool guillotine = false;
  netid::Presentation presentation = netid::Presentation::signed_identity;
};

struct Expectations {
  std::optional<isolation::Level> final_level;
  std::optional<std::uint64_t> watchdog_firings;
  std::optional<std::uint64_t> max_guest_faults;
  std::optional<bool> all_requests_answered;
  std::optional<std::uint64_t> min_refused_sessions;
  std::optional<bool> model_loaded;
};

struct AttestationConfig {
  std::optional<std::string> silicon;   // hex; absent means the genuine value
  std::optional<std::string> software;
  std::string tamper = "none";          // none | silicon | software
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  Tick ticks = 10000;

  machine::TopologyParams topology;
  std::uint32_t ops_per_tick = 16;
  Tick clear_uarch_interval = 0;
  isolation::IsolationConfig isolation;
  console::HeartbeatConfig heartbeat;
  Tick ballot_expiry = 1000;
  ports::PortsConfig ports;
  Tick handshake_latency = 1;
  std::vector<HostConfig> hosts;
  std::vector<Json> detectors;

  guests::GuestProgram program;
  std::vector<console::PortRequest> guest_ports;
  AttestationConfig attestation;

  std::vector<ScriptedEvent> events;
  Expectations expect;

  /// The fully resolved scenario (guest inlined, workload defaults merged).
  /// Parsing it again yields the same scenario.
  Json resolved = Json::object();
};

/// Checks one scripted event (or event command). Returns the problem, prefixed
/// with the offending field path relative to the event.
std::optional<std::string> check_event_params(const Json& e);

/// Parses and validates. `base_dir` resolves relative guest program files.
Scenario scenario_from_json(const Json& j, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& file);

}  // namespace guillotine::simrun
