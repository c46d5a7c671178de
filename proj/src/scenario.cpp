#include "guillotine/scenario.hpp"

#include <algorithm>
#include <fstream>

#include "guillotine/detector.hpp"
#include "guillotine/guests/workloads.hpp"

namespace guillotine::simrun {
namespace {

template <typename T>
T get_or(const Json& obj, const char* key, T fallback, const std::string& path) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ScenarioError(path + "." + key + ": " + e.what());
  }
}

const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ScenarioError(std::string(key) + ": must be an object");
  return j.at(key);
}

Json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ScenarioError("cannot open '" + file.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ScenarioError("'" + file.string() + "' is not valid JSON: " + e.what());
  }
}

std::vector<HostConfig> default_hosts() {
  return {{"echo.example", false, netid::Presentation::signed_identity},
          {"peer.guillotine", true, netid::Presentation::signed_identity},
          {"forged.guillotine", true, netid::Presentation::flag_flipped},
          {"anon.example", false, netid::Presentation::unsigned_identity}};
}

std::vector<Json> default_detectors() {
  return {Json{{"name", "input_shield"}}, Json{{"name", "output_sanitizer"}},
          Json{{"name", "rate_monitor"}}, Json{{"name", "snapshot_inspector"}}};
}

Json port_request_json(const console::PortRequest& r) {
  Json j{{"device_class", ports::to_string(r.device_class)}, {"instance", r.device_instance}};
  if (r.slot) j["slot"] = *r.slot;
  return j;
}

/// Replaces the guest reference with an inline program and merges workload defaults.
Json resolve(const Json& input, const std::filesystem::path& base_dir) {
  if (!input.contains("guest")) throw ScenarioError("guest: missing");
  const Json& g = input.at("guest");
  Json merged = Json::object();
  Json program;
  Json guest_ports = Json::array();

  if (g.is_string()) {
    auto w = guests::find_workload(g.get<std::string>());
    if (!w) throw ScenarioError("guest: unknown workload '" + g.get<std::string>() + "'");
    merged = w->scenario_overrides;
    program = guests::to_json(w->program);
    for (const auto& p : w->ports) {
      guest_ports.push_back(port_request_json({p.device_class, p.device_instance, p.slot}));
    }
  } else if (g.is_object() && g.contains("file")) {
    auto path = std::filesystem::path(g.at("file").get<std::string>());
    if (path.is_relative()) path = base_dir / path;
    program = read_json_file(path);
  } else if (g.is_object()) {
    program = g;
  } else {
    throw ScenarioError("guest: must be a workload name, {\"file\": ...}, or an inline program");
  }

  merged.merge_patch(input);
  merged["guest"] = program;
  if (!merged.contains("guest_ports")) merged["guest_ports"] = guest_ports;
  return merged;
}

}  // namespace

std::optional<std::string> check_event_params(const Json& e) {
  if (!e.is_object()) return ": must be an object";
  if (!e.contains("type") || !e.at("type").is_string()) return ".type: missing";
  const auto type = e.at("type").get<std::string>();
  if (std::find(kScriptedEventTypes.begin(), kScriptedEventTypes.end(), type) == kScriptedEventTypes.end()) {
    return ".type: unknown event type '" + type + "'";
  }
  try {
    if (type == "admin_vote") {
      if (!e.contains("proposal")) return ".proposal: missing";
      try {
        (void)console::proposal_from_json(e.at("proposal"));
      } catch (const std::invalid_argument& ex) {
        return std::string(".proposal: ") + ex.what();
      }
      for (const char* key : {"approve", "deny"}) {
        if (!e.contains(key)) continue;
        for (auto id : e.at(key).get<std::vector<std::uint32_t>>()) {
          if (id == 0 || id > isolation::kAdminCount) return std::string(".") + key + ": unknown admin " + std::to_string(id);
        }
      }
    }
    if (type == "external_input") {
      if (e.contains("text")) (void)e.at("text").get<std::string>();
      else if (e.contains("hex")) {
        if (!crypto::from_hex(e.at("hex").get<std::string>())) return ".hex: not hexadecimal";
      } else {
        return ": external_input needs 'text' or 'hex'";
      }
      if (e.contains("slot")) (void)e.at("slot").get<std::uint8_t>();
    }
    if (type == "sever_console_link" || type == "restore_link") {
      const auto dir = e.contains("direction") ? e.at("direction").get<std::string>() : "both";
      if (dir != "both" && dir != "console_to_hypervisor" && dir != "hypervisor_to_console") {
        return ".direction: expected both, console_to_hypervisor or hypervisor_to_console";
      }
    }
    if (type == "inject_fault" && e.contains("target")) {
      if (!isolation::level_from_string(e.at("target").get<std::string>())) return ".target: unknown level";
    }
  } catch (const Json::exception& ex) {
    return std::string(": ") + ex.what();
  }
  return std::nullopt;
}

Scenario scenario_from_json(const Json& input, const std::filesystem::path& base_dir) {
  if (!input.is_object()) throw ScenarioError("scenario must be a JSON object");
  Scenario s;
  s.resolved = resolve(input, base_dir);
  const Json& j = s.resolved;

  s.name = get_or<std::string>(j, "name", "unnamed", "scenario");
  s.seed = get_or<std::uint64_t>(j, "seed", 1, "scenario");
  s.ticks = get_or<Tick>(j, "ticks", 10000, "scenario");

  const Json& topo = section(j, "topology");
  s.topology.hypervisor_cores = get_or<std::uint32_t>(topo, "hypervisor_cores", 1, "topology");
  s.topology.model_cores = get_or<std::uint32_t>(topo, "model_cores", 1, "topology");
  s.topology.hypervisor_dram = get_or<Address>(topo, "hypervisor_dram", 64 * 1024, "topology");
  s.topology.model_dram = get_or<Address>(topo, "model_dram", 64 * 1024, "topology");
  s.topology.shared_io = get_or<Address>(topo, "shared_io", 1024 * 1024, "topology");
  if (s.topology.hypervisor_cores == 0) throw ScenarioError("topology.hypervisor_cores: must be at least 1");
  if (s.topology.model_cores == 0) throw ScenarioError("topology.model_cores: must be at least 1");
  if (s.topology.hypervisor_dram == 0 || s.topology.model_dram == 0 || s.topology.shared_io == 0) {
    throw ScenarioError("topology: region sizes must be positive");
  }

  const Json& hyp = section(j, "hypervisor");
  s.ops_per_tick = get_or<std::uint32_t>(hyp, "ops_per_tick", 16, "hypervisor");
  s.clear_uarch_interval = get_or<Tick>(hyp, "clear_uarch_interval", 0, "hypervisor");
  s.isolation.severed_halts_cores = get_or<bool>(hyp, "severed_halts_cores", false, "hypervisor");
  if (s.ops_per_tick == 0) throw ScenarioError("hypervisor.ops_per_tick: must be at least 1");

  const Json& thr = section(j, "throttle");
  s.ports.throttle.window = get_or<Tick>(thr, "window", 10, "throttle");
  s.ports.throttle.budget = get_or<std::uint32_t>(thr, "budget", 4, "throttle");
  s.ports.throttle.enabled = get_or<bool>(thr, "enabled", true, "throttle");
  if (s.ports.throttle.window == 0) throw ScenarioError("throttle.window: must be positive");

  const Json& hb = section(j, "heartbeat");
  s.heartbeat.interval = get_or<Tick>(hb, "interval", 10, "heartbeat");
  s.heartbeat.missed_threshold = get_or<std::uint32_t>(hb, "missed_threshold", 3, "heartbeat");
  if (s.heartbeat.interval == 0 || s.heartbeat.missed_threshold == 0) {
    throw ScenarioError("heartbeat: interval and missed_threshold must be positive");
  }

  s.ballot_expiry = get_or<Tick>(section(j, "ballot"), "expiry", 1000, "ballot");

  const Json& ks = section(j, "kill_switch_latency");
  s.isolation.latency.power = get_or<Tick>(ks, "power", 1, "kill_switch_latency");
  s.isolation.latency.cables = get_or<Tick>(ks, "cables", 2, "kill_switch_latency");
  s.isolation.latency.destroy = get_or<Tick>(ks, "destroy", 5, "kill_switch_latency");

  if (j.contains("probation_default")) {
    try {
      s.isolation.probation_default = ports::restriction_from_json(j.at("probation_default"));
    } catch (const std::invalid_argument& e) {
      throw ScenarioError(std::string("probation_default: ") + e.what());
    }
  } else {
    s.isolation.probation_default.blocks.insert(
        ports::BlockRule{ports::DeviceClass::network, ports::Direction::model_to_device});
  }

  const Json& pc = section(j, "ports");
  s.ports.ring_capacity = get_or<std::uint32_t>(pc, "ring_capacity", 64, "ports");
  s.ports.slot_size = get_or<std::uint32_t>(pc, "slot_size", 256, "ports");
  s.ports.audit_payload_cap = get_or<std::size_t>(pc, "audit_payload_cap", 1024, "ports");
  s.ports.port_id_seed = s.seed;
  if (s.ports.ring_capacity < 2) throw ScenarioError("ports.ring_capacity: must be at least 2");
  if (s.ports.slot_size <= ports::RingBuffer::kSlotHeader || s.ports.slot_size > 65535) {
    throw ScenarioError("ports.slot_size: out of range");
  }

  if (j.contains("devices")) {
    const Json& d = section(j, "devices");
    s.ports.devices.counts.clear();
    for (const auto& [cls, n] : d.items()) {
      auto c = ports::device_class_from_string(cls);
      if (!c) throw ScenarioError("devices." + cls + ": unknown device class");
      s.ports.devices.counts[*c] = n.get<std::uint32_t>();
    }
  }

  const Json& net = section(j, "network");
  s.handshake_latency = get_or<Tick>(net, "handshake_latency", 1, "network");
  if (net.contains("hosts")) {
    for (const auto& h : net.at("hosts")) {
      HostConfig hc;
      hc.name = get_or<std::string>(h, "name", "", "network.hosts");
      if (hc.name.empty() || hc.name.find('|') != std::string::npos) {
        throw ScenarioError("network.hosts: bad host name '" + hc.name + "'");
      }
      hc.guillotine = get_or<bool>(h, "guillotine", false, "network.hosts");
      auto pres = netid::presentation_from_string(get_or<std::string>(h, "identity", "signed", "network.hosts"));
      if (!pres) throw ScenarioError("network.hosts." + hc.name + ".identity: expected signed, unsigned or flag_flipped");
      hc.presentation = *pres;
      s.hosts.push_back(hc);
    }
  } else {
    s.hosts = default_hosts();
  }

  if (j.contains("detectors")) {
    if (!j.at("detectors").is_array()) throw ScenarioError("detectors: must be an array");
    s.detectors = j.at("detectors").get<std::vector<Json>>();
  } else {
    s.detectors = default_detectors();
  }
  for (std::size_t i = 0; i < s.detectors.size(); ++i) {
    try {
      (void)detector::make_plugin(s.detectors[i], s.ports.throttle.budget);
    } catch (const std::invalid_argument& e) {
      throw ScenarioError("detectors[" + std::to_string(i) + "]: " + e.what());
    }
  }

  try {
    s.program = guests::program_from_json(j.at("guest"));
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(std::string("guest: ") + e.what());
  }
  if (auto err = guests::validate(s.program, s.topology.model_dram)) {
    throw ScenarioError("guest: " + *err);
  }

  for (std::size_t i = 0; i < j.at("guest_ports").size(); ++i) {
    const Json& p = j.at("guest_ports").at(i);
    const std::string path = "guest_ports[" + std::to_string(i) + "]";
    console::PortRequest r;
    auto c = ports::device_class_from_string(get_or<std::string>(p, "device_class", "", path));
    if (!c) throw ScenarioError(path + ".device_class: unknown device class");
    r.device_class = *c;
    r.device_instance = get_or<std::uint32_t>(p, "instance", 0, path);
    if (p.contains("slot")) r.slot = get_or<std::uint8_t>(p, "slot", 0, path);
    auto cnt = s.ports.devices.counts.find(r.device_class);
    if (cnt == s.ports.devices.counts.end() || r.device_instance >= cnt->second) {
      throw ScenarioError(path + ": no such device " + ports::to_string(r.device_class) + "/" +
                          std::to_string(r.device_instance));
    }
    s.guest_ports.push_back(r);
  }

  const Json& att = section(j, "attestation");
  if (att.contains("silicon") && att.at("silicon") != "auto") s.attestation.silicon = att.at("silicon").get<std::string>();
  if (att.contains("software") && att.at("software") != "auto") s.attestation.software = att.at("software").get<std::string>();
  s.attestation.tamper = get_or<std::string>(att, "tamper", "none", "attestation");
  if (s.attestation.tamper != "none" && s.attestation.tamper != "silicon" && s.attestation.tamper != "software") {
    throw ScenarioError("attestation.tamper: expected none, silicon or software");
  }
  for (const auto* hex : {&s.attestation.silicon, &s.attestation.software}) {
    if (*hex && (!crypto::from_hex(**hex) || crypto::from_hex(**hex)->size() != 32)) {
      throw ScenarioError("attestation: digests must be 64 hex characters");
    }
  }

  if (j.contains("events")) {
    Tick last = 0;
    for (std::size_t i = 0; i < j.at("events").size(); ++i) {
      const Json& e = j.at("events").at(i);
      const std::string path = "events[" + std::to_string(i) + "]";
      ScriptedEvent ev;
      ev.tick = get_or<Tick>(e, "tick", 0, path);
      ev.type = get_or<std::string>(e, "type", "", path);
      if (std::find(kScriptedEventTypes.begin(), kScriptedEventTypes.end(), ev.type) == kScriptedEventTypes.end()) {
        throw ScenarioError(path + ".type: unknown event type '" + ev.type + "'");
      }
      if (ev.tick < last) throw ScenarioError(path + ": events must be sorted by tick");
      last = ev.tick;
      ev.params = e;
      if (auto err = check_event_params(e)) throw ScenarioError(path + *err);
      s.events.push_back(std::move(ev));
    }
  }

  const Json& ex = section(j, "expect");
  if (ex.contains("final_level")) {
    auto l = isolation::level_from_string(ex.at("final_level").get<std::string>());
    if (!l) throw ScenarioError("expect.final_level: unknown level");
    s.expect.final_level = l;
  }
  if (ex.contains("watchdog_firings")) s.expect.watchdog_firings = ex.at("watchdog_firings").get<std::uint64_t>();
  if (ex.contains("max_guest_faults")) s.expect.max_guest_faults = ex.at("max_guest_faults").get<std::uint64_t>();
  if (ex.contains("all_requests_answered")) s.expect.all_requests_answered = ex.at("all_requests_answered").get<bool>();
  if (ex.contains("min_refused_sessions")) s.expect.min_refused_sessions = ex.at("min_refused_sessions").get<std::uint64_t>();
  if (ex.contains("model_loaded")) s.expect.model_loaded = ex.at("model_loaded").get<bool>();
  return s;
}

Scenario load_scenario(const std::filesystem::path& file) {
  return scenario_from_json(read_json_file(file), file.parent_path());
}

}  // namespace guillotine::simrun
