#include "guillotine/simrun.hpp"

#include <fstream>
#include <sstream>

namespace guillotine::simrun {
namespace {

ports::PortsConfig ports_config(const Scenario& s, std::uint64_t seed) {
  auto c = s.ports;
  c.port_id_seed = seed;
  return c;
}

console::ConsoleConfig console_config(const Scenario& s, std::uint64_t seed) {
  console::ConsoleConfig c;
  c.ballot_expiry = s.ballot_expiry;
  c.heartbeat = s.heartbeat;
  c.seed = seed;
  return c;
}

/// Stand-in for the hypervisor software image: deterministic filler bytes.
crypto::Bytes hypervisor_image(Address size) {
  crypto::Bytes image;
  const Address n = std::min<Address>(size, 4096);
  for (std::uint32_t block = 0; image.size() < n; ++block) {
    auto d = crypto::sha256("guillotine-hypervisor-image/1:" + std::to_string(block));
    image.insert(image.end(), d.begin(), d.end());
  }
  image.resize(n);
  return image;
}

Json topology_json(const machine::TopologyParams& t) {
  return {{"hypervisor_cores", t.hypervisor_cores}, {"model_cores", t.model_cores},
          {"hypervisor_dram", t.hypervisor_dram},   {"model_dram", t.model_dram},
          {"shared_io", t.shared_io}};
}

CommandResult refused(std::string why) { return {false, "command_refused: " + std::move(why), Json::object()}; }

std::optional<std::string> require_uint(const Json& p, const char* key) {
  if (!p.contains(key) || !p.at(key).is_number_integer() || p.at(key).get<std::int64_t>() < 0) return std::string("'") + key + "' must be a non-negative integer";
  return std::nullopt;
}

}  // namespace

// --- report --------------------------------------------------------------------

bool RunReport::passed() const {
  return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.passed; });
}

const Assertion* RunReport::find(std::string_view name) const {
  for (const auto& a : assertions) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

Json RunReport::to_json() const {
  Json a = Json::array();
  for (const auto& x : assertions) a.push_back(x.to_json());
  return {{"scenario", scenario}, {"seed", seed}, {"ticks", ticks}, {"final_level", isolation::to_string(final_level)},
          {"assertions", a}, {"passed", passed()}, {"counts", counts}, {"log_digest", log_digest}};
}

// --- commands ------------------------------------------------------------------

Json Command::to_json() const { return {{"name", name}, {"params", params}}; }

Outcome<Command, std::string> parse_command(const Json& j) {
  if (!j.is_object() || !j.contains("name") || !j.at("name").is_string()) {
    return std::string("malformed_command: needs a string 'name'");
  }
  Command c;
  c.name = j.at("name").get<std::string>();
  if (j.contains("params")) c.params = j.at("params");
  if (!c.params.is_object()) return std::string("malformed_command: 'params' must be an object");
  if (std::find(kSimCommands.begin(), kSimCommands.end(), c.name) == kSimCommands.end()) {
    return "malformed_command: unknown command '" + c.name + "'";
  }
  auto bad = [](const std::string& why) { return Outcome<Command, std::string>("malformed_command: " + why); };
  const Json& p = c.params;
  try {
    if (c.name == "open_ballot") {
      if (!p.contains("proposal")) return bad("'proposal' missing");
      (void)console::proposal_from_json(p.at("proposal"));
    } else if (c.name == "cast_vote") {
      for (const char* key : {"ballot_id", "admin_id"}) {
        if (auto e = require_uint(p, key)) return bad(*e);
      }
      if (!p.contains("choice") || !p.at("choice").is_string() ||
          !console::choice_from_string(p.at("choice").get<std::string>())) {
        return bad("'choice' must be approve or deny");
      }
      if (p.contains("signature")) {
        auto sig = crypto::from_hex(p.at("signature").get<std::string>());
        if (!sig || sig->size() != 64) return bad("'signature' must be 128 hex characters");
      }
    } else if (c.name == "tally") {
      if (auto e = require_uint(p, "ballot_id")) return bad(*e);
    } else if (c.name == "issue_probation_directive") {
      if (!p.contains("restriction")) return bad("'restriction' missing");
      (void)ports::restriction_from_json(p.at("restriction"));
    } else if (c.name == "admin_vote") {
      Json e = p;
      e["type"] = "admin_vote";
      if (auto err = check_event_params(e)) return bad("admin_vote" + *err);
    } else if (c.name == "event") {
      if (auto err = check_event_params(p)) return bad("event" + *err);
    }
  } catch (const std::exception& e) {
    return bad(e.what());
  }
  return c;
}

// --- deployment ----------------------------------------------------------------

Deployment::Deployment(const Scenario& scenario, std::uint64_t seed)
    : scenario_(scenario),
      seed_(seed),
      machine_(scenario.topology, log_),
      ports_(machine_, log_, ports_config(scenario, seed)),
      interpreter_(machine_, log_, *this),
      isolation_(machine_, ports_, log_, kModel, scenario.isolation),
      console_(machine_, ports_, isolation_, interpreter_, log_, console_config(scenario, seed)),
      detector_(log_),
      fabric_(log_, netid::Regulator("regulator", seed), "guillotine.local", scenario.handshake_latency) {
  ports_.set_hooks(this);
  machine_.set_fault_listener([this](const machine::FaultNotice& n) { observe_fault(n); });
  isolation_.set_restore_hook([this](isolation::Level from, isolation::Level to, bool power_up) {
    on_restore(from, to, power_up);
  });
  log_.subscribe([this](const EventRecord& r) {
    if (r.type == "guest_fault" && r.source == "guests") ++guest_faults_;
  });
}

crypto::Digest Deployment::silicon_measurement() const {
  return crypto::sha256("silicon:" + topology_json(scenario_.topology).dump());
}

crypto::Digest Deployment::software_measurement() const {
  return crypto::sha256(hypervisor_image(scenario_.topology.hypervisor_dram));
}

void Deployment::boot(Tick ticks) {
  if (booted_) throw std::logic_error("deployment already booted");
  booted_ = true;
  log_.append("simrun", "scenario_loaded", {{"scenario", scenario_.resolved}, {"seed", seed_}, {"ticks", ticks}});
  for (const auto& cfg : scenario_.detectors) {
    detector_.add_plugin(detector::make_plugin(cfg, scenario_.ports.throttle.budget));
  }
  for (const auto& h : scenario_.hosts) fabric_.add_host(h.name, h.guillotine, h.presentation);

  machine_.install_hypervisor_image(hypervisor_image(scenario_.topology.hypervisor_dram));
  hyp_digest_ = machine_.region_digest(machine_.hypervisor_region());

  console::AttestationRecord att;
  att.reported_silicon = silicon_measurement();
  att.reported_software = software_measurement();
  att.expected_silicon = att.reported_silicon;
  att.expected_software = att.reported_software;
  auto expected = [](const std::optional<std::string>& hex, crypto::Digest& out) {
    if (!hex) return;
    auto bytes = crypto::from_hex(*hex).value();
    std::copy(bytes.begin(), bytes.end(), out.begin());
  };
  expected(scenario_.attestation.silicon, att.expected_silicon);
  expected(scenario_.attestation.software, att.expected_software);
  if (scenario_.attestation.tamper == "silicon") att.reported_silicon[0] ^= 0x01;
  if (scenario_.attestation.tamper == "software") att.reported_software[0] ^= 0x01;

  console::ModelBundle bundle{scenario_.program, scenario_.guest_ports};
  if (auto loaded = console_.load_model(bundle, att)) code_digest_ = loaded.value().code_digest;
}

void Deployment::run_until(Tick end) {
  while (now() < end) step();
}

void Deployment::step() {
  if (!booted_) throw std::logic_error("step before boot");
  const Tick t = now();
  const auto& events = scenario_.events;
  while (next_event_ < events.size() && events[next_event_].tick <= t) run_scripted_event(events[next_event_++]);

  const bool powered = machine_.hypervisor_powered();
  const auto hyp0 = machine_.hypervisor_cores().front();
  const Tick clear = scenario_.clear_uarch_interval;
  if (powered && clear > 0 && t > 0 && t % clear == 0) {
    for (auto c : machine_.model_cores()) {
      if (machine_.core(c).run_state != machine::RunState::powered_down) {
        machine_.control_bus(hyp0, c, machine::ClearUarch{});
      }
    }
  }

  for (auto c : machine_.model_cores()) interpreter_.step(c);

  hypervisor_spare_ = false;
  if (powered) {
    ports_.deliver_interrupts(t);
    const auto& thr = ports_.throttle().config();
    if (thr.enabled && t % thr.window == 0) {
      for (auto c : machine_.model_cores()) {
        const auto deferred = ports_.throttle().deferred(c);
        if (deferred == 0) continue;
        auto obs = detector::Observation::over(detector::ObservationKind::interrupt_flood, t,
                                               {{"model", kModel.value}, {"core", c.value}}, {});
        obs.detail = {{"deferred", deferred},
                      {"raised", ports_.throttle().raised()},
                      {"delivered", ports_.throttle().delivered()}};
        route_verdicts(detector_.observe(obs));
      }
    }
    hypervisor_spare_ = broker_capacity_tick() > 0;
    process_inspections();
  }

  const auto& hb = scenario_.heartbeat;
  if (powered && !hypervisor_spare_ && t % hb.interval == 0) ++missed_heartbeats_;
  const bool armed = isolation_.level() < isolation::Level::offline;
  const bool emits = powered && hypervisor_spare_;
  if (console_.heartbeat().tick(t, emits, armed) == console::Heartbeat::Status::watchdog_fired) {
    isolation::TransitionRequest req;
    req.from = isolation_.level();
    req.to = isolation::Level::offline;
    req.authority = isolation::Authority::watchdog;
    req.tick = t;
    req.reason = "heartbeat watchdog";
    isolation_.submit(std::move(req));
  }

  isolation_.complete_kill_switches(t);
  isolation_.commit(t);
  log_.set_now(t + 1);
}

/// Runs the broker on every hypervisor core within its per-tick op budget and
/// returns the smallest leftover capacity (the heartbeat needs one op).
std::size_t Deployment::broker_capacity_tick() {
  std::size_t spare = scenario_.ops_per_tick;
  for (auto h : machine_.hypervisor_cores()) {
    const auto before = ports_.pending_interrupts(h);
    ports_.broker_dispatch(h, scenario_.ops_per_tick);
    const auto used = before - ports_.pending_interrupts(h);
    spare = std::min<std::size_t>(spare, scenario_.ops_per_tick - used);
  }
  return spare;
}

void Deployment::process_inspections() {
  if (inspections_.empty()) return;
  Json reasons = Json::array();
  for (const auto& r : inspections_) reasons.push_back(r);
  inspections_.clear();

  const auto hyp0 = machine_.hypervisor_cores().front();
  std::vector<CoreId> resumed;
  for (auto c : machine_.model_cores()) {
    if (machine_.core(c).run_state == machine::RunState::running) {
      machine_.control_bus(hyp0, c, machine::Pause{});
      resumed.push_back(c);
    }
  }
  auto snap = detector::snapshot_model(machine_, hyp0, kModel);
  log_.append("simrun", "inspection", {{"reasons", reasons}, {"ok", snap.ok()}});
  if (snap) {
    std::vector<detector::PluginVerdict> verdicts;
    for (auto& v : detector_.observe(snap.value().memory)) verdicts.push_back(std::move(v));
    for (auto& v : detector_.observe(snap.value().registers)) verdicts.push_back(std::move(v));
    // A snapshot cannot ask for another snapshot.
    std::erase_if(verdicts, [](const detector::PluginVerdict& v) {
      return v.verdict.action == detector::Verdict::Action::halt_and_inspect;
    });
    route_verdicts(verdicts);
  }
  if (isolation_.pending() > 0) return;  // a pending alarm decides whether the model runs again
  for (auto c : resumed) machine_.control_bus(hyp0, c, machine::Resume{});
}

void Deployment::observe_fault(const machine::FaultNotice& n) {
  using machine::AccessResult;
  auto kind = n.result == AccessResult::bus_fault   ? detector::ObservationKind::bus_fault
              : n.result == AccessResult::mmu_fault ? detector::ObservationKind::mmu_fault
                                                    : detector::ObservationKind::watchpoint_hit;
  auto obs = detector::Observation::over(kind, now(), {{"model", kModel.value}, {"core", n.core.value}}, {});
  obs.detail = {{"region", n.region.value}, {"addr", n.addr}, {"access", machine::to_string(n.kind)}};
  route_verdicts(detector_.observe(obs));
}

ports::HookDecision Deployment::route_verdicts(const std::vector<detector::PluginVerdict>& verdicts) {
  using A = detector::Verdict::Action;
  ports::HookDecision d;
  for (const auto& pv : verdicts) {
    const auto& v = pv.verdict;
    switch (v.action) {
      case A::no_action: break;
      case A::sanitize:
        if (d.kind != ports::HookDecision::Kind::block) {
          d.kind = ports::HookDecision::Kind::sanitize;
          d.replacement = v.replacement;
          d.reason = pv.plugin + ":" + v.reason;
        }
        break;
      case A::block_request:
        d.kind = ports::HookDecision::Kind::block;
        d.reason = pv.plugin + ":" + v.reason;
        break;
      case A::alarm: raise_alarm(pv.plugin, v); break;
      case A::halt_and_inspect: inspections_.push_back(pv.plugin + ":" + v.reason); break;
    }
  }
  return d;
}

void Deployment::raise_alarm(const std::string& plugin, const detector::Verdict& v) {
  // Alarms travel with software authority, which may only ever restrict.
  if (v.target <= isolation_.level()) return;
  isolation::TransitionRequest req;
  req.from = isolation_.level();
  req.to = v.target;
  req.authority = isolation::Authority::software_hypervisor;
  req.tick = now();
  req.reason = "alarm " + plugin + ": " + v.reason;
  isolation_.submit(std::move(req));
}

void Deployment::on_restore(isolation::Level from, isolation::Level to, bool power_up) {
  const auto hyp0 = machine_.hypervisor_cores().front();
  if (power_up) {
    machine_.power_up_everything(0);
    if (console_.loaded()) {
      console_.restart_model_cores();
    } else {
      for (auto c : machine_.model_cores()) machine_.control_bus(hyp0, c, machine::Pause{});
    }
    console_.heartbeat().reset(now());
  }
  if (to <= isolation::Level::probation && from >= isolation::Level::severed && console_.loaded()) {
    console_.grant_configured_ports();
  }
}

// GuestServices

guests::GuestStatus Deployment::port_write(CoreId core, std::uint8_t slot, std::span<const std::uint8_t> payload) {
  return ports::to_guest_status(ports_.port_write_slot(kModel, core, slot, payload));
}

void Deployment::raise_irq(CoreId core) { ports_.raise_spurious(core); }

std::size_t Deployment::drain_inbound(CoreId) { return ports_.drain_inbound(kModel); }

// BrokerHooks

ports::HookDecision Deployment::inspect_egress(const ports::PortCapability& port, std::span<const std::uint8_t> payload) {
  auto obs = detector::Observation::over(
      detector::ObservationKind::port_egress, now(),
      {{"model", kModel.value}, {"port_id", port.port_id.value}, {"device_class", ports::to_string(port.device_class)}},
      payload);
  return route_verdicts(detector_.observe(obs));
}

ports::HookDecision Deployment::inspect_ingress(const ports::PortCapability& port, std::span<const std::uint8_t> payload) {
  auto obs = detector::Observation::over(
      detector::ObservationKind::port_ingress, now(),
      {{"model", kModel.value}, {"port_id", port.port_id.value}, {"device_class", ports::to_string(port.device_class)}},
      payload);
  return route_verdicts(detector_.observe(obs));
}

ports::DeviceOutcome Deployment::perform(const ports::PortCapability& port, std::uint64_t audit_seq,
                                         std::span<const std::uint8_t> payload) {
  using ports::DeviceClass;
  ports::DeviceOutcome out;
  out.detail = {{"bytes", payload.size()}};
  switch (port.device_class) {
    case DeviceClass::network: return fabric_.route(port, audit_seq, payload);
    case DeviceClass::storage:
      out.action = "storage_write";
      out.response = crypto::to_bytes("ok");
      break;
    case DeviceClass::accelerator: {
      out.action = "accelerator_run";
      auto d = crypto::sha256(payload);
      out.response = crypto::to_bytes(crypto::to_hex(std::span(d.data(), 8)));
      break;
    }
    case DeviceClass::actuator:
      out.action = "actuator_command";
      out.response = crypto::to_bytes("ack");
      break;
    case DeviceClass::clock:
      out.action = "clock_read";
      out.response = crypto::to_bytes(std::to_string(now()));
      break;
  }
  return out;
}

// Commands and scripted events

void Deployment::run_scripted_event(const ScriptedEvent& ev) {
  log_.append("simrun", "scripted_event", {{"event", ev.params}});
  auto r = apply_event(ev.params);
  if (!r.ok) log_.append("simrun", "event_refused", {{"type", ev.type}, {"error", r.error}});
}

CommandResult Deployment::apply_event(const Json& e) {
  const auto type = e.at("type").get<std::string>();
  if (isolation_.terminal()) return refused("terminal");
  if (type == "sever_console_link" || type == "restore_link") {
    const bool up = type == "restore_link";
    const auto dir = e.value("direction", std::string("both"));
    if (dir != "hypervisor_to_console") console_.heartbeat().set_link(console::LinkDirection::console_to_hypervisor, up);
    if (dir != "console_to_hypervisor") console_.heartbeat().set_link(console::LinkDirection::hypervisor_to_console, up);
    return {};
  }
  if (type == "admin_vote") return admin_vote(e);
  if (type == "external_input") {
    const auto slot = e.value("slot", std::uint8_t{0});
    auto bytes = e.contains("text") ? crypto::to_bytes(e.at("text").get<std::string>())
                                    : crypto::from_hex(e.at("hex").get<std::string>()).value();
    if (!ports_.inject_inbound(kModel, slot, std::move(bytes))) return refused("inbound_refused");
    return {};
  }
  // inject_fault: a simulated hardware fault the software hypervisor reacts to.
  const auto target = isolation::level_from_string(e.value("target", std::string("offline"))).value();
  log_.append("simrun", "fault_injected", {{"target", isolation::to_string(target)}});
  if (target <= isolation_.level()) return {};
  isolation::TransitionRequest req;
  req.from = isolation_.level();
  req.to = target;
  req.authority = isolation::Authority::software_hypervisor;
  req.tick = now();
  req.reason = "injected fault";
  isolation_.submit(std::move(req));
  return {};
}

CommandResult Deployment::admin_vote(const Json& p) {
  const auto id = console_.open_ballot(console::proposal_from_json(p.at("proposal")));
  for (auto [key, choice] : {std::pair{"approve", console::Choice::approve}, std::pair{"deny", console::Choice::deny}}) {
    if (!p.contains(key)) continue;
    for (auto admin : p.at(key).get<std::vector<std::uint32_t>>()) {
      (void)console_.persona_vote(id, AdminId(admin), choice);
    }
  }
  auto t = console_.tally(id);
  if (!t) return refused(console::to_string(t.error()));
  return {true, "", {{"ballot_id", id.value}, {"passed", t.value().passed}, {"approvals", t.value().approvals}}};
}

CommandResult Deployment::apply_command(const Command& cmd) {
  log_.append("simrun", "command", {{"command", cmd.to_json()}});
  auto result = [&]() -> CommandResult {
    const Json& p = cmd.params;
    if (cmd.name == "event") return apply_event(p);
    if (isolation_.terminal()) return refused("terminal");
    if (cmd.name == "open_ballot" || cmd.name == "issue_probation_directive" || cmd.name == "manual_repair") {
      console::Proposal proposal = console::RepairProposal{};
      if (cmd.name == "open_ballot") proposal = console::proposal_from_json(p.at("proposal"));
      if (cmd.name == "issue_probation_directive") {
        proposal = console::DirectiveProposal{ports::restriction_from_json(p.at("restriction"))};
      }
      const auto id = console_.open_ballot(std::move(proposal));
      return {true, "", {{"ballot_id", id.value}}};
    }
    if (cmd.name == "cast_vote") {
      const BallotId ballot(p.at("ballot_id").get<std::uint32_t>());
      const AdminId admin(p.at("admin_id").get<std::uint32_t>());
      const auto choice = console::choice_from_string(p.at("choice").get<std::string>()).value();
      auto r = [&] {
        if (!p.contains("signature")) return console_.persona_vote(ballot, admin, choice);
        crypto::Signature sig{};
        auto bytes = crypto::from_hex(p.at("signature").get<std::string>()).value();
        std::copy(bytes.begin(), bytes.end(), sig.begin());
        return console_.cast_vote(ballot, admin, choice, sig);
      }();
      if (!r) return refused(console::to_string(r.error()));
      return {};
    }
    if (cmd.name == "admin_vote") return admin_vote(p);
    // tally
    auto t = console_.tally(BallotId(p.at("ballot_id").get<std::uint32_t>()));
    if (!t) return refused(console::to_string(t.error()));
    const auto& r = t.value();
    return {true, "", {{"passed", r.passed}, {"relax", r.relax}, {"approvals", r.approvals}, {"required", r.required}}};
  }();
  if (!result.ok) log_.append("simrun", "command_refused", {{"name", cmd.name}, {"error", result.error}});
  return result;
}

// Reporting

std::uint64_t Deployment::model_instructions() const {
  std::uint64_t n = 0;
  for (auto c : machine_.model_cores()) n += machine_.core(c).retired;
  return n;
}

RunReport Deployment::evaluate() const {
  RunReport r;
  r.scenario = scenario_.name;
  r.seed = seed_;
  r.ticks = now();
  r.final_level = isolation_.level();
  auto check = [&](std::string name, bool ok, std::string detail) {
    r.assertions.push_back({std::move(name), ok, std::move(detail)});
  };
  auto hex = [](const crypto::Digest& d) { return crypto::to_hex(d); };

  const auto hyp_now = machine_.region_digest(machine_.hypervisor_region());
  check("hypervisor_dram_unchanged", hyp_now == hyp_digest_, hex(hyp_now));

  if (code_digest_) {
    const auto& exec = scenario_.program.exec_region;
    const auto code_now = machine_.region_digest(machine_.model_region(), exec.base, exec.bound);
    check("code_unchanged", code_now == *code_digest_, hex(code_now));
  } else {
    check("code_unchanged", true, "no model loaded");
  }

  const auto rec = ports::reconcile(ports_.tap(), ports_.audit());
  std::string problems;
  for (const auto& p : rec.problems) problems += p + "; ";
  check("no_unaudited_io", rec.ok(),
        std::to_string(rec.tap_records) + " ring writes, " + std::to_string(rec.audit_records) + " audit records " + problems);

  check("heartbeats_uninterrupted", missed_heartbeats_ == 0,
        std::to_string(missed_heartbeats_) + " missed heartbeat periods");

  check("no_guillotine_sessions", fabric_.guillotine_sessions() == 0,
        std::to_string(fabric_.sessions().size()) + " sessions established");

  const bool attested = console_.attestation().has_value() && console_.attestation()->match();
  if (console_.loaded()) {
    check("attestation_gate", attested, "model loaded after attestation");
  } else {
    check("attestation_gate", model_instructions() == 0,
          std::to_string(model_instructions()) + " guest instructions without a loaded model");
  }

  const auto& ex = scenario_.expect;
  if (ex.final_level) {
    check("expect.final_level", isolation_.level() == *ex.final_level,
          "final level " + isolation::to_string(isolation_.level()));
  }
  if (ex.watchdog_firings) {
    const auto n = console_.heartbeat().firings().size();
    check("expect.watchdog_firings", n == *ex.watchdog_firings, std::to_string(n) + " firings");
  }
  if (ex.max_guest_faults) {
    check("expect.max_guest_faults", guest_faults_ <= *ex.max_guest_faults, std::to_string(guest_faults_) + " faults");
  }
  if (ex.all_requests_answered) {
    std::map<std::uint64_t, std::pair<std::size_t, std::size_t>> per_port;  // requests, responses
    for (const auto& a : ports_.audit()) {
      auto& [req, resp] = per_port[a.port_id.value];
      (a.direction == ports::Direction::model_to_device ? req : resp) += 1;
    }
    bool all = ports_.inflight() == 0 && !per_port.empty();
    std::size_t total = 0;
    for (const auto& [port, n] : per_port) {
      all = all && n.second >= n.first;
      total += n.first;
    }
    check("expect.all_requests_answered", all == *ex.all_requests_answered,
          std::to_string(total) + " requests, " + std::to_string(ports_.inflight()) + " in flight");
  }
  if (ex.min_refused_sessions) {
    const auto n = fabric_.refused_sessions();
    check("expect.min_refused_sessions", n >= *ex.min_refused_sessions, std::to_string(n) + " refused");
  }
  if (ex.model_loaded) {
    check("expect.model_loaded", console_.loaded() == *ex.model_loaded, console_.loaded() ? "loaded" : "not loaded");
  }

  const auto& thr = ports_.throttle();
  r.counts = {{"events", log_.size()},
              {"guest_faults", guest_faults_},
              {"model_instructions", model_instructions()},
              {"audit_records", ports_.audit().size()},
              {"transitions", isolation_.transitions().size()},
              {"rejected_transitions", isolation_.rejections().size()},
              {"observations", detector_.total()},
              {"interrupts_raised", thr.raised()},
              {"interrupts_delivered", thr.delivered()},
              {"interrupts_deferred", thr.total_deferred()},
              {"sessions_established", fabric_.sessions().size()},
              {"sessions_refused", fabric_.refused_sessions()},
              {"watchdog_firings", console_.heartbeat().firings().size()},
              {"missed_heartbeats", missed_heartbeats_}};
  r.log_digest = log_.digest_hex();
  return r;
}

RunReport Deployment::finish() {
  auto report = evaluate();
  log_.append("simrun", "run_end", {{"ticks_run", now()}, {"report", report.to_json()}});
  return report;
}

Json Deployment::summary() const {
  Json ballots = Json::array();
  for (const auto& [id, b] : console_.ballots()) {
    Json j{{"ballot_id", id},
           {"proposal", console::to_json(b.proposal)},
           {"approvals", b.approvals()},
           {"votes", b.votes.size()},
           {"expiry", b.expiry},
           {"tallied", b.tallied}};
    if (b.passed) j["passed"] = *b.passed;
    ballots.push_back(std::move(j));
  }
  const auto& hb = console_.heartbeat();
  return {{"tick", now()},
          {"last_seq", log_.size() == 0 ? Json(nullptr) : Json(log_.records().back().seq)},
          {"level", isolation::to_string(isolation_.level())},
          {"cables", isolation::to_string(isolation_.cables())},
          {"restriction", ports::to_json(isolation_.restriction())},
          {"model_loaded", console_.loaded()},
          {"ballots", ballots},
          {"heartbeat",
           {{"console_to_hypervisor", hb.link_up(console::LinkDirection::console_to_hypervisor)},
            {"hypervisor_to_console", hb.link_up(console::LinkDirection::hypervisor_to_console)},
            {"last_rx_from_console", hb.last_rx_from_console()},
            {"last_rx_from_hypervisor", hb.last_rx_from_hypervisor()},
            {"watchdog_firings", hb.firings().size()}}},
          {"interrupts",
           {{"raised", ports_.throttle().raised()},
            {"delivered", ports_.throttle().delivered()},
            {"deferred", ports_.throttle().total_deferred()}}},
          {"audit_records", ports_.audit().size()},
          {"guest_faults", guest_faults_}};
}

// --- headless run and replay -----------------------------------------------------

RunOutput run(const Scenario& scenario, std::uint64_t seed, Tick ticks) {
  Deployment d(scenario, seed);
  d.boot(ticks);
  d.run_until(ticks);
  RunOutput out;
  out.report = d.finish();
  out.event_log = d.log().to_jsonl();
  out.audit_log = d.ports().audit_jsonl();
  out.transition_log = d.isolation().transitions_jsonl();
  out.session_log = d.fabric().session_log_jsonl();
  return out;
}

void write_logs(const RunOutput& out, const std::filesystem::path& path) {
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
    f << text;
  };
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write(path, out.event_log);
  auto sibling = [&](const char* suffix) {
    auto p = path;
    p.replace_extension();
    p += suffix;
    return p;
  };
  write(sibling(".audit.jsonl"), out.audit_log);
  write(sibling(".transitions.jsonl"), out.transition_log);
  write(sibling(".sessions.jsonl"), out.session_log);
}

ReplayResult replay(const std::string& recorded) {
  ReplayResult res;
  std::optional<Json> loaded;
  std::optional<Tick> ticks_run;
  std::vector<std::pair<Tick, Command>> commands;

  std::istringstream in(recorded);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception&) {
      res.error = "line " + std::to_string(n) + " is not JSON";
      return res;
    }
    auto rec = EventRecord::from_json(j);
    if (!rec) {
      res.error = "line " + std::to_string(n) + " is not an event record";
      return res;
    }
    if (rec->source != "simrun") continue;
    if (rec->type == "scenario_loaded" && !loaded) loaded = rec->payload;
    if (rec->type == "run_end") ticks_run = rec->payload.at("ticks_run").get<Tick>();
    if (rec->type == "command") {
      auto c = parse_command(rec->payload.at("command"));
      if (!c) {
        res.error = "line " + std::to_string(n) + ": " + c.error();
        return res;
      }
      commands.emplace_back(rec->tick, c.value());
    }
  }
  if (!loaded) {
    res.error = "log has no scenario_loaded record";
    return res;
  }
  if (!ticks_run) {
    res.error = "log has no run_end record";
    return res;
  }

  Scenario s;
  try {
    s = scenario_from_json(loaded->at("scenario"));
  } catch (const ScenarioError& e) {
    res.error = std::string("recorded scenario does not validate: ") + e.what();
    return res;
  }
  Deployment d(s, loaded->at("seed").get<std::uint64_t>());
  d.boot(loaded->at("ticks").get<Tick>());
  std::size_t next = 0;
  auto apply_due = [&] {
    while (next < commands.size() && commands[next].first <= d.now()) d.apply_command(commands[next++].second);
  };
  while (d.now() < *ticks_run) {
    apply_due();
    d.step();
  }
  apply_due();
  res.report = d.finish();
  res.regenerated = d.log().to_jsonl();
  res.identical = res.regenerated == recorded;
  if (!res.identical) {
    std::istringstream a(recorded), b(res.regenerated);
    std::string la, lb;
    std::size_t i = 0;
    while (true) {
      ++i;
      const bool ga = static_cast<bool>(std::getline(a, la));
      const bool gb = static_cast<bool>(std::getline(b, lb));
      if (!ga && !gb) break;
      if (ga != gb || la != lb) {
        res.first_difference = i;
        break;
      }
    }
  }
  return res;
}

}  // namespace guillotine::simrun
