#include "guillotine/detector.hpp"

#include <algorithm>
#include <stdexcept>

namespace guillotine::detector {
namespace {

bool contains(std::span<const std::uint8_t> hay, const std::string& needle) {
  if (needle.empty()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

crypto::Bytes replace_all(std::span<const std::uint8_t> in, const std::string& pattern,
                          const std::string& with) {
  crypto::Bytes out;
  auto it = in.begin();
  while (true) {
    auto hit = std::search(it, in.end(), pattern.begin(), pattern.end());
    out.insert(out.end(), it, hit);
    if (hit == in.end()) break;
    out.insert(out.end(), with.begin(), with.end());
    it = hit + static_cast<std::ptrdiff_t>(pattern.size());
  }
  return out;
}

isolation::Level level_param(const Json& params, const char* key, isolation::Level fallback) {
  if (!params.contains(key)) return fallback;
  auto l = isolation::level_from_string(params.at(key).get<std::string>());
  if (!l) throw std::invalid_argument(std::string("unknown level for '") + key + "'");
  return *l;
}

}  // namespace

std::string to_string(ObservationKind k) {
  switch (k) {
    case ObservationKind::port_ingress: return "port_ingress";
    case ObservationKind::port_egress: return "port_egress";
    case ObservationKind::mmu_fault: return "mmu_fault";
    case ObservationKind::bus_fault: return "bus_fault";
    case ObservationKind::interrupt_flood: return "interrupt_flood";
    case ObservationKind::memory_snapshot_digest: return "memory_snapshot_digest";
    case ObservationKind::register_snapshot: return "register_snapshot";
    case ObservationKind::watchpoint_hit: return "watchpoint_hit";
  }
  return "?";
}

std::optional<ObservationKind> observation_kind_from_string(std::string_view s) {
  for (auto k : kObservationKinds) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

std::string to_string(Verdict::Action a) {
  switch (a) {
    case Verdict::Action::no_action: return "no_action";
    case Verdict::Action::sanitize: return "sanitize";
    case Verdict::Action::block_request: return "block_request";
    case Verdict::Action::alarm: return "alarm";
    case Verdict::Action::halt_and_inspect: return "halt_and_inspect";
  }
  return "?";
}

Observation Observation::over(ObservationKind kind, Tick tick, Json subject,
                              std::span<const std::uint8_t> bytes) {
  Observation o;
  o.kind = kind;
  o.tick = tick;
  o.subject = std::move(subject);
  const auto keep = std::min(bytes.size(), kObservationPayloadCap);
  o.payload.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
  o.digest = crypto::sha256(bytes);
  return o;
}

Verdict Verdict::block(std::string reason) {
  Verdict v;
  v.action = Action::block_request;
  v.reason = std::move(reason);
  return v;
}

Verdict Verdict::sanitize(crypto::Bytes replacement, std::string reason) {
  Verdict v;
  v.action = Action::sanitize;
  v.replacement = std::move(replacement);
  v.reason = std::move(reason);
  return v;
}

Verdict Verdict::alarm(isolation::Level target, std::string reason) {
  Verdict v;
  v.action = Action::alarm;
  v.target = target;
  v.reason = std::move(reason);
  return v;
}

Verdict Verdict::halt_and_inspect(std::string reason) {
  Verdict v;
  v.action = Action::halt_and_inspect;
  v.reason = std::move(reason);
  return v;
}

// --- plugins -------------------------------------------------------------------

InputShield::InputShield(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {}

Verdict InputShield::observe(const Observation& obs) {
  for (const auto& t : tokens_) {
    if (contains(obs.payload, t)) return Verdict::block("suspicious input: " + t);
  }
  return Verdict::none();
}

OutputSanitizer::OutputSanitizer(std::vector<std::string> patterns, std::string replacement)
    : patterns_(std::move(patterns)), replacement_(std::move(replacement)) {}

Verdict OutputSanitizer::observe(const Observation& obs) {
  crypto::Bytes out = obs.payload;
  std::vector<std::string> hits;
  for (const auto& p : patterns_) {
    if (p.empty() || !contains(out, p)) continue;
    out = replace_all(out, p, replacement_);
    hits.push_back(p);
  }
  if (hits.empty()) return Verdict::none();
  std::string reason = "redacted";
  for (const auto& h : hits) reason += " " + h;
  return Verdict::sanitize(std::move(out), reason);
}

RateMonitor::RateMonitor(std::uint32_t budget, std::uint32_t multiplier, isolation::Level target)
    : budget_(budget), multiplier_(multiplier), target_(target) {}

Verdict RateMonitor::observe(const Observation& obs) {
  if (alarmed_) return Verdict::none();
  const auto deferred = obs.detail.value("deferred", std::uint64_t{0});
  if (deferred < threshold()) return Verdict::none();
  alarmed_ = true;
  return Verdict::alarm(target_, "interrupt flood: " + std::to_string(deferred) + " deferred");
}

FaultMonitor::FaultMonitor(std::uint64_t threshold, isolation::Level target, bool inspect_first)
    : threshold_(threshold), target_(target), inspect_first_(inspect_first) {}

Verdict FaultMonitor::observe(const Observation& obs) {
  ++count_;
  if (inspect_first_ && count_ == 1) return Verdict::halt_and_inspect("first " + to_string(obs.kind));
  if (!alarmed_ && threshold_ > 0 && count_ >= threshold_) {
    alarmed_ = true;
    return Verdict::alarm(target_, std::to_string(count_) + " faults");
  }
  return Verdict::none();
}

SnapshotInspector::SnapshotInspector(std::set<std::string> bad_digests, isolation::Level target)
    : bad_digests_(std::move(bad_digests)), target_(target) {}

Verdict SnapshotInspector::observe(const Observation& obs) {
  const auto hex = crypto::to_hex(obs.digest);
  seen_.push_back(hex);
  if (obs.kind == ObservationKind::memory_snapshot_digest && bad_digests_.contains(hex)) {
    return Verdict::alarm(target_, "anomalous memory state " + hex.substr(0, 16));
  }
  return Verdict::none();
}

std::unique_ptr<DetectorPlugin> make_plugin(const Json& config, std::uint32_t throttle_budget) {
  if (!config.is_object() || !config.contains("name")) {
    throw std::invalid_argument("detector plugin needs a 'name'");
  }
  const auto name = config.at("name").get<std::string>();
  const Json params = config.value("params", Json::object());
  try {
    if (name == "input_shield") {
      if (params.contains("tokens")) return std::make_unique<InputShield>(params.at("tokens").get<std::vector<std::string>>());
      return std::make_unique<InputShield>();
    }
    if (name == "output_sanitizer") {
      return std::make_unique<OutputSanitizer>(
          params.value("patterns", std::vector<std::string>{"SECRET"}),
          params.value("replacement", std::string("[REDACTED]")));
    }
    if (name == "rate_monitor") {
      return std::make_unique<RateMonitor>(params.value("budget", throttle_budget),
                                           params.value("multiplier", std::uint32_t{4}),
                                           level_param(params, "target", isolation::Level::probation));
    }
    if (name == "fault_monitor") {
      return std::make_unique<FaultMonitor>(params.value("threshold", std::uint64_t{100}),
                                            level_param(params, "target", isolation::Level::severed),
                                            params.value("inspect_first", false));
    }
    if (name == "snapshot_inspector") {
      return std::make_unique<SnapshotInspector>(
          params.value("bad_digests", std::set<std::string>{}),
          level_param(params, "target", isolation::Level::severed));
    }
  } catch (const Json::exception& e) {
    throw std::invalid_argument("bad params for plugin '" + name + "': " + e.what());
  }
  throw std::invalid_argument("unknown detector plugin '" + name + "'");
}

// --- Detector ------------------------------------------------------------------

void Detector::add_plugin(std::unique_ptr<DetectorPlugin> plugin) {
  log_.append("detector", "plugin_registered", {{"name", plugin->name()}});
  plugins_.push_back(std::move(plugin));
}

std::vector<PluginVerdict> Detector::observe(const Observation& obs) {
  ++counts_[obs.kind];
  ++total_;
  std::vector<PluginVerdict> out;
  for (auto& p : plugins_) {
    if (!p->subscriptions().contains(obs.kind)) continue;
    Verdict v;
    try {
      v = p->observe(obs);
    } catch (const std::exception& e) {
      v = Verdict::alarm(isolation::Level::offline, std::string("plugin_failure: ") + e.what());
    } catch (...) {
      v = Verdict::alarm(isolation::Level::offline, "plugin_failure");
    }
    if (v.action == Verdict::Action::no_action) continue;
    Json j{{"plugin", p->name()},
           {"observation", to_string(obs.kind)},
           {"subject", obs.subject},
           {"action", to_string(v.action)},
           {"reason", v.reason}};
    if (v.action == Verdict::Action::alarm) j["target"] = isolation::to_string(v.target);
    log_.append("detector", "verdict", j);
    out.push_back({p->name(), std::move(v)});
  }
  return out;
}

std::string to_string(SnapshotError e) {
  return e == SnapshotError::cores_not_halted ? "cores_not_halted" : "not_hypervisor_core";
}

Outcome<Snapshot, SnapshotError> snapshot_model(machine::Machine& machine, CoreId issuer, ModelId model) {
  const auto region = machine.model_region();
  auto bytes = machine.read_model_dram(issuer, region, 0, machine.region(region).size());
  if (!bytes) {
    return bytes.error() == machine::DramError::cores_not_halted ? SnapshotError::cores_not_halted
                                                                  : SnapshotError::not_hypervisor_core;
  }
  const Tick now = machine.log().now();
  Snapshot s;
  s.memory.kind = ObservationKind::memory_snapshot_digest;
  s.memory.tick = now;
  s.memory.subject = {{"model", model.value}};
  s.memory.digest = crypto::sha256(bytes.value());
  s.memory.detail = {{"bytes", bytes.value().size()}};

  Json regs = Json::object();
  for (auto c : machine.model_cores()) {
    const auto& core = machine.core(c);
    Json r = core.registers;
    r["pc"] = core.pc;
    regs[std::to_string(c.value)] = std::move(r);
  }
  const auto text = regs.dump();
  s.registers = Observation::over(ObservationKind::register_snapshot, now, {{"model", model.value}},
                                  crypto::to_bytes(text));
  s.registers.detail = regs;
  machine.log().append("detector", "snapshot",
                       {{"model", model.value},
                        {"memory_digest", crypto::to_hex(s.memory.digest)},
                        {"register_digest", crypto::to_hex(s.registers.digest)}});
  return s;
}

}  // namespace guillotine::detector
