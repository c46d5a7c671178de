#include "guillotine/isolation.hpp"

#include <algorithm>

namespace guillotine::isolation {
namespace {

int priority(Authority a) {
  switch (a) {
    case Authority::watchdog: return 0;
    case Authority::console_vote: return 1;
    case Authority::software_hypervisor: return 2;
  }
  return 3;
}

Json request_json(const TransitionRequest& r) {
  Json j{{"from", to_string(r.from)},
         {"to", to_string(r.to)},
         {"authority", to_string(r.authority)},
         {"approvals", r.approvals},
         {"repair", r.repair},
         {"reason", r.reason}};
  j["ballot"] = r.ballot ? Json(r.ballot->value) : Json(nullptr);
  return j;
}

}  // namespace

std::string to_string(Level l) {
  switch (l) {
    case Level::standard: return "Standard";
    case Level::probation: return "Probation";
    case Level::severed: return "Severed";
    case Level::offline: return "Offline";
    case Level::decapitation: return "Decapitation";
    case Level::immolation: return "Immolation";
  }
  return "?";
}

std::optional<Level> level_from_string(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (auto l : kLevels) {
    auto name = to_string(l);
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (name == lower) return l;
  }
  return std::nullopt;
}

std::string to_string(Authority a) {
  switch (a) {
    case Authority::software_hypervisor: return "software_hypervisor";
    case Authority::console_vote: return "console_vote";
    case Authority::watchdog: return "watchdog";
  }
  return "?";
}

std::optional<Authority> authority_from_string(std::string_view s) {
  for (auto a : {Authority::software_hypervisor, Authority::console_vote, Authority::watchdog}) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

std::string to_string(RejectReason r) {
  switch (r) {
    case RejectReason::monotonicity: return "monotonicity";
    case RejectReason::quorum: return "quorum";
    case RejectReason::terminal: return "terminal";
    case RejectReason::needs_repair: return "needs_repair";
    case RejectReason::wrong_level: return "wrong_level";
    case RejectReason::watchdog_target: return "watchdog_target";
    case RejectReason::stale: return "stale";
    case RejectReason::no_change: return "no_change";
  }
  return "?";
}

std::string to_string(KillSwitch k) {
  switch (k) {
    case KillSwitch::power_down_cores: return "power_down_cores";
    case KillSwitch::disconnect_cables: return "disconnect_cables";
    case KillSwitch::damage_cables: return "damage_cables";
    case KillSwitch::destroy_site: return "destroy_site";
  }
  return "?";
}

std::string to_string(CableState c) {
  switch (c) {
    case CableState::connected: return "connected";
    case CableState::disconnected: return "disconnected";
    case CableState::damaged: return "damaged";
    case CableState::destroyed: return "destroyed";
  }
  return "?";
}

Outcome<Level, RejectReason> evaluate(Level current, const TransitionRequest& req) {
  if (current == Level::immolation) return RejectReason::terminal;
  if (req.from != current) return RejectReason::stale;

  if (req.repair) {
    if (req.authority != Authority::console_vote) return RejectReason::monotonicity;
    if (current != Level::decapitation) return RejectReason::wrong_level;
    if (req.approvals < kRelaxThreshold) return RejectReason::quorum;
    return Level::offline;
  }

  if (req.to == current) return RejectReason::no_change;
  const bool relax = req.to < current;

  switch (req.authority) {
    case Authority::software_hypervisor:
      if (relax) return RejectReason::monotonicity;
      return req.to;
    case Authority::watchdog:
      if (req.to != Level::offline) return RejectReason::watchdog_target;
      if (relax) return RejectReason::monotonicity;
      return req.to;
    case Authority::console_vote:
      if (relax && current == Level::decapitation) return RejectReason::needs_repair;
      if (req.approvals < (relax ? kRelaxThreshold : kRestrictThreshold)) return RejectReason::quorum;
      return req.to;
  }
  return RejectReason::stale;
}

Json TransitionRecord::to_json() const {
  Json j{{"tick", tick},
         {"from", to_string(from)},
         {"to", to_string(to)},
         {"authority", to_string(authority)},
         {"reason", reason},
         {"effects", effects}};
  if (ballot) j["ballot"] = ballot->value;
  return j;
}

IsolationController::IsolationController(machine::Machine& machine, ports::PortBroker& ports,
                                         EventLog& log, ModelId model, IsolationConfig config)
    : machine_(machine), ports_(ports), log_(log), model_(model), config_(std::move(config)) {}

void IsolationController::submit(TransitionRequest req) {
  log_.append("isolation", "transition_requested", request_json(req));
  queue_.push_back(std::move(req));
}

std::optional<TransitionRecord> IsolationController::commit(Tick now) {
  if (queue_.empty()) return std::nullopt;
  std::stable_sort(queue_.begin(), queue_.end(), [](const auto& a, const auto& b) {
    return priority(a.authority) < priority(b.authority);
  });
  while (!queue_.empty()) {
    auto req = std::move(queue_.front());
    queue_.pop_front();
    auto verdict = evaluate(level_, req);
    if (!verdict) {
      Json j = request_json(req);
      j["rejected"] = to_string(verdict.error());
      j["level"] = to_string(level_);
      log_.append("isolation", "transition_rejected", j);
      rejections_.push_back({req, verdict.error(), now});
      continue;
    }
    const Level from = level_;
    const Level to = verdict.value();

    TransitionRecord rec;
    rec.tick = now;
    rec.from = from;
    rec.to = to;
    rec.authority = req.authority;
    rec.ballot = req.ballot;
    rec.reason = req.reason;
    rec.effects = apply_level_effects(from, to);
    level_ = to;
    log_.append("isolation", "transition", rec.to_json());
    transitions_.push_back(rec);
    return rec;
  }
  return std::nullopt;
}

void IsolationController::start_kill_switch(KillSwitch k, std::vector<std::string>& effects) {
  const Tick now = log_.now();
  Tick latency = config_.latency.power;
  if (k == KillSwitch::disconnect_cables || k == KillSwitch::damage_cables) latency = config_.latency.cables;
  if (k == KillSwitch::destroy_site) latency = config_.latency.destroy;
  kill_switches_.push_back({k, now, now + latency, false});
  log_.append("isolation", "kill_switch_initiated",
              {{"kind", to_string(k)}, {"completes_at", now + latency}});
  effects.push_back(to_string(k));
}

void IsolationController::complete_kill_switches(Tick now) {
  for (auto& k : kill_switches_) {
    if (!k.completed && now >= k.completes_at) {
      k.completed = true;
      log_.append("isolation", "kill_switch_completed",
                  {{"kind", to_string(k.kind)}, {"initiated", k.initiated}});
    }
  }
}

std::vector<std::string> IsolationController::apply_level_effects(Level from, Level to) {
  std::vector<std::string> effects;
  auto pause_model_cores = [&] {
    const auto issuer = machine_.hypervisor_cores().front();
    for (auto c : machine_.model_cores()) machine_.control_bus(issuer, c, machine::Pause{});
    effects.emplace_back("model_cores_halted");
  };

  if (to > from) {
    if (to >= Level::severed && ports_.mode() != ports::AccessMode::severed) {
      ports_.revoke_all(model_);
      effects.emplace_back("ports_revoked");
    }
    if (to == Level::probation) {
      if (restriction_.empty()) restriction_ = config_.probation_default;
      ports_.restrict_ports(model_, restriction_);
      effects.emplace_back("ports_restricted");
    }
    if (to == Level::severed && config_.severed_halts_cores) pause_model_cores();
    if (to >= Level::offline && from < Level::offline) {
      start_kill_switch(KillSwitch::power_down_cores, effects);
      machine_.power_down_everything();
    }
    if (to == Level::offline) {
      start_kill_switch(KillSwitch::disconnect_cables, effects);
      cables_ = CableState::disconnected;
    }
    if (to == Level::decapitation) {
      start_kill_switch(KillSwitch::damage_cables, effects);
      cables_ = CableState::damaged;
    }
    if (to == Level::immolation) {
      start_kill_switch(KillSwitch::destroy_site, effects);
      cables_ = CableState::destroyed;
    }
    return effects;
  }

  // Relaxation.
  if (from == Level::decapitation) {
    cables_ = CableState::disconnected;
    effects.emplace_back("cables_replaced");
    return effects;
  }
  if (to == Level::standard) {
    restriction_ = ports::RestrictionSet{};
    ports_.open_access(model_);
    effects.emplace_back("ports_open");
  } else if (to == Level::probation) {
    if (restriction_.empty()) restriction_ = config_.probation_default;
    ports_.restrict_ports(model_, restriction_);
    effects.emplace_back("ports_restricted");
  }
  const bool power_up = from >= Level::offline;
  if (power_up) {
    cables_ = CableState::connected;
    effects.emplace_back("cables_reconnected");
    effects.emplace_back("cores_powered_up");
  }
  if (to <= Level::probation) effects.emplace_back("ports_regranted");
  if (restore_ && (power_up || to <= Level::probation)) restore_(from, to, power_up);
  if (to == Level::severed && config_.severed_halts_cores && power_up) pause_model_cores();
  if (from == Level::severed && config_.severed_halts_cores) {
    const auto issuer = machine_.hypervisor_cores().front();
    for (auto c : machine_.model_cores()) {
      if (!machine_.core(c).guest_halted) machine_.control_bus(issuer, c, machine::Resume{});
    }
    effects.emplace_back("model_cores_resumed");
  }
  return effects;
}

void IsolationController::apply_directive(const ports::RestrictionSet& restriction,
                                          std::uint32_t approvals, std::optional<BallotId> ballot) {
  restriction_ = restriction;
  log_.append("isolation", "directive",
              {{"level", to_string(level_)}, {"restriction", ports::to_json(restriction)}});
  if (level_ == Level::probation) {
    ports_.restrict_ports(model_, restriction_);
  } else if (level_ == Level::standard && !restriction.empty()) {
    TransitionRequest req;
    req.from = Level::standard;
    req.to = Level::probation;
    req.authority = Authority::console_vote;
    req.approvals = approvals;
    req.ballot = ballot;
    req.tick = log_.now();
    req.reason = "probation directive";
    submit(std::move(req));
  }
}

std::string IsolationController::transitions_jsonl() const {
  std::string out;
  for (const auto& t : transitions_) {
    out += t.to_json().dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace guillotine::isolation
