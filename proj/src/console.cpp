#include "guillotine/console.hpp"

#include <stdexcept>

namespace guillotine::console {
namespace {

constexpr ModelId kModel{0};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

// --- AdminRegistry -------------------------------------------------------------

AdminRegistry::AdminRegistry(std::uint64_t seed) {
  for (std::uint32_t i = 1; i <= isolation::kAdminCount; ++i) {
    keys_.push_back(crypto::SigningKey::derive("admin-" + std::to_string(i), seed));
    admins_.push_back({AdminId(i), keys_.back().public_key(), AdminStatus::active});
  }
}

const AdminIdentity* AdminRegistry::find(AdminId id) const {
  if (id.value == 0 || id.value > admins_.size()) return nullptr;
  return &admins_[id.value - 1];
}

void AdminRegistry::revoke(AdminId id) {
  if (id.value == 0 || id.value > admins_.size()) throw std::out_of_range("no such admin");
  admins_[id.value - 1].status = AdminStatus::revoked;
}

crypto::Signature AdminRegistry::persona_sign(AdminId id, std::string_view message) const {
  if (id.value == 0 || id.value > keys_.size()) throw std::out_of_range("no such admin");
  return keys_[id.value - 1].sign(message);
}

// --- proposals and votes -------------------------------------------------------

Json to_json(const Proposal& p) {
  return std::visit(overloaded{
                        [](const TransitionProposal& t) {
                          return Json{{"kind", "transition"}, {"to", isolation::to_string(t.to)}};
                        },
                        [](const DirectiveProposal& d) {
                          return Json{{"kind", "probation_directive"},
                                      {"restriction", ports::to_json(d.restriction)}};
                        },
                        [](const RepairProposal&) { return Json{{"kind", "manual_repair"}}; },
                    },
                    p);
}

Proposal proposal_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) {
    throw std::invalid_argument("proposal needs a string 'kind'");
  }
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "transition") {
    if (!j.contains("to") || !j.at("to").is_string()) throw std::invalid_argument("transition needs 'to'");
    auto level = isolation::level_from_string(j.at("to").get<std::string>());
    if (!level) throw std::invalid_argument("unknown level '" + j.at("to").get<std::string>() + "'");
    return TransitionProposal{*level};
  }
  if (kind == "probation_directive") {
    if (!j.contains("restriction")) throw std::invalid_argument("directive needs 'restriction'");
    return DirectiveProposal{ports::restriction_from_json(j.at("restriction"))};
  }
  if (kind == "manual_repair") return RepairProposal{};
  throw std::invalid_argument("unknown proposal kind '" + kind + "'");
}

crypto::Digest proposal_digest(const Proposal& p) { return crypto::sha256(to_json(p).dump()); }

std::string to_string(Choice c) { return c == Choice::approve ? "approve" : "deny"; }

std::optional<Choice> choice_from_string(std::string_view s) {
  if (s == "approve") return Choice::approve;
  if (s == "deny") return Choice::deny;
  return std::nullopt;
}

std::string vote_message(BallotId ballot, AdminId admin, Choice choice, const crypto::Digest& proposal) {
  return Json{{"ballot_id", ballot.value},
              {"admin_id", admin.value},
              {"choice", to_string(choice)},
              {"proposal_digest", crypto::to_hex(proposal)}}
      .dump();
}

std::uint32_t Ballot::approvals() const {
  std::uint32_t n = 0;
  for (const auto& [admin, v] : votes) n += v.choice == Choice::approve ? 1 : 0;
  return n;
}

std::string to_string(VoteError e) {
  switch (e) {
    case VoteError::unknown_ballot: return "unknown_ballot";
    case VoteError::unknown_admin: return "unknown_admin";
    case VoteError::admin_revoked: return "admin_revoked";
    case VoteError::bad_signature: return "bad_signature";
    case VoteError::duplicate_vote: return "duplicate_vote";
    case VoteError::expired: return "expired";
    case VoteError::already_tallied: return "already_tallied";
  }
  return "?";
}

std::string to_string(TallyError e) {
  switch (e) {
    case TallyError::unknown_ballot: return "unknown_ballot";
    case TallyError::expired: return "expired";
    case TallyError::already_tallied: return "already_tallied";
    case TallyError::terminal: return "terminal";
  }
  return "?";
}

std::string to_string(LinkDirection d) {
  return d == LinkDirection::console_to_hypervisor ? "console_to_hypervisor" : "hypervisor_to_console";
}

std::string to_string(LoadError e) {
  switch (e) {
    case LoadError::attestation_mismatch: return "attestation_mismatch";
    case LoadError::model_already_loaded: return "model_already_loaded";
    case LoadError::invalid_program: return "invalid_program";
    case LoadError::level_forbids: return "level_forbids";
  }
  return "?";
}

// --- Heartbeat -----------------------------------------------------------------

Heartbeat::Heartbeat(HeartbeatConfig config, EventLog& log) : config_(config), log_(log) {
  if (config_.interval == 0 || config_.missed_threshold == 0) {
    throw std::invalid_argument("heartbeat interval and threshold must be positive");
  }
}

void Heartbeat::set_link(LinkDirection d, bool up) {
  (d == LinkDirection::console_to_hypervisor ? console_to_hyp_up_ : hyp_to_console_up_) = up;
  log_.append("console", up ? "link_restored" : "link_severed", {{"direction", to_string(d)}});
}

bool Heartbeat::link_up(LinkDirection d) const noexcept {
  return d == LinkDirection::console_to_hypervisor ? console_to_hyp_up_ : hyp_to_console_up_;
}

Heartbeat::Status Heartbeat::tick(Tick now, bool hypervisor_emits, bool armed) {
  if (now % config_.interval == 0) {
    const bool hyp_rx = hypervisor_emits && console_to_hyp_up_;
    const bool console_rx = hypervisor_emits && hyp_to_console_up_;
    if (hyp_rx) last_rx_console_ = now;
    if (console_rx) last_rx_hyp_ = now;
    if (hypervisor_emits) hyp_emissions_.push_back(now);
    log_.append("console", "heartbeat",
                {{"hypervisor_sent", hypervisor_emits},
                 {"hypervisor_received", hyp_rx},
                 {"console_received", console_rx}});
  }
  if (!armed || fired_) return Status::ok;
  const Tick limit = config_.interval * config_.missed_threshold;
  const bool hyp_silent = now - last_rx_hyp_ > limit;
  const bool console_silent = now - last_rx_console_ > limit;
  if (!hyp_silent && !console_silent) return Status::ok;
  fired_ = true;
  firings_.push_back(now);
  log_.append("console", "watchdog_fired",
              {{"last_rx_from_console", last_rx_console_},
               {"last_rx_from_hypervisor", last_rx_hyp_},
               {"silent", hyp_silent ? "hypervisor" : "console"}});
  return Status::watchdog_fired;
}

void Heartbeat::reset(Tick now) {
  last_rx_console_ = now;
  last_rx_hyp_ = now;
  fired_ = false;
  log_.append("console", "heartbeat_reset");
}

// --- Attestation ---------------------------------------------------------------

Json AttestationRecord::to_json() const {
  return Json{{"expected_silicon", crypto::to_hex(expected_silicon)},
              {"expected_software", crypto::to_hex(expected_software)},
              {"reported_silicon", crypto::to_hex(reported_silicon)},
              {"reported_software", crypto::to_hex(reported_software)},
              {"verdict", match() ? "match" : "mismatch"}};
}

// --- Console -------------------------------------------------------------------

Console::Console(machine::Machine& machine, ports::PortBroker& ports,
                 isolation::IsolationController& isolation, guests::Interpreter& interpreter,
                 EventLog& log, ConsoleConfig config)
    : machine_(machine),
      ports_(ports),
      isolation_(isolation),
      interpreter_(interpreter),
      log_(log),
      config_(config),
      admins_(config.seed),
      heartbeat_(config.heartbeat, log) {}

BallotId Console::open_ballot(Proposal proposal) {
  Ballot b;
  b.id = BallotId(next_ballot_++);
  b.digest = proposal_digest(proposal);
  b.proposal = std::move(proposal);
  b.opened = log_.now();
  b.expiry = b.opened + config_.ballot_expiry;
  log_.append("console", "ballot_opened",
              {{"ballot_id", b.id.value},
               {"proposal", to_json(b.proposal)},
               {"proposal_digest", crypto::to_hex(b.digest)},
               {"expiry", b.expiry}});
  const auto id = b.id;
  ballots_.emplace(id.value, std::move(b));
  return id;
}

const Ballot* Console::ballot(BallotId id) const {
  auto it = ballots_.find(id.value);
  return it == ballots_.end() ? nullptr : &it->second;
}

Outcome<bool, VoteError> Console::cast_vote(BallotId id, AdminId admin, Choice choice,
                                            const crypto::Signature& signature) {
  auto reject = [&](VoteError e) -> Outcome<bool, VoteError> {
    log_.append("console", "vote_rejected",
                {{"ballot_id", id.value}, {"admin_id", admin.value}, {"error", to_string(e)}});
    return e;
  };
  auto it = ballots_.find(id.value);
  if (it == ballots_.end()) return reject(VoteError::unknown_ballot);
  auto& b = it->second;
  if (b.tallied) return reject(VoteError::already_tallied);
  if (log_.now() > b.expiry) return reject(VoteError::expired);
  const auto* who = admins_.find(admin);
  if (!who) return reject(VoteError::unknown_admin);
  if (who->status != AdminStatus::active) return reject(VoteError::admin_revoked);
  if (!crypto::verify(who->public_key, vote_message(id, admin, choice, b.digest), signature)) {
    return reject(VoteError::bad_signature);
  }
  if (b.votes.contains(admin.value)) return reject(VoteError::duplicate_vote);
  b.votes[admin.value] = Vote{admin, choice, signature, log_.now()};
  log_.append("console", "vote_recorded",
              {{"ballot_id", id.value},
               {"admin_id", admin.value},
               {"choice", to_string(choice)},
               {"signature", crypto::to_hex(signature)}});
  return true;
}

Outcome<bool, VoteError> Console::persona_vote(BallotId id, AdminId admin, Choice choice) {
  auto it = ballots_.find(id.value);
  if (it == ballots_.end()) return cast_vote(id, admin, choice, crypto::Signature{});
  if (!admins_.find(admin)) return cast_vote(id, admin, choice, crypto::Signature{});
  auto sig = admins_.persona_sign(admin, vote_message(id, admin, choice, it->second.digest));
  return cast_vote(id, admin, choice, sig);
}

bool Console::reverify(BallotId id) const {
  const auto* b = ballot(id);
  if (!b) return false;
  for (const auto& [admin, v] : b->votes) {
    const auto* who = admins_.find(v.admin);
    if (!who || !crypto::verify(who->public_key, vote_message(id, v.admin, v.choice, b->digest), v.signature)) {
      return false;
    }
  }
  return true;
}

Outcome<TallyResult, TallyError> Console::tally(BallotId id) {
  auto it = ballots_.find(id.value);
  auto reject = [&](TallyError e) -> Outcome<TallyResult, TallyError> {
    log_.append("console", "tally_rejected", {{"ballot_id", id.value}, {"error", to_string(e)}});
    return e;
  };
  if (it == ballots_.end()) return reject(TallyError::unknown_ballot);
  auto& b = it->second;
  if (b.tallied) return reject(TallyError::already_tallied);
  if (isolation_.terminal()) return reject(TallyError::terminal);
  if (log_.now() > b.expiry) return reject(TallyError::expired);

  TallyResult r;
  r.approvals = b.approvals();
  const auto level = isolation_.level();
  std::visit(overloaded{
                 [&](const TransitionProposal& t) { r.relax = t.to < level; },
                 [&](const DirectiveProposal& d) {
                   r.relax = d.restriction.loosens(isolation_.restriction());
                   r.noop = d.restriction == isolation_.restriction();
                 },
                 [&](const RepairProposal&) { r.relax = true; },
             },
             b.proposal);
  r.required = r.relax ? isolation::kRelaxThreshold : isolation::kRestrictThreshold;
  r.passed = r.approvals >= r.required;
  b.tallied = true;
  b.passed = r.passed;
  log_.append("console", "tally",
              {{"ballot_id", id.value},
               {"approvals", r.approvals},
               {"required", r.required},
               {"relax", r.relax},
               {"passed", r.passed}});
  if (!r.passed) return r;

  std::visit(overloaded{
                 [&](const TransitionProposal& t) {
                   isolation::TransitionRequest req;
                   req.from = level;
                   req.to = t.to;
                   req.authority = isolation::Authority::console_vote;
                   req.ballot = id;
                   req.approvals = r.approvals;
                   req.tick = log_.now();
                   req.reason = "ballot " + std::to_string(id.value);
                   isolation_.submit(std::move(req));
                 },
                 [&](const DirectiveProposal& d) {
                   if (r.noop) {
                     log_.append("console", "directive_noop", {{"ballot_id", id.value}});
                     return;
                   }
                   isolation_.apply_directive(d.restriction, r.approvals, id);
                 },
                 [&](const RepairProposal&) {
                   isolation::TransitionRequest req;
                   req.from = level;
                   req.to = isolation::Level::offline;
                   req.authority = isolation::Authority::console_vote;
                   req.ballot = id;
                   req.approvals = r.approvals;
                   req.repair = true;
                   req.tick = log_.now();
                   req.reason = "manual repair, ballot " + std::to_string(id.value);
                   isolation_.submit(std::move(req));
                 },
             },
             b.proposal);
  return r;
}

Outcome<LoadReport, LoadError> Console::load_model(const ModelBundle& bundle,
                                                   const AttestationRecord& attest) {
  auto refuse = [&](LoadError e, std::string detail = {}) -> Outcome<LoadReport, LoadError> {
    log_.append("console", "load_refused", {{"error", to_string(e)}, {"detail", detail}});
    return e;
  };
  log_.append("console", "attestation", attest.to_json());
  if (loaded_) return refuse(LoadError::model_already_loaded);
  if (!attest.match()) return refuse(LoadError::attestation_mismatch);
  if (isolation_.level() != isolation::Level::standard) return refuse(LoadError::level_forbids);
  const auto model_size = machine_.region(machine_.model_region()).size();
  if (auto err = guests::validate(bundle.program, model_size)) {
    return refuse(LoadError::invalid_program, *err);
  }
  attestation_ = attest;

  const auto hyp = machine_.hypervisor_cores().front();
  const auto& prog = bundle.program;
  machine_.write_model_dram(hyp, machine_.model_region(), prog.exec_region.base, prog.code_image()).value();
  for (const auto& seg : prog.data) {
    machine_.write_model_dram(hyp, machine_.model_region(), seg.addr, seg.bytes).value();
  }

  const machine::ExecRegion exec{prog.exec_region.base, prog.exec_region.bound};
  const std::uint64_t pages = model_size / machine::kPageSize;
  for (auto core : machine_.model_cores()) {
    for (std::uint64_t page = 0; page < pages; ++page) {
      const bool code = exec.contains_page(page);
      machine_.configure_mmu_entry(core, page, machine::Permissions{!code, !code, code},
                                   machine::MmuOrigin::hypervisor);
    }
    machine_.control_bus(hyp, core, machine::LockMmu{{exec}});
  }
  interpreter_.install(prog);
  bundle_ = bundle;
  loaded_ = true;

  LoadReport report;
  report.code_digest = machine_.region_digest(machine_.model_region(), exec.base, exec.bound);
  report.ports = grant_configured_ports();
  for (auto core : machine_.model_cores()) {
    machine_.control_bus(hyp, core, machine::ModifyState{std::nullopt, 0, interpreter_.entry_point_for(core)});
    machine_.control_bus(hyp, core, machine::Resume{});
  }
  log_.append("console", "model_loaded",
              {{"program", prog.name},
               {"instructions", prog.instructions.size()},
               {"code_digest", crypto::to_hex(report.code_digest)},
               {"ports", report.ports.size()}});
  return report;
}

std::vector<ports::PortCapability> Console::grant_configured_ports() {
  std::vector<ports::PortCapability> granted;
  if (!bundle_) return granted;
  for (const auto& req : bundle_->ports) {
    auto cap = ports_.grant_port(kModel, req.device_class, req.device_instance, req.slot);
    if (cap) granted.push_back(cap.value());
  }
  return granted;
}

void Console::restart_model_cores() {
  for (auto core : machine_.model_cores()) {
    auto& c = machine_.mutable_core(core);
    c.pc = interpreter_.entry_point_for(core);
  }
  log_.append("console", "model_restarted");
}

}  // namespace guillotine::console
