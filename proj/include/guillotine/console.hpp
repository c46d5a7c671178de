#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "guillotine/common.hpp"
#include "guillotine/crypto.hpp"
#include "guillotine/event_log.hpp"
#include "guillotine/guests/interpreter.hpp"
#include "guillotine/isolation.hpp"
#include "guillotine/machine.hpp"
#include "guillotine/ports.hpp"

namespace guillotine::console {

// --- administrators ----------------------------------------------------------

enum class AdminStatus { active, revoked };

struct AdminIdentity {
  AdminId id;
  crypto::PublicKey public_key{};
  AdminStatus status = AdminStatus::active;
};

/// The seven registered administrators. Signing keys are simulation personas
/// derived from the scenario seed; the registry itself only needs public keys
/// to verify votes.
class AdminRegistry {
 public:
  explicit AdminRegistry(std::uint64_t seed);

  [[nodiscard]] const std::vector<AdminIdentity>& admins() const noexcept { return admins_; }
  [[nodiscard]] const AdminIdentity* find(AdminId id) const;
  void revoke(AdminId id);

  /// Persona signing, standing in for a key held by a human administrator.
  [[nodiscard]] crypto::Signature persona_sign(AdminId id, std::string_view message) const;

 private:
  std::vector<AdminIdentity> admins_;  // ids 1..7
  std::vector<crypto::SigningKey> keys_;
};

// --- ballots -----------------------------------------------------------------

struct TransitionProposal {
  isolation::Level to = isolation::Level::standard;
};
struct DirectiveProposal {
  ports::RestrictionSet restriction;
};
struct RepairProposal {};

using Proposal = std::variant<TransitionProposal, DirectiveProposal, RepairProposal>;

Json to_json(const Proposal& p);
/// Throws std::invalid_argument on malformed input.
Proposal proposal_from_json(const Json& j);
crypto::Digest proposal_digest(const Proposal& p);

enum class Choice { approve, deny };
std::string to_string(Choice c);
std::optional<Choice> choice_from_string(std::string_view s);

/// The canonical message an administrator signs for one vote.
std::string vote_message(BallotId ballot, AdminId admin, Choice choice, const crypto::Digest& proposal);

struct Vote {
  AdminId admin;
  Choice choice = Choice::approve;
  crypto::Signature signature{};
  Tick tick = 0;
};

struct Ballot {
  BallotId id;
  Proposal proposal;
  crypto::Digest digest{};
  Tick opened = 0;
  Tick expiry = 0;  // last tick on which votes and tallies are accepted
  std::map<std::uint32_t, Vote> votes;
  bool tallied = false;
  std::optional<bool> passed;

  [[nodiscard]] std::uint32_t approvals() const;
};

enum class VoteError { unknown_ballot, unknown_admin, admin_revoked, bad_signature, duplicate_vote, expired, already_tallied };
enum class TallyError { unknown_ballot, expired, already_tallied, terminal };
std::string to_string(VoteError e);
std::string to_string(TallyError e);

struct TallyResult {
  bool passed = false;
  bool relax = false;
  std::uint32_t approvals = 0;
  std::uint32_t required = 0;
  bool noop = false;  // directive identical to the one in force
};

// --- heartbeats --------------------------------------------------------------

struct HeartbeatConfig {
  Tick interval = 10;
  std::uint32_t missed_threshold = 3;
};

enum class LinkDirection { console_to_hypervisor, hypervisor_to_console };
std::string to_string(LinkDirection d);

/// Bidirectional heartbeat exchange between the console and the hypervisor
/// cores, with a watchdog that fires once per silence episode.
class Heartbeat {
 public:
  Heartbeat(HeartbeatConfig config, EventLog& log);

  void set_link(LinkDirection d, bool up);
  [[nodiscard]] bool link_up(LinkDirection d) const noexcept;

  enum class Status { ok, watchdog_fired };
  /// One tick of the exchange. `hypervisor_emits` is false when the hypervisor
  /// cannot send (powered down or out of capacity); `armed` is false at Offline
  /// and above, where the watchdog has nothing left to do.
  Status tick(Tick now, bool hypervisor_emits, bool armed);

  /// Starts a fresh episode after the deployment is powered back up.
  void reset(Tick now);

  [[nodiscard]] Tick last_rx_from_console() const noexcept { return last_rx_console_; }
  [[nodiscard]] Tick last_rx_from_hypervisor() const noexcept { return last_rx_hyp_; }
  [[nodiscard]] const std::vector<Tick>& hypervisor_emissions() const noexcept { return hyp_emissions_; }
  [[nodiscard]] const std::vector<Tick>& firings() const noexcept { return firings_; }
  [[nodiscard]] const HeartbeatConfig& config() const noexcept { return config_; }
  [[nodiscard]] bool fired() const noexcept { return fired_; }

 private:
  HeartbeatConfig config_;
  EventLog& log_;
  bool console_to_hyp_up_ = true;
  bool hyp_to_console_up_ = true;
  Tick last_rx_console_ = 0;  // received by the hypervisor
  Tick last_rx_hyp_ = 0;      // received by the console
  bool fired_ = false;
  std::vector<Tick> hyp_emissions_;
  std::vector<Tick> firings_;
};

// --- attestation and load ------------------------------------------------------

struct AttestationRecord {
  crypto::Digest expected_silicon{};
  crypto::Digest expected_software{};
  crypto::Digest reported_silicon{};
  crypto::Digest reported_software{};

  [[nodiscard]] bool match() const noexcept {
    return expected_silicon == reported_silicon && expected_software == reported_software;
  }
  [[nodiscard]] Json to_json() const;
};

struct PortRequest {
  ports::DeviceClass device_class = ports::DeviceClass::network;
  std::uint32_t device_instance = 0;
  std::optional<std::uint8_t> slot;
};

struct ModelBundle {
  guests::GuestProgram program;
  std::vector<PortRequest> ports;
};

enum class LoadError { attestation_mismatch, model_already_loaded, invalid_program, level_forbids };
std::string to_string(LoadError e);

struct LoadReport {
  crypto::Digest code_digest{};
  std::vector<ports::PortCapability> ports;
};

struct ConsoleConfig {
  Tick ballot_expiry = 1000;
  HeartbeatConfig heartbeat;
  std::uint64_t seed = 0;
};

/// The control console: ballots, heartbeats, attestation-gated load, and the
/// command source for isolation transitions and probation directives.
class Console {
 public:
  Console(machine::Machine& machine, ports::PortBroker& ports, isolation::IsolationController& isolation,
          guests::Interpreter& interpreter, EventLog& log, ConsoleConfig config);

  AdminRegistry& admins() noexcept { return admins_; }
  const AdminRegistry& admins() const noexcept { return admins_; }
  Heartbeat& heartbeat() noexcept { return heartbeat_; }
  const Heartbeat& heartbeat() const noexcept { return heartbeat_; }

  BallotId open_ballot(Proposal proposal);
  Outcome<bool, VoteError> cast_vote(BallotId ballot, AdminId admin, Choice choice,
                                     const crypto::Signature& signature);
  /// Signs with the administrator's persona key, then casts.
  Outcome<bool, VoteError> persona_vote(BallotId ballot, AdminId admin, Choice choice);
  /// Counts valid approvals. A passed ballot is submitted to the isolation
  /// controller; ballots are single use either way.
  Outcome<TallyResult, TallyError> tally(BallotId ballot);

  [[nodiscard]] const Ballot* ballot(BallotId id) const;
  [[nodiscard]] const std::map<std::uint32_t, Ballot>& ballots() const noexcept { return ballots_; }
  /// Re-verifies every stored signature on a ballot against the registry.
  [[nodiscard]] bool reverify(BallotId id) const;

  Outcome<LoadReport, LoadError> load_model(const ModelBundle& bundle, const AttestationRecord& attest);
  [[nodiscard]] bool loaded() const noexcept { return loaded_; }
  [[nodiscard]] const std::optional<AttestationRecord>& attestation() const noexcept { return attestation_; }

  /// Grants the bundle's configured ports again (used when ports come back after Severed).
  std::vector<ports::PortCapability> grant_configured_ports();
  /// Restarts every model core at its program entry point.
  void restart_model_cores();

 private:
  machine::Machine& machine_;
  ports::PortBroker& ports_;
  isolation::IsolationController& isolation_;
  guests::Interpreter& interpreter_;
  EventLog& log_;
  ConsoleConfig config_;
  AdminRegistry admins_;
  Heartbeat heartbeat_;
  std::map<std::uint32_t, Ballot> ballots_;
  std::uint32_t next_ballot_ = 1;
  bool loaded_ = false;
  std::optional<AttestationRecord> attestation_;
  std::optional<ModelBundle> bundle_;
};

}  // namespace guillotine::console
