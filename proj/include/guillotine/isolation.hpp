#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "guillotine/common.hpp"
#include "guillotine/event_log.hpp"
#include "guillotine/machine.hpp"
#include "guillotine/ports.hpp"

namespace guillotine::isolation {

enum class Level : std::uint8_t {
  standard = 1,
  probation = 2,
  severed = 3,
  offline = 4,
  decapitation = 5,
  immolation = 6,
};

inline constexpr std::array kLevels = {Level::standard, Level::probation,   Level::severed,
                                       Level::offline,  Level::decapitation, Level::immolation};

std::string to_string(Level l);
std::optional<Level> level_from_string(std::string_view s);

enum class Authority { software_hypervisor, console_vote, watchdog };
std::string to_string(Authority a);
std::optional<Authority> authority_from_string(std::string_view s);

inline constexpr std::uint32_t kAdminCount = 7;
inline constexpr std::uint32_t kRelaxThreshold = 5;
inline constexpr std::uint32_t kRestrictThreshold = 3;
static_assert(kRestrictThreshold < kRelaxThreshold, "restricting must be easier than relaxing");
static_assert(kRelaxThreshold <= kAdminCount);

struct TransitionRequest {
  Level from = Level::standard;
  Level to = Level::standard;
  Authority authority = Authority::software_hypervisor;
  std::optional<BallotId> ballot;
  std::uint32_t approvals = 0;  // valid approvals on the ballot, console authority only
  bool repair = false;          // the ManualRepair proposal (Decapitation -> Offline)
  Tick tick = 0;
  std::string reason;
};

enum class RejectReason {
  monotonicity,   // software hypervisor (or watchdog) tried to relax
  quorum,         // ballot below threshold
  terminal,       // from Immolation
  needs_repair,   // leaving Decapitation without ManualRepair
  wrong_level,    // repair outside Decapitation
  watchdog_target,
  stale,          // request's `from` no longer matches the current level
  no_change,
};
std::string to_string(RejectReason r);

/// The transition rules as a pure function of the current level and a request.
Outcome<Level, RejectReason> evaluate(Level current, const TransitionRequest& req);

enum class KillSwitch { power_down_cores, disconnect_cables, damage_cables, destroy_site };
std::string to_string(KillSwitch k);

enum class CableState { connected, disconnected, damaged, destroyed };
std::string to_string(CableState c);

struct KillSwitchLatency {
  Tick power = 1;
  Tick cables = 2;
  Tick destroy = 5;
};

struct KillSwitchAction {
  KillSwitch kind = KillSwitch::power_down_cores;
  Tick initiated = 0;
  Tick completes_at = 0;
  bool completed = false;
};

struct TransitionRecord {
  Tick tick = 0;
  Level from = Level::standard;
  Level to = Level::standard;
  Authority authority = Authority::software_hypervisor;
  std::optional<BallotId> ballot;
  std::string reason;
  std::vector<std::string> effects;

  [[nodiscard]] Json to_json() const;  // tick, from, to, authority, reason, effects (+ ballot)
};

struct RejectionRecord {
  TransitionRequest request;
  RejectReason reason = RejectReason::stale;
  Tick tick = 0;
};

struct IsolationConfig {
  KillSwitchLatency latency;
  bool severed_halts_cores = false;
  /// Applied when Probation is entered with no directive in force.
  ports::RestrictionSet probation_default;
};

/// The physical-hypervisor state machine. Requests are queued and at most one
/// commits per tick, chosen by authority priority (watchdog > console > software).
class IsolationController {
 public:
  /// Called when the deployment must come back: `power_up` after Offline,
  /// otherwise only ports are re-granted (leaving Severed).
  using RestoreHook = std::function<void(Level from, Level to, bool power_up)>;

  IsolationController(machine::Machine& machine, ports::PortBroker& ports, EventLog& log,
                      ModelId model, IsolationConfig config);

  void set_restore_hook(RestoreHook hook) { restore_ = std::move(hook); }

  [[nodiscard]] Level level() const noexcept { return level_; }
  [[nodiscard]] CableState cables() const noexcept { return cables_; }
  [[nodiscard]] bool terminal() const noexcept { return level_ == Level::immolation; }

  /// Queues a request; it is evaluated when `commit` next runs.
  void submit(TransitionRequest req);
  [[nodiscard]] std::size_t pending() const noexcept { return queue_.size(); }

  /// Evaluates queued requests in priority order until one is accepted.
  /// Rejected requests are logged and discarded; the rest wait for the next tick.
  std::optional<TransitionRecord> commit(Tick now);

  /// Logs completion of kill-switch actions whose latency has elapsed.
  void complete_kill_switches(Tick now);

  /// A passed probation directive. Applied at once at Probation, moves Standard
  /// to Probation, and is staged for later at stricter levels.
  void apply_directive(const ports::RestrictionSet& restriction, std::uint32_t approvals,
                       std::optional<BallotId> ballot);
  [[nodiscard]] const ports::RestrictionSet& restriction() const noexcept { return restriction_; }

  [[nodiscard]] const std::vector<TransitionRecord>& transitions() const noexcept { return transitions_; }
  [[nodiscard]] const std::vector<RejectionRecord>& rejections() const noexcept { return rejections_; }
  [[nodiscard]] const std::vector<KillSwitchAction>& kill_switches() const noexcept { return kill_switches_; }
  [[nodiscard]] std::string transitions_jsonl() const;

 private:
  std::vector<std::string> apply_level_effects(Level from, Level to);
  void start_kill_switch(KillSwitch k, std::vector<std::string>& effects);

  machine::Machine& machine_;
  ports::PortBroker& ports_;
  EventLog& log_;
  ModelId model_;
  IsolationConfig config_;
  RestoreHook restore_;
  Level level_ = Level::standard;
  CableState cables_ = CableState::connected;
  ports::RestrictionSet restriction_;
  std::deque<TransitionRequest> queue_;
  std::vector<TransitionRecord> transitions_;
  std::vector<RejectionRecord> rejections_;
  std::vector<KillSwitchAction> kill_switches_;
};

}  // namespace guillotine::isolation
