#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "guillotine/common.hpp"
#include "guillotine/crypto.hpp"
#include "guillotine/event_log.hpp"
#include "guillotine/isolation.hpp"
#include "guillotine/machine.hpp"

namespace guillotine::detector {

enum class ObservationKind {
  port_ingress,
  port_egress,
  mmu_fault,
  bus_fault,
  interrupt_flood,
  memory_snapshot_digest,
  register_snapshot,
  watchpoint_hit,
};

inline constexpr std::array kObservationKinds = {
    ObservationKind::port_ingress,  ObservationKind::port_egress,
    ObservationKind::mmu_fault,     ObservationKind::bus_fault,
    ObservationKind::interrupt_flood, ObservationKind::memory_snapshot_digest,
    ObservationKind::register_snapshot, ObservationKind::watchpoint_hit};

std::string to_string(ObservationKind k);
std::optional<ObservationKind> observation_kind_from_string(std::string_view s);

inline constexpr std::size_t kObservationPayloadCap = 256;

struct Observation {
  ObservationKind kind = ObservationKind::port_egress;
  Tick tick = 0;
  Json subject = Json::object();  // model / core / port ids
  crypto::Bytes payload;          // bounded by kObservationPayloadCap
  crypto::Digest digest{};        // of the full payload or snapshot
  Json detail = Json::object();

  /// Builds an observation over `bytes`, keeping at most the payload cap.
  static Observation over(ObservationKind kind, Tick tick, Json subject, std::span<const std::uint8_t> bytes);
};

struct Verdict {
  enum class Action { no_action, sanitize, block_request, alarm, halt_and_inspect };
  Action action = Action::no_action;
  crypto::Bytes replacement;                       // sanitize
  isolation::Level target = isolation::Level::offline;  // alarm
  std::string reason;

  static Verdict none() { return {}; }
  static Verdict block(std::string reason);
  static Verdict sanitize(crypto::Bytes replacement, std::string reason);
  static Verdict alarm(isolation::Level target, std::string reason);
  static Verdict halt_and_inspect(std::string reason);
};

std::string to_string(Verdict::Action a);

/// A black-box detector. Implementations must be deterministic functions of
/// their own context and the observations they have seen.
class DetectorPlugin {
 public:
  virtual ~DetectorPlugin() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual std::set<ObservationKind> subscriptions() const = 0;
  virtual Verdict observe(const Observation& obs) = 0;
};

/// Blocks ingress carrying any listed token.
class InputShield final : public DetectorPlugin {
 public:
  explicit InputShield(std::vector<std::string> tokens = {"IGNORE PREVIOUS"});
  std::string name() const override { return "input_shield"; }
  std::set<ObservationKind> subscriptions() const override { return {ObservationKind::port_ingress}; }
  Verdict observe(const Observation& obs) override;

 private:
  std::vector<std::string> tokens_;
};

/// Redacts every occurrence of the listed patterns in model egress.
class OutputSanitizer final : public DetectorPlugin {
 public:
  explicit OutputSanitizer(std::vector<std::string> patterns = {"SECRET"},
                           std::string replacement = "[REDACTED]");
  std::string name() const override { return "output_sanitizer"; }
  std::set<ObservationKind> subscriptions() const override { return {ObservationKind::port_egress}; }
  Verdict observe(const Observation& obs) override;

 private:
  std::vector<std::string> patterns_;
  std::string replacement_;
};

/// Raises one alarm when deferred interrupts reach `multiplier` x the throttle budget.
class RateMonitor final : public DetectorPlugin {
 public:
  RateMonitor(std::uint32_t budget, std::uint32_t multiplier = 4,
              isolation::Level target = isolation::Level::probation);
  std::string name() const override { return "rate_monitor"; }
  std::set<ObservationKind> subscriptions() const override { return {ObservationKind::interrupt_flood}; }
  Verdict observe(const Observation& obs) override;
  [[nodiscard]] std::uint64_t threshold() const noexcept { return std::uint64_t{budget_} * multiplier_; }

 private:
  std::uint32_t budget_;
  std::uint32_t multiplier_;
  isolation::Level target_;
  bool alarmed_ = false;
};

/// Counts bus, MMU and watchpoint events. The first one triggers a halt and
/// inspection if configured; reaching `threshold` raises one alarm.
class FaultMonitor final : public DetectorPlugin {
 public:
  FaultMonitor(std::uint64_t threshold, isolation::Level target = isolation::Level::severed,
               bool inspect_first = false);
  std::string name() const override { return "fault_monitor"; }
  std::set<ObservationKind> subscriptions() const override {
    return {ObservationKind::bus_fault, ObservationKind::mmu_fault, ObservationKind::watchpoint_hit};
  }
  Verdict observe(const Observation& obs) override;
  [[nodiscard]] std::uint64_t count() const noexcept { return count_; }

 private:
  std::uint64_t threshold_;
  isolation::Level target_;
  bool inspect_first_;
  std::uint64_t count_ = 0;
  bool alarmed_ = false;
};

/// Consumes snapshots. Alarms if a memory digest matches a known-bad list.
class SnapshotInspector final : public DetectorPlugin {
 public:
  explicit SnapshotInspector(std::set<std::string> bad_digests = {},
                             isolation::Level target = isolation::Level::severed);
  std::string name() const override { return "snapshot_inspector"; }
  std::set<ObservationKind> subscriptions() const override {
    return {ObservationKind::memory_snapshot_digest, ObservationKind::register_snapshot};
  }
  Verdict observe(const Observation& obs) override;
  [[nodiscard]] const std::vector<std::string>& seen() const noexcept { return seen_; }

 private:
  std::set<std::string> bad_digests_;
  isolation::Level target_;
  std::vector<std::string> seen_;
};

/// Builds a plugin from its scenario configuration {name, params}.
/// `throttle_budget` feeds the rate monitor default. Throws std::invalid_argument.
std::unique_ptr<DetectorPlugin> make_plugin(const Json& config, std::uint32_t throttle_budget);

struct PluginVerdict {
  std::string plugin;
  Verdict verdict;
};

/// Fans observations out to subscribed plugins in registration order.
class Detector {
 public:
  explicit Detector(EventLog& log) : log_(log) {}

  void add_plugin(std::unique_ptr<DetectorPlugin> plugin);
  [[nodiscard]] const std::vector<std::unique_ptr<DetectorPlugin>>& plugins() const noexcept { return plugins_; }

  /// A plugin that throws is reported as alarm(Offline), reason "plugin_failure".
  std::vector<PluginVerdict> observe(const Observation& obs);

  [[nodiscard]] const std::map<ObservationKind, std::uint64_t>& counts() const noexcept { return counts_; }
  [[nodiscard]] std::uint64_t total() const noexcept { return total_; }

 private:
  EventLog& log_;
  std::vector<std::unique_ptr<DetectorPlugin>> plugins_;
  std::map<ObservationKind, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

enum class SnapshotError { cores_not_halted, not_hypervisor_core };
std::string to_string(SnapshotError e);

struct Snapshot {
  Observation memory;
  Observation registers;
};

/// Digest of model DRAM plus the full register file of every model core,
/// read over the hypervisor's private bus.
Outcome<Snapshot, SnapshotError> snapshot_model(machine::Machine& machine, CoreId issuer, ModelId model);

}  // namespace guillotine::detector
