#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "guillotine/common.hpp"
#include "guillotine/crypto.hpp"
#include "guillotine/event_log.hpp"
#include "guillotine/guests/interpreter.hpp"
#include "guillotine/machine.hpp"

namespace guillotine::ports {

enum class DeviceClass { network, storage, accelerator, actuator, clock };
enum class Direction { model_to_device, device_to_model };
enum class PortState { granted, restricted, revoked };

inline constexpr std::array kDeviceClasses = {DeviceClass::network, DeviceClass::storage,
                                              DeviceClass::accelerator, DeviceClass::actuator,
                                              DeviceClass::clock};

std::string to_string(DeviceClass c);
std::string to_string(Direction d);
std::string to_string(PortState s);
std::optional<DeviceClass> device_class_from_string(std::string_view s);
std::optional<Direction> direction_from_string(std::string_view s);

/// Blocks traffic matching a device class and/or direction; an empty field matches anything.
struct BlockRule {
  std::optional<DeviceClass> device_class;
  std::optional<Direction> direction;

  [[nodiscard]] bool matches(DeviceClass c, Direction d) const noexcept {
    return (!device_class || *device_class == c) && (!direction || *direction == d);
  }
  friend auto operator<=>(const BlockRule&, const BlockRule&) = default;
};

/// The probation restriction vocabulary.
struct RestrictionSet {
  std::set<BlockRule> blocks;
  std::set<std::string> deny_patterns;        // byte substrings refused in model egress
  std::optional<std::uint32_t> rate_cap;      // egress messages per port per throttle window

  [[nodiscard]] bool empty() const noexcept {
    return blocks.empty() && deny_patterns.empty() && !rate_cap;
  }
  [[nodiscard]] bool blocks_traffic(DeviceClass c, Direction d) const;
  [[nodiscard]] bool affects(DeviceClass c) const;
  /// True if moving from `current` to this set removes or weakens any restriction.
  [[nodiscard]] bool loosens(const RestrictionSet& current) const;

  friend bool operator==(const RestrictionSet&, const RestrictionSet&) = default;
};

Json to_json(const RestrictionSet& r);
/// Throws std::invalid_argument on malformed input.
RestrictionSet restriction_from_json(const Json& j);

struct RingBuffer {
  Address base = 0;           // offset inside shared IO DRAM
  std::uint32_t capacity = 0; // slots; one is always left empty
  std::uint32_t slot_size = 0;
  std::uint32_t head = 0;     // next slot to consume
  std::uint32_t tail = 0;     // next slot to fill

  [[nodiscard]] std::uint32_t count() const noexcept { return (tail + capacity - head) % capacity; }
  [[nodiscard]] bool full() const noexcept { return count() == capacity - 1; }
  [[nodiscard]] bool empty() const noexcept { return head == tail; }
  [[nodiscard]] std::size_t max_payload() const noexcept { return slot_size - kSlotHeader; }
  [[nodiscard]] Address slot_addr(std::uint32_t index) const noexcept {
    return base + static_cast<Address>(index) * slot_size;
  }

  static constexpr std::size_t kSlotHeader = 4;  // u16 length + u16 reserved
};

struct PortCapability {
  PortId port_id;
  ModelId model;
  DeviceClass device_class = DeviceClass::network;
  std::uint32_t device_instance = 0;
  std::uint8_t slot = 0;  // index in the model's capability table
  RingBuffer tx;          // model -> device
  RingBuffer rx;          // device -> model
  PortState state = PortState::granted;
};

struct AuditRecord {
  std::uint64_t seq = 0;
  Tick tick = 0;
  PortId port_id;
  Direction direction = Direction::model_to_device;
  crypto::Digest payload_digest{};
  crypto::Bytes payload;  // bounded by the audit cap
  bool truncated = false;

  [[nodiscard]] Json to_json() const;  // seq, tick, port_id, direction, digest, payload_b64, truncated
  static std::optional<AuditRecord> from_json(const Json& j);
};

/// Independent record of every slot written into a ring, read back from shared IO DRAM.
struct TapRecord {
  PortId port_id;
  Direction direction = Direction::model_to_device;
  std::uint64_t ordinal = 0;  // per (port, direction) write count
  std::size_t length = 0;
  crypto::Digest digest{};
};

struct ThrottleConfig {
  Tick window = 10;
  std::uint32_t budget = 4;
  bool enabled = true;
};

enum class InterruptKind { port_message, spurious };

struct Interrupt {
  std::uint64_t seq = 0;
  CoreId core;
  InterruptKind kind = InterruptKind::spurious;
  PortId port_id;
  Tick raised = 0;
};

/// Per-model-core windowed interrupt budget with an unbounded FIFO deferral queue.
class Throttle {
 public:
  explicit Throttle(ThrottleConfig config) : config_(config) {}

  void raise(Interrupt irq);
  /// Interrupts released at `now`, in per-core FIFO order, cores in ascending id.
  std::vector<Interrupt> release(Tick now);

  [[nodiscard]] std::size_t deferred(CoreId core) const;
  [[nodiscard]] std::size_t total_deferred() const;
  [[nodiscard]] std::uint64_t raised() const noexcept { return raised_; }
  [[nodiscard]] std::uint64_t delivered() const noexcept { return delivered_; }
  /// Delivery counts keyed by (core, window index).
  [[nodiscard]] const std::map<std::pair<std::uint32_t, Tick>, std::uint32_t>& window_counts() const noexcept {
    return window_counts_;
  }
  [[nodiscard]] const ThrottleConfig& config() const noexcept { return config_; }

 private:
  ThrottleConfig config_;
  std::map<std::uint32_t, std::deque<Interrupt>> queues_;
  std::map<std::pair<std::uint32_t, Tick>, std::uint32_t> window_counts_;
  std::uint64_t raised_ = 0;
  std::uint64_t delivered_ = 0;
};

struct DeviceAction {
  PortId port_id;
  DeviceClass device_class = DeviceClass::network;
  std::uint32_t device_instance = 0;
  std::uint64_t request_audit_seq = 0;
  std::string action;  // e.g. "network_send", "storage_write"
  Json detail = Json::object();
};

enum class GrantError { isolation_forbids, no_such_device, out_of_io_memory };
enum class WriteStatus { queued, revoked_port, restricted_op, ring_full, no_such_port, payload_too_large };
std::string to_string(GrantError e);
std::string to_string(WriteStatus s);
guests::GuestStatus to_guest_status(WriteStatus s);

/// Verdict of a broker policy hook on one message.
struct HookDecision {
  enum class Kind { pass, sanitize, block } kind = Kind::pass;
  crypto::Bytes replacement;
  std::string reason;
};

/// Result of simulating the device side of a request.
struct DeviceOutcome {
  enum class Kind { completed, rejected, pending } kind = Kind::completed;
  crypto::Bytes response;
  std::string reason;
  std::string action;
  Json detail = Json::object();
};

/// Deployment-supplied policy and device simulation used by the broker.
class BrokerHooks {
 public:
  virtual ~BrokerHooks() = default;
  /// Output-sanitisation point for model egress, before any device sees it.
  virtual HookDecision inspect_egress(const PortCapability& port, std::span<const std::uint8_t> payload) = 0;
  /// Input-shield point for anything about to enter the model.
  virtual HookDecision inspect_ingress(const PortCapability& port, std::span<const std::uint8_t> payload) = 0;
  virtual DeviceOutcome perform(const PortCapability& port, std::uint64_t audit_seq,
                                std::span<const std::uint8_t> payload) = 0;
};

struct DeviceInventory {
  std::map<DeviceClass, std::uint32_t> counts{{DeviceClass::network, 1},
                                              {DeviceClass::storage, 1},
                                              {DeviceClass::accelerator, 1},
                                              {DeviceClass::actuator, 1},
                                              {DeviceClass::clock, 1}};
};

struct PortsConfig {
  std::uint32_t ring_capacity = 64;
  std::uint32_t slot_size = 256;
  std::size_t audit_payload_cap = 1024;
  ThrottleConfig throttle;
  DeviceInventory devices;
  std::uint64_t port_id_seed = 0;
};

enum class AccessMode { open, probation, severed };

struct Reconciliation {
  bool bijective = true;
  bool order_preserved = true;
  std::size_t tap_records = 0;
  std::size_t audit_records = 0;
  std::size_t unaudited_bytes = 0;
  std::vector<std::string> problems;

  [[nodiscard]] bool ok() const noexcept { return bijective && order_preserved && unaudited_bytes == 0; }
};

/// Pairs the k-th tap write of each (port, direction) with the k-th audit record
/// of the same pair, comparing digests.
Reconciliation reconcile(const std::vector<TapRecord>& tap, const std::vector<AuditRecord>& audit);

/// The capability port API and the hypervisor-side broker.
class PortBroker {
 public:
  PortBroker(machine::Machine& machine, EventLog& log, PortsConfig config);

  void set_hooks(BrokerHooks* hooks) noexcept { hooks_ = hooks; }

  Outcome<PortCapability, GrantError> grant_port(ModelId model, DeviceClass device_class,
                                                 std::uint32_t device_instance,
                                                 std::optional<std::uint8_t> slot = std::nullopt);

  WriteStatus port_write(ModelId model, CoreId core, PortId port, std::span<const std::uint8_t> payload);
  WriteStatus port_write_slot(ModelId model, CoreId core, std::uint8_t slot,
                              std::span<const std::uint8_t> payload);
  void raise_spurious(CoreId core);

  /// Moves interrupts the throttle releases at `now` onto hypervisor cores, round robin.
  std::size_t deliver_interrupts(Tick now);
  [[nodiscard]] std::size_t pending_interrupts(CoreId hyp) const;

  /// Handles up to `max_interrupts` pending interrupts on `hyp`, then retries
  /// stalled in-flight requests and inbound backlogs.
  std::vector<DeviceAction> broker_dispatch(CoreId hyp, std::size_t max_interrupts = SIZE_MAX);

  /// An external entity sends `payload` to the model over its port in `slot`.
  bool inject_inbound(ModelId model, std::uint8_t slot, crypto::Bytes payload);

  /// Guest-local consumption of responses for `model`.
  std::size_t drain_inbound(ModelId model);

  void restrict_ports(ModelId model, const RestrictionSet& restriction);
  void revoke_all(ModelId model);
  /// Back to unrestricted access (Standard level).
  void open_access(ModelId model);

  [[nodiscard]] AccessMode mode() const noexcept { return mode_; }
  [[nodiscard]] const RestrictionSet& restriction() const noexcept { return restriction_; }
  [[nodiscard]] const std::map<std::uint64_t, PortCapability>& ports() const noexcept { return ports_; }
  [[nodiscard]] std::optional<PortCapability> port_in_slot(ModelId model, std::uint8_t slot) const;
  [[nodiscard]] const std::vector<AuditRecord>& audit() const noexcept { return audit_; }
  [[nodiscard]] const std::vector<TapRecord>& tap() const noexcept { return tap_; }
  [[nodiscard]] const Throttle& throttle() const noexcept { return throttle_; }
  [[nodiscard]] const PortsConfig& config() const noexcept { return config_; }
  [[nodiscard]] std::size_t inflight() const;
  [[nodiscard]] bool quiescent() const;

  std::string audit_jsonl() const;

 private:
  struct InflightRequest {
    std::uint64_t audit_seq = 0;
    crypto::Bytes payload;
    CoreId core;
    std::optional<crypto::Bytes> response;  // computed, waiting for rx space
    bool inspected = false;                 // policy and egress hook already applied
  };
  struct PortRuntime {
    std::deque<InflightRequest> inflight;
    std::deque<crypto::Bytes> inbound_backlog;
    std::deque<std::uint64_t> tx_audit_seqs;  // audit seq of each message sitting in tx
    std::deque<CoreId> tx_cores;
    std::map<Tick, std::uint32_t> egress_per_window;
    std::uint64_t tx_written = 0;
    std::uint64_t rx_written = 0;
  };

  std::uint64_t append_audit(PortId port, Direction dir, std::span<const std::uint8_t> payload);
  bool ring_write(PortCapability& port, RingBuffer& ring, Direction dir,
                  std::span<const std::uint8_t> payload);
  crypto::Bytes ring_read(RingBuffer& ring);
  bool deliver_to_model(PortCapability& port, std::span<const std::uint8_t> payload, const char* what);
  void service_port(PortCapability& port, std::vector<DeviceAction>& actions);
  void drop_rings(PortCapability& port);
  void refresh_states();
  std::optional<std::string> policy_reject_reason(const PortCapability& port,
                                                  std::span<const std::uint8_t> payload);
  PortId mint_port_id();
  CoreId io_core() const { return machine_.hypervisor_cores().front(); }

  machine::Machine& machine_;
  EventLog& log_;
  PortsConfig config_;
  BrokerHooks* hooks_ = nullptr;
  AccessMode mode_ = AccessMode::open;
  RestrictionSet restriction_;
  std::map<std::uint64_t, PortCapability> ports_;
  std::map<std::uint64_t, PortRuntime> runtime_;
  std::map<std::uint32_t, std::map<std::uint8_t, std::uint64_t>> slots_;  // model -> slot -> port
  std::vector<AuditRecord> audit_;
  std::vector<TapRecord> tap_;
  Throttle throttle_;
  std::map<std::uint32_t, std::deque<Interrupt>> hyp_pending_;
  std::uint64_t irq_seq_ = 0;
  std::size_t next_hyp_ = 0;
  Address io_cursor_ = 0;
  std::vector<Address> free_ring_pairs_;
  std::uint64_t id_state_;
};

}  // namespace guillotine::ports
