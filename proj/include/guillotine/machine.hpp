#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "guillotine/common.hpp"
#include "guillotine/crypto.hpp"
#include "guillotine/event_log.hpp"

namespace guillotine::machine {

enum class CoreRole { hypervisor, model };
enum class RunState { running, halted, single_stepping, powered_down };
enum class RegionKind { hypervisor_dram, model_dram, shared_io_dram };
enum class Reach { none, read, read_write };
enum class AccessKind { read, write, execute };
enum class AccessResult { allowed, bus_fault, mmu_fault, watchpoint_halt };

std::string to_string(CoreRole r);
std::string to_string(RunState s);
std::string to_string(RegionKind k);
std::string to_string(AccessKind k);
std::string to_string(AccessResult r);
std::optional<RegionKind> region_kind_from_string(std::string_view s);
std::optional<AccessKind> access_kind_from_string(std::string_view s);

inline constexpr Address kPageSize = 256;

struct MemoryRegion {
  RegionId id;
  RegionKind kind = RegionKind::model_dram;
  std::vector<std::uint8_t> contents;

  [[nodiscard]] Address size() const noexcept { return contents.size(); }
};

struct Watchpoint {
  RegionId region;
  Address begin = 0;  // inclusive
  Address end = 0;    // exclusive
  AccessKind kind = AccessKind::write;

  [[nodiscard]] bool matches(RegionId r, Address a, AccessKind k) const noexcept {
    return r == region && k == kind && a >= begin && a < end;
  }
};

struct Permissions {
  bool readable = false;
  bool writable = false;
  bool executable = false;

  friend bool operator==(const Permissions&, const Permissions&) = default;
};

std::string to_string(const Permissions& p);  // e.g. "rw-", "--x"
std::optional<Permissions> permissions_from_string(std::string_view s);

/// Base+bound executable range, in model-DRAM byte addresses. Page aligned.
struct ExecRegion {
  Address base = 0;
  Address bound = 0;  // exclusive

  [[nodiscard]] bool contains_page(std::uint64_t page) const noexcept {
    return page * kPageSize >= base && page * kPageSize < bound;
  }
  friend bool operator==(const ExecRegion&, const ExecRegion&) = default;
};

struct MmuConfig {
  std::vector<ExecRegion> exec_regions;
  bool locked = false;
  std::map<std::uint64_t, Permissions> page_entries;

  [[nodiscard]] bool in_exec_region(std::uint64_t page) const noexcept;
  [[nodiscard]] Permissions perms(std::uint64_t page) const;
  /// Pages currently marked executable, ascending.
  [[nodiscard]] std::vector<std::uint64_t> executable_pages() const;
};

struct CoreState {
  CoreId id;
  CoreRole role = CoreRole::model;
  RunState run_state = RunState::halted;
  std::map<std::string, Word> registers;
  Address pc = 0;
  std::vector<Watchpoint> watchpoints;
  Word uarch_scratch = 0;

  // Simulation bookkeeping, not ISA-visible.
  bool guest_halted = false;         // the guest executed HALT
  bool halted_by_watchpoint = false;
  bool watchpoint_bypass = false;    // replay of the access that hit a watchpoint
  std::uint64_t retired = 0;         // instructions retired since boot
  std::uint64_t spin_remaining = 0;  // ticks left on an in-progress SPIN
};

struct TopologyParams {
  std::uint32_t hypervisor_cores = 1;
  std::uint32_t model_cores = 1;
  Address hypervisor_dram = 64 * 1024;
  Address model_dram = 64 * 1024;
  Address shared_io = 1024 * 1024;
};

// Control-bus commands.
struct Pause {};
struct InspectState {};
struct ModifyState {
  std::optional<std::string> reg;
  Word value = 0;
  std::optional<Address> pc;
};
struct SetWatchpoint {
  Watchpoint watchpoint;
};
struct LockMmu {
  std::vector<ExecRegion> exec_regions;
};
struct ClearUarch {};
struct SingleStep {};
struct Resume {};
struct PowerDown {};

using ControlCommand = std::variant<Pause, InspectState, ModifyState, SetWatchpoint, LockMmu,
                                    ClearUarch, SingleStep, Resume, PowerDown>;

std::string command_name(const ControlCommand& c);

enum class CommandStatus {
  ok,
  not_hypervisor_core,
  not_model_core,
  no_such_core,
  target_not_halted,
  target_powered_down,
  mmu_already_locked,
};
std::string to_string(CommandStatus s);

struct CommandResult {
  CommandStatus status = CommandStatus::ok;
  std::optional<CoreState> snapshot;  // set for InspectState

  [[nodiscard]] bool ok() const noexcept { return status == CommandStatus::ok; }
};

enum class MmuResult { ok, rejected_locked, not_model_core };
enum class MmuOrigin { guest, hypervisor };

enum class DramError { not_hypervisor_core, not_model_region, cores_not_halted, out_of_range };
std::string to_string(DramError e);

/// Raised for every bus/MMU fault and every watchpoint hit.
struct FaultNotice {
  CoreId core;
  RegionId region;
  Address addr = 0;
  AccessKind kind = AccessKind::read;
  AccessResult result = AccessResult::allowed;
};

/// Implemented by the guest interpreter; lets the control bus single-step a core.
class InstructionExecutor {
 public:
  virtual ~InstructionExecutor() = default;
  virtual void execute_one(CoreId core) = 0;
};

/// The simulated hardware substrate.
///
/// Memory isolation is structural: every access goes through check_access,
/// which consults a reachability matrix fixed at construction. There is no
/// address translation between a model core and region storage.
class Machine {
 public:
  Machine(const TopologyParams& params, EventLog& log);

  Machine(const Machine&) = delete;
  Machine& operator=(const Machine&) = delete;

  [[nodiscard]] const std::vector<CoreId>& hypervisor_cores() const noexcept { return hyp_cores_; }
  [[nodiscard]] const std::vector<CoreId>& model_cores() const noexcept { return model_cores_; }
  [[nodiscard]] const CoreState& core(CoreId id) const;
  [[nodiscard]] bool has_core(CoreId id) const noexcept { return id.value < cores_.size(); }
  [[nodiscard]] const std::vector<MemoryRegion>& regions() const noexcept { return regions_; }
  [[nodiscard]] const MemoryRegion& region(RegionId id) const;
  [[nodiscard]] RegionId hypervisor_region() const noexcept { return hyp_region_; }
  [[nodiscard]] RegionId model_region() const noexcept { return model_region_; }
  [[nodiscard]] RegionId shared_io_region() const noexcept { return io_region_; }
  [[nodiscard]] Reach reachability(CoreId core, RegionId region) const;
  [[nodiscard]] const MmuConfig& mmu(CoreId core) const;

  /// The single gate for every memory access.
  AccessResult check_access(CoreId core, RegionId region, Address addr, AccessKind kind);

  // Guest data path. Each call goes through check_access before touching storage.
  Outcome<std::uint8_t, AccessResult> guest_load(CoreId core, RegionId region, Address addr);
  AccessResult guest_store(CoreId core, RegionId region, Address addr, std::uint8_t value);
  Outcome<crypto::Bytes, AccessResult> guest_fetch(CoreId core, Address addr, std::size_t len);

  CommandResult control_bus(CoreId issuer, CoreId target, const ControlCommand& command);

  MmuResult configure_mmu_entry(CoreId core, std::uint64_t page, Permissions perms,
                                MmuOrigin origin);

  Outcome<crypto::Bytes, DramError> read_model_dram(CoreId issuer, RegionId region, Address addr,
                                                    std::size_t len);
  Outcome<bool, DramError> write_model_dram(CoreId issuer, RegionId region, Address addr,
                                            std::span<const std::uint8_t> bytes);

  /// Hypervisor-core access to the shared IO region (used by the port broker).
  Outcome<bool, DramError> write_shared_io(CoreId issuer, Address addr,
                                           std::span<const std::uint8_t> bytes);
  Outcome<crypto::Bytes, DramError> read_shared_io(CoreId issuer, Address addr,
                                                   std::size_t len) const;

  /// Boot-time install of the hypervisor software image into hypervisor DRAM.
  void install_hypervisor_image(std::span<const std::uint8_t> image);

  // Physical power effects driven by the isolation levels (not control-bus commands).
  void power_down_everything();
  void power_up_everything(Address model_entry_pc);
  [[nodiscard]] bool hypervisor_powered() const noexcept { return hypervisor_powered_; }

  /// Called by the interpreter when an instruction completes on `core`.
  void instruction_retired(CoreId core);
  CoreState& mutable_core(CoreId id);

  [[nodiscard]] crypto::Digest region_digest(RegionId region, Address begin, Address end) const;
  [[nodiscard]] crypto::Digest region_digest(RegionId region) const;
  /// Digest of a core's ISA-visible state (registers + pc).
  [[nodiscard]] crypto::Digest register_digest(CoreId core) const;

  void set_executor(InstructionExecutor* executor) noexcept { executor_ = executor; }
  void set_fault_listener(std::function<void(const FaultNotice&)> listener) {
    fault_listener_ = std::move(listener);
  }

  [[nodiscard]] bool all_model_cores_stopped() const;
  [[nodiscard]] EventLog& log() const noexcept { return log_; }

 private:
  [[nodiscard]] bool is_hypervisor(CoreId id) const;
  [[nodiscard]] bool is_model(CoreId id) const;
  AccessResult check_mmu(const CoreState& core, RegionId region, Address addr,
                         AccessKind kind) const;
  void report_fault(const FaultNotice& notice);
  static std::vector<std::vector<Reach>> build_reachability(const std::vector<CoreState>& cores,
                                                           const std::vector<MemoryRegion>& regions);

  EventLog& log_;
  std::vector<CoreState> cores_;
  std::vector<MemoryRegion> regions_;
  std::vector<CoreId> hyp_cores_;
  std::vector<CoreId> model_cores_;
  RegionId hyp_region_;
  RegionId model_region_;
  RegionId io_region_;
  std::vector<MmuConfig> mmus_;  // indexed by core id; hypervisor entries stay empty
  const std::vector<std::vector<Reach>> reach_;  // [core][region], immutable after boot
  bool hypervisor_powered_ = true;
  InstructionExecutor* executor_ = nullptr;
  std::function<void(const FaultNotice&)> fault_listener_;
};

}  // namespace guillotine::machine
