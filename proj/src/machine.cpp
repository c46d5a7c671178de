#include "guillotine/machine.hpp"

#include <algorithm>
#include <stdexcept>

namespace guillotine::machine {
namespace {

const std::vector<std::string> kModelRegisters = {"acc", "faults", "irqs", "rx", "status"};

std::vector<CoreState> build_cores(const TopologyParams& p) {
  if (p.hypervisor_cores == 0 || p.model_cores == 0) {
    throw std::invalid_argument("topology needs at least one hypervisor core and one model core");
  }
  std::vector<CoreState> cores;
  std::uint32_t next = 0;
  for (std::uint32_t i = 0; i < p.hypervisor_cores; ++i) {
    CoreState c;
    c.id = CoreId(next++);
    c.role = CoreRole::hypervisor;
    c.run_state = RunState::running;
    cores.push_back(c);
  }
  for (std::uint32_t i = 0; i < p.model_cores; ++i) {
    CoreState c;
    c.id = CoreId(next++);
    c.role = CoreRole::model;
    c.run_state = RunState::halted;  // model cores boot halted until a model is loaded
    for (const auto& r : kModelRegisters) c.registers[r] = 0;
    cores.push_back(c);
  }
  return cores;
}

std::vector<MemoryRegion> build_regions(const TopologyParams& p) {
  if (p.hypervisor_dram == 0 || p.model_dram == 0 || p.shared_io == 0) {
    throw std::invalid_argument("memory regions must have non-zero size");
  }
  if (p.model_dram % kPageSize != 0) {
    throw std::invalid_argument("model DRAM size must be a multiple of the page size");
  }
  std::vector<MemoryRegion> regions(3);
  regions[0] = {RegionId(0), RegionKind::hypervisor_dram,
                std::vector<std::uint8_t>(p.hypervisor_dram, 0)};
  regions[1] = {RegionId(1), RegionKind::model_dram, std::vector<std::uint8_t>(p.model_dram, 0)};
  regions[2] = {RegionId(2), RegionKind::shared_io_dram,
                std::vector<std::uint8_t>(p.shared_io, 0)};
  return regions;
}

Json watchpoint_json(const Watchpoint& w) {
  return Json{{"region", w.region.value}, {"begin", w.begin}, {"end", w.end},
              {"kind", to_string(w.kind)}};
}

}  // namespace

std::string to_string(CoreRole r) { return r == CoreRole::hypervisor ? "hypervisor" : "model"; }

std::string to_string(RunState s) {
  switch (s) {
    case RunState::running: return "running";
    case RunState::halted: return "halted";
    case RunState::single_stepping: return "single_stepping";
    case RunState::powered_down: return "powered_down";
  }
  return "?";
}

std::string to_string(RegionKind k) {
  switch (k) {
    case RegionKind::hypervisor_dram: return "hypervisor_dram";
    case RegionKind::model_dram: return "model_dram";
    case RegionKind::shared_io_dram: return "shared_io_dram";
  }
  return "?";
}

std::optional<RegionKind> region_kind_from_string(std::string_view s) {
  if (s == "hypervisor_dram") return RegionKind::hypervisor_dram;
  if (s == "model_dram") return RegionKind::model_dram;
  if (s == "shared_io_dram") return RegionKind::shared_io_dram;
  return std::nullopt;
}

std::string to_string(AccessKind k) {
  switch (k) {
    case AccessKind::read: return "read";
    case AccessKind::write: return "write";
    case AccessKind::execute: return "execute";
  }
  return "?";
}

std::optional<AccessKind> access_kind_from_string(std::string_view s) {
  if (s == "read") return AccessKind::read;
  if (s == "write") return AccessKind::write;
  if (s == "execute") return AccessKind::execute;
  return std::nullopt;
}

std::string to_string(AccessResult r) {
  switch (r) {
    case AccessResult::allowed: return "allowed";
    case AccessResult::bus_fault: return "bus_fault";
    case AccessResult::mmu_fault: return "mmu_fault";
    case AccessResult::watchpoint_halt: return "watchpoint_halt";
  }
  return "?";
}

std::string to_string(const Permissions& p) {
  std::string s = "---";
  if (p.readable) s[0] = 'r';
  if (p.writable) s[1] = 'w';
  if (p.executable) s[2] = 'x';
  return s;
}

std::optional<Permissions> permissions_from_string(std::string_view s) {
  Permissions p;
  for (char c : s) {
    switch (c) {
      case 'r': p.readable = true; break;
      case 'w': p.writable = true; break;
      case 'x': p.executable = true; break;
      case '-': break;
      default: return std::nullopt;
    }
  }
  return p;
}

std::string to_string(CommandStatus s) {
  switch (s) {
    case CommandStatus::ok: return "ok";
    case CommandStatus::not_hypervisor_core: return "not_hypervisor_core";
    case CommandStatus::not_model_core: return "not_model_core";
    case CommandStatus::no_such_core: return "no_such_core";
    case CommandStatus::target_not_halted: return "target_not_halted";
    case CommandStatus::target_powered_down: return "target_powered_down";
    case CommandStatus::mmu_already_locked: return "mmu_already_locked";
  }
  return "?";
}

std::string to_string(DramError e) {
  switch (e) {
    case DramError::not_hypervisor_core: return "not_hypervisor_core";
    case DramError::not_model_region: return "not_model_region";
    case DramError::cores_not_halted: return "cores_not_halted";
    case DramError::out_of_range: return "out_of_range";
  }
  return "?";
}

std::string command_name(const ControlCommand& c) {
  return std::visit(
      [](const auto& cmd) -> std::string {
        using T = std::decay_t<decltype(cmd)>;
        if constexpr (std::is_same_v<T, Pause>) return "pause";
        else if constexpr (std::is_same_v<T, InspectState>) return "inspect_state";
        else if constexpr (std::is_same_v<T, ModifyState>) return "modify_state";
        else if constexpr (std::is_same_v<T, SetWatchpoint>) return "set_watchpoint";
        else if constexpr (std::is_same_v<T, LockMmu>) return "lock_mmu";
        else if constexpr (std::is_same_v<T, ClearUarch>) return "clear_uarch";
        else if constexpr (std::is_same_v<T, SingleStep>) return "single_step";
        else if constexpr (std::is_same_v<T, Resume>) return "resume";
        else return "power_down";
      },
      c);
}

bool MmuConfig::in_exec_region(std::uint64_t page) const noexcept {
  return std::any_of(exec_regions.begin(), exec_regions.end(),
                     [page](const ExecRegion& r) { return r.contains_page(page); });
}

Permissions MmuConfig::perms(std::uint64_t page) const {
  auto it = page_entries.find(page);
  return it == page_entries.end() ? Permissions{} : it->second;
}

std::vector<std::uint64_t> MmuConfig::executable_pages() const {
  std::vector<std::uint64_t> out;
  for (const auto& [page, p] : page_entries) {
    if (p.executable) out.push_back(page);
  }
  return out;
}

Machine::Machine(const TopologyParams& params, EventLog& log)
    : log_(log),
      cores_(build_cores(params)),
      regions_(build_regions(params)),
      hyp_region_(0),
      model_region_(1),
      io_region_(2),
      mmus_(cores_.size()),
      reach_(build_reachability(cores_, regions_)) {
  for (const auto& c : cores_) {
    (c.role == CoreRole::hypervisor ? hyp_cores_ : model_cores_).push_back(c.id);
  }
  Json cores = Json::array();
  for (const auto& c : cores_) {
    cores.push_back({{"id", c.id.value}, {"role", to_string(c.role)}});
  }
  Json regions = Json::array();
  for (const auto& r : regions_) {
    regions.push_back({{"id", r.id.value}, {"kind", to_string(r.kind)}, {"size", r.size()}});
  }
  log_.append("machine", "boot", {{"cores", cores}, {"regions", regions}});
}

std::vector<std::vector<Reach>> Machine::build_reachability(
    const std::vector<CoreState>& cores, const std::vector<MemoryRegion>& regions) {
  std::vector<std::vector<Reach>> m(cores.size(), std::vector<Reach>(regions.size(), Reach::none));
  for (const auto& c : cores) {
    for (const auto& r : regions) {
      Reach reach = Reach::none;
      if (c.role == CoreRole::hypervisor) {
        // Own hierarchy, the shared IO region, and the private bus to model DRAM.
        reach = Reach::read_write;
      } else if (r.kind != RegionKind::hypervisor_dram) {
        reach = Reach::read_write;
      }
      m[c.id.value][r.id.value] = reach;
    }
  }
  return m;
}

const CoreState& Machine::core(CoreId id) const {
  if (!has_core(id)) throw std::out_of_range("no such core");
  return cores_[id.value];
}

CoreState& Machine::mutable_core(CoreId id) {
  if (!has_core(id)) throw std::out_of_range("no such core");
  return cores_[id.value];
}

const MemoryRegion& Machine::region(RegionId id) const {
  if (id.value >= regions_.size()) throw std::out_of_range("no such region");
  return regions_[id.value];
}

Reach Machine::reachability(CoreId core, RegionId region) const {
  if (!has_core(core) || region.value >= regions_.size()) return Reach::none;
  return reach_[core.value][region.value];
}

const MmuConfig& Machine::mmu(CoreId core) const {
  if (!has_core(core)) throw std::out_of_range("no such core");
  return mmus_[core.value];
}

bool Machine::is_hypervisor(CoreId id) const {
  return has_core(id) && cores_[id.value].role == CoreRole::hypervisor;
}

bool Machine::is_model(CoreId id) const {
  return has_core(id) && cores_[id.value].role == CoreRole::model;
}

AccessResult Machine::check_mmu(const CoreState& core, RegionId region, Address addr,
                                AccessKind kind) const {
  if (regions_[region.value].kind != RegionKind::model_dram) {
    // The shared IO region is data-only.
    return kind == AccessKind::execute ? AccessResult::mmu_fault : AccessResult::allowed;
  }
  const auto& mmu = mmus_[core.id.value];
  const std::uint64_t page = addr / kPageSize;
  const Permissions p = mmu.perms(page);
  const bool in_exec = mmu.in_exec_region(page);
  switch (kind) {
    case AccessKind::execute:
      if (!p.executable) return AccessResult::mmu_fault;
      if (mmu.locked && !in_exec) return AccessResult::mmu_fault;
      return AccessResult::allowed;
    case AccessKind::read:
      if (mmu.locked && in_exec) return AccessResult::mmu_fault;
      return p.readable ? AccessResult::allowed : AccessResult::mmu_fault;
    case AccessKind::write:
      if (mmu.locked && in_exec) return AccessResult::mmu_fault;
      return p.writable ? AccessResult::allowed : AccessResult::mmu_fault;
  }
  return AccessResult::mmu_fault;
}

void Machine::report_fault(const FaultNotice& n) {
  log_.append("machine", to_string(n.result),
              {{"core", n.core.value},
               {"region", n.region.value},
               {"addr", n.addr},
               {"kind", to_string(n.kind)}});
  if (fault_listener_) fault_listener_(n);
}

AccessResult Machine::check_access(CoreId core_id, RegionId region, Address addr,
                                   AccessKind kind) {
  if (!has_core(core_id)) throw std::out_of_range("no such core");
  auto& core = cores_[core_id.value];
  FaultNotice notice{core_id, region, addr, kind, AccessResult::allowed};

  // Bus reachability dominates. An address past the end of a region has no bus either.
  const Reach reach = reachability(core_id, region);
  const bool bus_ok = reach == Reach::read_write || (reach == Reach::read && kind == AccessKind::read);
  if (!bus_ok || addr >= regions_[region.value].size()) {
    notice.result = AccessResult::bus_fault;
    report_fault(notice);
    return notice.result;
  }
  if (core.role == CoreRole::hypervisor) return AccessResult::allowed;

  if (!core.watchpoint_bypass) {
    for (const auto& w : core.watchpoints) {
      if (w.matches(region, addr, kind)) {
        core.run_state = RunState::halted;
        core.halted_by_watchpoint = true;
        notice.result = AccessResult::watchpoint_halt;
        report_fault(notice);
        return notice.result;
      }
    }
  }

  notice.result = check_mmu(core, region, addr, kind);
  if (notice.result != AccessResult::allowed) report_fault(notice);
  return notice.result;
}

Outcome<std::uint8_t, AccessResult> Machine::guest_load(CoreId core, RegionId region,
                                                        Address addr) {
  auto r = check_access(core, region, addr, AccessKind::read);
  if (r != AccessResult::allowed) return r;
  return regions_[region.value].contents[addr];
}

AccessResult Machine::guest_store(CoreId core, RegionId region, Address addr,
                                  std::uint8_t value) {
  auto r = check_access(core, region, addr, AccessKind::write);
  if (r == AccessResult::allowed) regions_[region.value].contents[addr] = value;
  return r;
}

Outcome<crypto::Bytes, AccessResult> Machine::guest_fetch(CoreId core, Address addr,
                                                          std::size_t len) {
  // Every page touched by the fetch must be executable.
  for (Address a = addr; a < addr + len; a = (a / kPageSize + 1) * kPageSize) {
    auto r = check_access(core, model_region_, a, AccessKind::execute);
    if (r != AccessResult::allowed) return r;
  }
  const auto& mem = regions_[model_region_.value].contents;
  if (addr + len > mem.size()) {
    FaultNotice n{core, model_region_, addr + len - 1, AccessKind::execute, AccessResult::bus_fault};
    report_fault(n);
    return AccessResult::bus_fault;
  }
  return crypto::Bytes(mem.begin() + static_cast<std::ptrdiff_t>(addr),
                       mem.begin() + static_cast<std::ptrdiff_t>(addr + len));
}

CommandResult Machine::control_bus(CoreId issuer, CoreId target, const ControlCommand& command) {
  CommandResult result;
  auto log_result = [&] {
    Json payload{{"issuer", issuer.value},
                 {"target", target.value},
                 {"command", command_name(command)},
                 {"status", to_string(result.status)}};
    if (const auto* m = std::get_if<ModifyState>(&command)) {
      if (m->reg) payload["register"] = *m->reg;
      if (m->pc) payload["pc"] = *m->pc;
      payload["value"] = m->value;
    }
    if (const auto* w = std::get_if<SetWatchpoint>(&command)) {
      payload["watchpoint"] = watchpoint_json(w->watchpoint);
    }
    log_.append("machine", "control_bus", std::move(payload));
  };

  if (!has_core(issuer) || !has_core(target)) {
    result.status = CommandStatus::no_such_core;
    log_result();
    return result;
  }
  if (!is_hypervisor(issuer) || !hypervisor_powered_) {
    result.status = CommandStatus::not_hypervisor_core;
    log_result();
    return result;
  }
  if (!is_model(target)) {
    result.status = CommandStatus::not_model_core;
    log_result();
    return result;
  }

  auto& core = cores_[target.value];
  const bool halted = core.run_state == RunState::halted;
  const bool down = core.run_state == RunState::powered_down;

  result.status = std::visit(
      [&](const auto& cmd) -> CommandStatus {
        using T = std::decay_t<decltype(cmd)>;
        if constexpr (std::is_same_v<T, Pause>) {
          if (down) return CommandStatus::target_powered_down;
          core.run_state = RunState::halted;
          return CommandStatus::ok;
        } else if constexpr (std::is_same_v<T, InspectState>) {
          if (!halted && !down) return CommandStatus::target_not_halted;
          result.snapshot = core;
          return CommandStatus::ok;
        } else if constexpr (std::is_same_v<T, ModifyState>) {
          if (down) return CommandStatus::target_powered_down;
          if (!halted) return CommandStatus::target_not_halted;
          if (cmd.reg) core.registers[*cmd.reg] = cmd.value;
          if (cmd.pc) {
            core.pc = *cmd.pc;
            core.spin_remaining = 0;
          }
          return CommandStatus::ok;
        } else if constexpr (std::is_same_v<T, SetWatchpoint>) {
          core.watchpoints.push_back(cmd.watchpoint);
          return CommandStatus::ok;
        } else if constexpr (std::is_same_v<T, LockMmu>) {
          auto& mmu = mmus_[target.value];
          if (mmu.locked) {
            return mmu.exec_regions == cmd.exec_regions ? CommandStatus::ok
                                                        : CommandStatus::mmu_already_locked;
          }
          mmu.exec_regions = cmd.exec_regions;
          mmu.locked = true;
          // Normalise existing entries so the lockdown invariant holds from the first tick.
          for (auto& [page, p] : mmu.page_entries) {
            if (mmu.in_exec_region(page)) {
              if (p.executable) p = Permissions{false, false, true};
              else p = Permissions{};
            } else {
              p.executable = false;
            }
          }
          return CommandStatus::ok;
        } else if constexpr (std::is_same_v<T, ClearUarch>) {
          core.uarch_scratch = 0;
          return CommandStatus::ok;
        } else if constexpr (std::is_same_v<T, SingleStep>) {
          if (down) return CommandStatus::target_powered_down;
          if (!halted) return CommandStatus::target_not_halted;
          if (core.halted_by_watchpoint) {
            core.watchpoint_bypass = true;
            core.halted_by_watchpoint = false;
          }
          core.run_state = RunState::single_stepping;
          if (executor_) executor_->execute_one(target);
          if (core.run_state == RunState::single_stepping) core.run_state = RunState::halted;
          return CommandStatus::ok;
        } else if constexpr (std::is_same_v<T, Resume>) {
          if (down) return CommandStatus::target_powered_down;
          if (!halted) return CommandStatus::target_not_halted;
          if (core.halted_by_watchpoint) {
            core.watchpoint_bypass = true;
            core.halted_by_watchpoint = false;
          }
          core.run_state = RunState::running;
          return CommandStatus::ok;
        } else {
          static_assert(std::is_same_v<T, PowerDown>);
          if (down) return CommandStatus::ok;
          if (!halted) return CommandStatus::target_not_halted;
          core.run_state = RunState::powered_down;
          for (auto& [name, v] : core.registers) v = 0;
          core.pc = 0;
          core.uarch_scratch = 0;
          core.spin_remaining = 0;
          return CommandStatus::ok;
        }
      },
      command);
  log_result();
  return result;
}

MmuResult Machine::configure_mmu_entry(CoreId core, std::uint64_t page, Permissions perms,
                                       MmuOrigin origin) {
  if (!is_model(core)) return MmuResult::not_model_core;
  auto& mmu = mmus_[core.value];
  MmuResult result = MmuResult::ok;
  if (mmu.locked) {
    const bool in_exec = mmu.in_exec_region(page);
    const Permissions exec_only{false, false, true};
    if (in_exec && perms != exec_only) result = MmuResult::rejected_locked;
    if (!in_exec && perms.executable) result = MmuResult::rejected_locked;
  }
  if (result == MmuResult::ok) mmu.page_entries[page] = perms;
  log_.append("machine", "mmu_entry",
              {{"core", core.value},
               {"page", page},
               {"perms", to_string(perms)},
               {"origin", origin == MmuOrigin::guest ? "guest" : "hypervisor"},
               {"result", result == MmuResult::ok ? "ok" : "rejected_locked"}});
  if (result == MmuResult::rejected_locked && fault_listener_) {
    fault_listener_(FaultNotice{core, model_region_, page * kPageSize,
                                perms.executable ? AccessKind::execute : AccessKind::write,
                                AccessResult::mmu_fault});
  }
  return result;
}

bool Machine::all_model_cores_stopped() const {
  return std::all_of(model_cores_.begin(), model_cores_.end(), [&](CoreId id) {
    auto s = cores_[id.value].run_state;
    return s == RunState::halted || s == RunState::powered_down;
  });
}

Outcome<crypto::Bytes, DramError> Machine::read_model_dram(CoreId issuer, RegionId region,
                                                           Address addr, std::size_t len) {
  auto fail = [&](DramError e) -> Outcome<crypto::Bytes, DramError> {
    log_.append("machine", "dram_read",
                {{"issuer", issuer.value}, {"region", region.value}, {"addr", addr},
                 {"len", len}, {"error", to_string(e)}});
    return e;
  };
  if (!is_hypervisor(issuer) || !hypervisor_powered_) return fail(DramError::not_hypervisor_core);
  if (region != model_region_) return fail(DramError::not_model_region);
  if (!all_model_cores_stopped()) return fail(DramError::cores_not_halted);
  const auto& mem = regions_[region.value].contents;
  if (addr > mem.size() || len > mem.size() - addr) return fail(DramError::out_of_range);
  crypto::Bytes out(mem.begin() + static_cast<std::ptrdiff_t>(addr),
                    mem.begin() + static_cast<std::ptrdiff_t>(addr + len));
  log_.append("machine", "dram_read",
              {{"issuer", issuer.value}, {"region", region.value}, {"addr", addr}, {"len", len},
               {"digest", crypto::to_hex(crypto::sha256(out))}});
  return out;
}

Outcome<bool, DramError> Machine::write_model_dram(CoreId issuer, RegionId region, Address addr,
                                                   std::span<const std::uint8_t> bytes) {
  auto fail = [&](DramError e) -> Outcome<bool, DramError> {
    log_.append("machine", "dram_write",
                {{"issuer", issuer.value}, {"region", region.value}, {"addr", addr},
                 {"len", bytes.size()}, {"error", to_string(e)}});
    return e;
  };
  if (!is_hypervisor(issuer) || !hypervisor_powered_) return fail(DramError::not_hypervisor_core);
  if (region != model_region_) return fail(DramError::not_model_region);
  if (!all_model_cores_stopped()) return fail(DramError::cores_not_halted);
  auto& mem = regions_[region.value].contents;
  if (addr > mem.size() || bytes.size() > mem.size() - addr) return fail(DramError::out_of_range);
  std::copy(bytes.begin(), bytes.end(), mem.begin() + static_cast<std::ptrdiff_t>(addr));
  log_.append("machine", "dram_write",
              {{"issuer", issuer.value}, {"region", region.value}, {"addr", addr},
               {"len", bytes.size()}, {"digest", crypto::to_hex(crypto::sha256(bytes))}});
  return true;
}

Outcome<bool, DramError> Machine::write_shared_io(CoreId issuer, Address addr,
                                                  std::span<const std::uint8_t> bytes) {
  if (!is_hypervisor(issuer)) return DramError::not_hypervisor_core;
  auto& mem = regions_[io_region_.value].contents;
  if (addr > mem.size() || bytes.size() > mem.size() - addr) return DramError::out_of_range;
  std::copy(bytes.begin(), bytes.end(), mem.begin() + static_cast<std::ptrdiff_t>(addr));
  return true;
}

Outcome<crypto::Bytes, DramError> Machine::read_shared_io(CoreId issuer, Address addr,
                                                          std::size_t len) const {
  if (!is_hypervisor(issuer)) return DramError::not_hypervisor_core;
  const auto& mem = regions_[io_region_.value].contents;
  if (addr > mem.size() || len > mem.size() - addr) return DramError::out_of_range;
  return crypto::Bytes(mem.begin() + static_cast<std::ptrdiff_t>(addr),
                       mem.begin() + static_cast<std::ptrdiff_t>(addr + len));
}

void Machine::install_hypervisor_image(std::span<const std::uint8_t> image) {
  auto& mem = regions_[hyp_region_.value].contents;
  const auto n = std::min(image.size(), mem.size());
  std::copy_n(image.begin(), n, mem.begin());
  log_.append("machine", "hypervisor_image",
              {{"len", n}, {"digest", crypto::to_hex(region_digest(hyp_region_))}});
}

void Machine::power_down_everything() {
  for (auto& c : cores_) {
    if (c.role == CoreRole::model) {
      c.run_state = RunState::powered_down;
      for (auto& [name, v] : c.registers) v = 0;
      c.pc = 0;
      c.uarch_scratch = 0;
      c.spin_remaining = 0;
      c.guest_halted = false;
      c.halted_by_watchpoint = false;
    } else {
      c.run_state = RunState::powered_down;
    }
  }
  hypervisor_powered_ = false;
  log_.append("machine", "power_down_all");
}

void Machine::power_up_everything(Address model_entry_pc) {
  for (auto& c : cores_) {
    if (c.role == CoreRole::hypervisor) {
      c.run_state = RunState::running;
    } else {
      c.run_state = RunState::running;
      c.pc = model_entry_pc;
      c.guest_halted = false;
    }
  }
  hypervisor_powered_ = true;
  log_.append("machine", "power_up_all", {{"entry_pc", model_entry_pc}});
}

void Machine::instruction_retired(CoreId core) {
  auto& c = mutable_core(core);
  c.watchpoint_bypass = false;
  ++c.retired;
}

crypto::Digest Machine::region_digest(RegionId region, Address begin, Address end) const {
  const auto& mem = this->region(region).contents;
  end = std::min<Address>(end, mem.size());
  begin = std::min(begin, end);
  return crypto::sha256(std::span(mem.data() + begin, end - begin));
}

crypto::Digest Machine::region_digest(RegionId region) const {
  return region_digest(region, 0, this->region(region).size());
}

crypto::Digest Machine::register_digest(CoreId core) const {
  const auto& c = this->core(core);
  Json j{{"pc", c.pc}, {"registers", c.registers}, {"run_state", to_string(c.run_state)}};
  return crypto::sha256(j.dump());
}

}  // namespace guillotine::machine
