#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "guillotine/machine.hpp"

using namespace guillotine;
using namespace guillotine::machine;

namespace {

TopologyParams small() {
  TopologyParams p;
  p.hypervisor_cores = 2;
  p.model_cores = 2;
  p.hypervisor_dram = 4096;
  p.model_dram = 8192;
  p.shared_io = 4096;
  return p;
}

// Independent statement of the wiring: model cores have no bus to hypervisor DRAM.
Reach expected_reach(CoreRole role, RegionKind kind) {
  if (role == CoreRole::hypervisor) return Reach::read_write;
  return kind == RegionKind::hypervisor_dram ? Reach::none : Reach::read_write;
}

void lock(Machine& m, CoreId model, ExecRegion exec) {
  const auto hyp = m.hypervisor_cores().front();
  const auto pages = m.region(m.model_region()).size() / kPageSize;
  for (std::uint64_t page = 0; page < pages; ++page) {
    const bool code = exec.contains_page(page);
    m.configure_mmu_entry(model, page, {!code, !code, code}, MmuOrigin::hypervisor);
  }
  REQUIRE(m.control_bus(hyp, model, LockMmu{{exec}}).ok());
}

}  // namespace

TEST_CASE("topology and reachability matrix") {
  EventLog log;
  Machine m(small(), log);
  CHECK(m.hypervisor_cores().size() == 2);
  CHECK(m.model_cores().size() == 2);
  CHECK(m.regions().size() == 3);
  for (const auto& r : m.regions()) {
    for (auto c : m.hypervisor_cores()) CHECK(m.reachability(c, r.id) == expected_reach(CoreRole::hypervisor, r.kind));
    for (auto c : m.model_cores()) CHECK(m.reachability(c, r.id) == expected_reach(CoreRole::model, r.kind));
  }
  CHECK(m.reachability(m.model_cores().front(), RegionId(9)) == Reach::none);
}

TEST_CASE("model cores never read or write hypervisor DRAM at any address") {
  EventLog log;
  Machine m(small(), log);
  const auto before = m.region_digest(m.hypervisor_region());
  std::uint64_t faults = 0;
  m.set_fault_listener([&](const FaultNotice& n) { faults += n.result == AccessResult::bus_fault; });
  const auto size = m.region(m.hypervisor_region()).size();
  for (auto core : m.model_cores()) {
    for (Address a = 0; a < size + 16; ++a) {
      auto v = m.guest_load(core, m.hypervisor_region(), a);
      REQUIRE_FALSE(v.ok());
      CHECK(v.error() == AccessResult::bus_fault);
      CHECK(m.guest_store(core, m.hypervisor_region(), a, 0xAA) == AccessResult::bus_fault);
    }
  }
  CHECK(faults == 2 * 2 * (size + 16));
  CHECK(m.region_digest(m.hypervisor_region()) == before);
}

TEST_CASE("unknown regions and out-of-range addresses are bus faults") {
  EventLog log;
  Machine m(small(), log);
  const auto core = m.model_cores().front();
  CHECK(m.check_access(core, RegionId(7), 0, AccessKind::read) == AccessResult::bus_fault);
  CHECK(m.check_access(core, m.model_region(), 8192, AccessKind::read) == AccessResult::bus_fault);
  CHECK(m.check_access(m.hypervisor_cores().front(), m.model_region(), 8192, AccessKind::read) ==
        AccessResult::bus_fault);
}

TEST_CASE("pages without an MMU entry have no permissions") {
  EventLog log;
  Machine m(small(), log);
  const auto core = m.model_cores().front();
  CHECK(m.check_access(core, m.model_region(), 0, AccessKind::read) == AccessResult::mmu_fault);
  m.configure_mmu_entry(core, 0, {true, false, false}, MmuOrigin::hypervisor);
  CHECK(m.check_access(core, m.model_region(), 0, AccessKind::read) == AccessResult::allowed);
  CHECK(m.check_access(core, m.model_region(), 0, AccessKind::write) == AccessResult::mmu_fault);
  // Shared IO is data only.
  CHECK(m.check_access(core, m.shared_io_region(), 0, AccessKind::write) == AccessResult::allowed);
  CHECK(m.check_access(core, m.shared_io_region(), 0, AccessKind::execute) == AccessResult::mmu_fault);
}

TEST_CASE("MMU lockdown: executable set never grows under random reconfiguration") {
  std::mt19937_64 rng(0x5eed);
  for (int trial = 0; trial < 20; ++trial) {
    EventLog log;
    Machine m(small(), log);
    const auto core = m.model_cores().front();
    const Address bound = kPageSize * (1 + rng() % 8);
    lock(m, core, {0, bound});
    const auto locked = m.mmu(core).executable_pages();
    const std::set<std::uint64_t> allowed(locked.begin(), locked.end());
    for (int i = 0; i < 500; ++i) {
      const std::uint64_t page = rng() % 40;
      const Permissions p{(rng() & 1) != 0, (rng() & 2) != 0, (rng() & 4) != 0};
      const auto origin = (rng() & 1) ? MmuOrigin::guest : MmuOrigin::hypervisor;
      m.configure_mmu_entry(core, page, p, origin);
      for (auto x : m.mmu(core).executable_pages()) REQUIRE(allowed.contains(x));
      // A second lock with different regions is refused.
      if (i % 100 == 0) {
        auto r = m.control_bus(m.hypervisor_cores().front(), core, LockMmu{{{0, bound + kPageSize}}});
        CHECK(r.status == CommandStatus::mmu_already_locked);
      }
    }
    // Data pages never execute, code pages never read or write.
    for (std::uint64_t page = 0; page < 32; ++page) {
      const Address a = page * kPageSize;
      if (a < bound) {
        CHECK(m.check_access(core, m.model_region(), a, AccessKind::write) == AccessResult::mmu_fault);
        CHECK(m.check_access(core, m.model_region(), a, AccessKind::read) == AccessResult::mmu_fault);
      } else {
        CHECK(m.check_access(core, m.model_region(), a, AccessKind::execute) == AccessResult::mmu_fault);
      }
    }
  }
}

TEST_CASE("control bus") {
  EventLog log;
  Machine m(small(), log);
  const auto hyp = m.hypervisor_cores().front();
  const auto model = m.model_cores().front();

  SUBCASE("only hypervisor cores issue commands") {
    CHECK(m.control_bus(model, model, Pause{}).status == CommandStatus::not_hypervisor_core);
    CHECK(m.control_bus(hyp, hyp, Pause{}).status == CommandStatus::not_model_core);
    CHECK(m.control_bus(hyp, CoreId(99), Pause{}).status == CommandStatus::no_such_core);
  }
  SUBCASE("inspect and modify need a halted core") {
    m.mutable_core(model).run_state = RunState::running;
    CHECK(m.control_bus(hyp, model, InspectState{}).status == CommandStatus::target_not_halted);
    CHECK(m.control_bus(hyp, model, ModifyState{"acc", 5, std::nullopt}).status == CommandStatus::target_not_halted);
    REQUIRE(m.control_bus(hyp, model, Pause{}).ok());
    CHECK(m.control_bus(hyp, model, ModifyState{"acc", 5, 3}).ok());
    auto r = m.control_bus(hyp, model, InspectState{});
    REQUIRE(r.snapshot);
    CHECK(r.snapshot->registers.at("acc") == 5);
    CHECK(r.snapshot->pc == 3);
  }
  SUBCASE("clear_uarch zeroes planted state on a running core") {
    m.mutable_core(model).run_state = RunState::running;
    m.mutable_core(model).uarch_scratch = 0xAB;
    CHECK(m.control_bus(hyp, model, ClearUarch{}).ok());
    CHECK(m.core(model).uarch_scratch == 0);
  }
  SUBCASE("model DRAM reads need halted cores") {
    m.mutable_core(model).run_state = RunState::running;
    auto r = m.read_model_dram(hyp, m.model_region(), 0, 16);
    REQUIRE_FALSE(r.ok());
    CHECK(r.error() == DramError::cores_not_halted);
    m.control_bus(hyp, model, Pause{});
    CHECK(m.read_model_dram(hyp, m.model_region(), 0, 16).ok());
    CHECK_FALSE(m.read_model_dram(model, m.model_region(), 0, 16).ok());
  }
}

TEST_CASE("watchpoint halts before the access and the access replays on resume") {
  EventLog log;
  Machine m(small(), log);
  const auto hyp = m.hypervisor_cores().front();
  const auto core = m.model_cores().front();
  lock(m, core, {0, kPageSize});
  m.control_bus(hyp, core, SetWatchpoint{{m.model_region(), 1000, 1010, AccessKind::write}});
  m.mutable_core(core).run_state = RunState::running;

  CHECK(m.guest_store(core, m.model_region(), 1005, 0x42) == AccessResult::watchpoint_halt);
  CHECK(m.core(core).run_state == RunState::halted);
  auto bytes = m.read_model_dram(hyp, m.model_region(), 1005, 1).value();
  CHECK(bytes[0] == 0);  // the write did not complete

  CHECK(m.control_bus(hyp, core, Resume{}).ok());
  CHECK(m.guest_store(core, m.model_region(), 1005, 0x42) == AccessResult::allowed);
  m.instruction_retired(core);
  // The next access to the watched range trips again.
  CHECK(m.guest_store(core, m.model_region(), 1006, 0x43) == AccessResult::watchpoint_halt);
  m.control_bus(hyp, core, Pause{});
  CHECK(m.read_model_dram(hyp, m.model_region(), 1005, 1).value()[0] == 0x42);
}

TEST_CASE("power down clears model state and power up restarts") {
  EventLog log;
  Machine m(small(), log);
  const auto core = m.model_cores().front();
  m.mutable_core(core).registers["acc"] = 9;
  m.mutable_core(core).uarch_scratch = 7;
  m.power_down_everything();
  CHECK_FALSE(m.hypervisor_powered());
  CHECK(m.core(core).run_state == RunState::powered_down);
  CHECK(m.core(core).registers.at("acc") == 0);
  CHECK(m.core(core).uarch_scratch == 0);
  m.power_up_everything(4);
  CHECK(m.hypervisor_powered());
  CHECK(m.core(core).run_state == RunState::running);
  CHECK(m.core(core).pc == 4);
}
