#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "guillotine/guests/interpreter.hpp"
#include "guillotine/guests/workloads.hpp"

using namespace guillotine;
using namespace guillotine::guests;
namespace m = guillotine::machine;

namespace {

constexpr Address kModelDram = 8192;
constexpr Address kSharedIo = 1024;
constexpr Address kCodeBound = 1024;  // exec region [0, 1024)

struct NullServices final : GuestServices {
  GuestStatus port_write(CoreId, std::uint8_t, std::span<const std::uint8_t>) override { return GuestStatus::ok; }
  void raise_irq(CoreId) override { ++irqs; }
  std::size_t drain_inbound(CoreId) override { return 0; }
  int irqs = 0;
};

Word reg(const m::CoreState& c, const std::string& name) {
  auto it = c.registers.find(name);
  return it == c.registers.end() ? 0 : it->second;
}

// A deliberately plain reference machine: flat arrays and the access rules
// written out directly, with no reachability matrix or MMU objects.
struct Reference {
  std::vector<std::uint8_t> model = std::vector<std::uint8_t>(kModelDram, 0);
  std::vector<std::uint8_t> io = std::vector<std::uint8_t>(kSharedIo, 0);
  std::vector<Instr> prog;
  Word acc = 0, status = 0, faults = 0, scratch = 0, pc = 0, spin = 0;
  bool halted = false;

  // 0 ok, 1 bus fault, 2 mmu fault
  int access(std::uint8_t region, Address a) const {
    if (region == 1) {
      if (a >= kModelDram) return 1;
      return a < kCodeBound ? 2 : 0;  // code pages are execute-only
    }
    if (region == 2) return a < kSharedIo ? 0 : 1;
    return 1;  // hypervisor DRAM and nonexistent regions have no bus
  }
  std::uint8_t* cell(std::uint8_t region, Address a) { return region == 1 ? &model[a] : &io[a]; }

  void fault(Word st, bool fetch) {
    status = st;
    faults += 1;
    pc = fetch ? 0 : pc + 1;
  }

  void step() {
    if (halted) return;
    if (pc >= prog.size()) {  // zero-filled code decodes as an illegal opcode
      fault(3, true);
      return;
    }
    const Instr in = prog[pc];
    switch (in.op) {
      case Op::LOAD:
        if (int r = access(in.r, in.b)) return fault(r, false);
        acc = *cell(in.r, in.b);
        break;
      case Op::STORE:
        if (int r = access(in.r, in.b)) return fault(r, false);
        *cell(in.r, in.b) = static_cast<std::uint8_t>(in.a);
        break;
      case Op::COVERT_SET: scratch = in.b; break;
      case Op::COVERT_GET: acc = scratch; break;
      case Op::SPIN:
        if (spin == 0) spin = in.b == 0 ? 1 : in.b;
        if (--spin > 0) return;
        break;
      case Op::JUMP:
        pc = in.b;
        status = 0;
        return;
      case Op::HALT: halted = true; return;
      default: FAIL("unexpected op"); return;
    }
    status = 0;
    pc += 1;
  }
};

Instr random_instr(std::mt19937_64& rng, std::size_t len) {
  static constexpr std::uint8_t kRegions[] = {0, 1, 1, 2, 2, 7};
  auto addr = [&](std::uint8_t region) -> Address {
    switch (rng() % 4) {
      case 0: return rng() % kCodeBound;
      case 1: return kCodeBound + rng() % 64;
      case 2: return region == 2 ? rng() % kSharedIo : kCodeBound + rng() % (kModelDram - kCodeBound);
      default: return kModelDram + rng() % 64;
    }
  };
  switch (rng() % 10) {
    case 0:
    case 1: {
      const auto r = kRegions[rng() % 6];
      return Instr::load(RegionId(r), addr(r));
    }
    case 2:
    case 3:
    case 4: {
      const auto r = kRegions[rng() % 6];
      return Instr::store(RegionId(r), addr(r), static_cast<std::uint8_t>(rng()));
    }
    case 5: return Instr::covert_set(rng());
    case 6: return Instr::covert_get();
    case 7: return Instr::spin(rng() % 4);
    case 8: return Instr::jump(rng() % (len + 1));
    default: return (rng() % 4 == 0) ? Instr::halt() : Instr::covert_get();
  }
}

}  // namespace

TEST_CASE("encode and decode round trip every opcode") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    Instr in{static_cast<Op>(1 + rng() % kOpCount), static_cast<std::uint8_t>(rng()),
             static_cast<std::uint32_t>(rng()), rng()};
    auto bytes = encode(in);
    auto back = decode(bytes);
    REQUIRE(back);
    CHECK(*back == in);
  }
  std::array<std::uint8_t, kInstrSize> zero{};
  CHECK_FALSE(decode(zero));
  zero[0] = static_cast<std::uint8_t>(kOpCount + 1);
  CHECK_FALSE(decode(zero));
}

TEST_CASE("program JSON round trip for the whole workload library") {
  for (const auto& w : workload_library()) {
    CAPTURE(w.program.name);
    const Address dram = w.scenario_overrides.contains("topology")
                             ? w.scenario_overrides["topology"].value("model_dram", Address{64 * 1024})
                             : Address{64 * 1024};
    CHECK_FALSE(validate(w.program, dram));
    auto back = program_from_json(to_json(w.program));
    CHECK(back == w.program);
  }
}

TEST_CASE("validation rejects malformed programs") {
  GuestProgram p;
  p.instructions = {Instr::halt()};
  CHECK_FALSE(validate(p, kModelDram));
  auto bad = p;
  bad.instructions.clear();
  CHECK(validate(bad, kModelDram));
  bad = p;
  bad.entry_point = 1;
  CHECK(validate(bad, kModelDram));
  bad = p;
  bad.exec_region = {0, 100};
  CHECK(validate(bad, kModelDram));
  bad = p;
  bad.data = {{100, {1, 2, 3}}};
  CHECK(validate(bad, kModelDram));  // overlaps code
  bad = p;
  bad.data = {{kModelDram - 1, {1, 2}}};
  CHECK(validate(bad, kModelDram));
  CHECK_THROWS_AS(program_from_json(Json{{"instructions", Json::array({{{"op", "FLY"}}})}}),
                  std::invalid_argument);
}

TEST_CASE("every PORT_WRITE in the library sends bytes from a data segment") {
  for (const auto& w : workload_library()) {
    for (const auto& in : w.program.instructions) {
      // Writes larger than a slot are deliberate probes; the broker refuses them.
      if (in.op != Op::PORT_WRITE || in.a > 256) continue;
      bool covered = false;
      for (const auto& seg : w.program.data) {
        covered |= in.b >= seg.addr && in.b + in.a <= seg.addr + seg.bytes.size();
      }
      CAPTURE(w.program.name);
      CAPTURE(in.b);
      CHECK(covered);
    }
  }
}

TEST_CASE("interpreter agrees with a reference model on random programs") {
  std::mt19937_64 rng(0xC0FFEE);
  for (int trial = 0; trial < 300; ++trial) {
    EventLog log;
    m::TopologyParams tp;
    tp.model_cores = 1;
    tp.hypervisor_dram = 1024;
    tp.model_dram = kModelDram;
    tp.shared_io = kSharedIo;
    m::Machine mach(tp, log);
    NullServices services;
    Interpreter interp(mach, log, services);

    GuestProgram prog;
    prog.exec_region = {0, kCodeBound};
    prog.fault_handler.next = true;
    const std::size_t len = 4 + rng() % 28;
    for (std::size_t i = 0; i < len; ++i) prog.instructions.push_back(random_instr(rng, len));
    REQUIRE_FALSE(validate(prog, kModelDram));
    interp.install(prog);

    const auto hyp = mach.hypervisor_cores().front();
    const auto core = mach.model_cores().front();
    mach.write_model_dram(hyp, mach.model_region(), 0, prog.code_image()).value();
    for (std::uint64_t page = 0; page < kModelDram / m::kPageSize; ++page) {
      const bool code = page * m::kPageSize < kCodeBound;
      mach.configure_mmu_entry(core, page, {!code, !code, code}, m::MmuOrigin::hypervisor);
    }
    REQUIRE(mach.control_bus(hyp, core, m::LockMmu{{prog.exec_region}}).ok());
    mach.mutable_core(core).run_state = m::RunState::running;

    Reference ref;
    ref.prog = prog.instructions;
    const auto image = prog.code_image();
    std::copy(image.begin(), image.end(), ref.model.begin());
    for (int s = 0; s < 200; ++s) {
      interp.step(core);
      ref.step();
      const auto& c = mach.core(core);
      REQUIRE(c.pc == ref.pc);
      REQUIRE(reg(c, "acc") == ref.acc);
      REQUIRE(reg(c, "status") == ref.status);
      REQUIRE(reg(c, "faults") == ref.faults);
      REQUIRE(c.uarch_scratch == ref.scratch);
      REQUIRE(c.guest_halted == ref.halted);
      if (ref.halted) break;
    }
    mach.control_bus(hyp, core, m::Pause{});
    CHECK(mach.read_model_dram(hyp, mach.model_region(), 0, kModelDram).value() == ref.model);
    CHECK(mach.read_shared_io(hyp, 0, kSharedIo).value() == ref.io);
  }
}

TEST_CASE("guest MAP_PAGE cannot make data executable after lock") {
  EventLog log;
  m::TopologyParams tp;
  tp.model_dram = kModelDram;
  m::Machine mach(tp, log);
  NullServices services;
  Interpreter interp(mach, log, services);
  GuestProgram prog;
  prog.exec_region = {0, kCodeBound};
  prog.fault_handler.next = true;
  prog.instructions = {Instr::map_page(10, {true, true, true}), Instr::halt()};
  interp.install(prog);
  const auto hyp = mach.hypervisor_cores().front();
  const auto core = mach.model_cores().front();
  mach.write_model_dram(hyp, mach.model_region(), 0, prog.code_image()).value();
  for (std::uint64_t page = 0; page < kModelDram / m::kPageSize; ++page) {
    const bool code = page * m::kPageSize < kCodeBound;
    mach.configure_mmu_entry(core, page, {!code, !code, code}, m::MmuOrigin::hypervisor);
  }
  mach.control_bus(hyp, core, m::LockMmu{{prog.exec_region}});
  mach.mutable_core(core).run_state = m::RunState::running;
  CHECK(interp.step(core).kind == StepKind::faulted);
  CHECK(reg(mach.core(core), "status") == static_cast<Word>(GuestStatus::mmu_fault));
  CHECK_FALSE(mach.mmu(core).perms(10).executable);
}
