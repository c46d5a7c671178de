#include "guillotine/guests/interpreter.hpp"

namespace guillotine::guests {
namespace {

GuestStatus status_of(machine::AccessResult r) {
  return r == machine::AccessResult::bus_fault ? GuestStatus::bus_fault : GuestStatus::mmu_fault;
}

}  // namespace

Interpreter::Interpreter(machine::Machine& machine, EventLog& log, GuestServices& services)
    : machine_(machine), log_(log), services_(services) {
  machine_.set_executor(this);
}

void Interpreter::install(const GuestProgram& program) {
  program_ = program;
  installed_ = true;
}

std::uint64_t Interpreter::entry_point_for(CoreId core) const {
  const auto& models = machine_.model_cores();
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i] == core && i < program_.core_entry_points.size()) {
      return program_.core_entry_points[i];
    }
  }
  return program_.entry_point;
}

StepResult Interpreter::fault(machine::CoreState& core, GuestStatus status, bool fetch_fault,
                              Op op) {
  const auto faulting_pc = core.pc;
  core.registers["status"] = static_cast<Word>(status);
  core.registers["faults"] += 1;
  if (program_.fault_handler.next) {
    core.pc = fetch_fault ? entry_point_for(core.id) : core.pc + 1;
  } else {
    core.pc = program_.fault_handler.index;
  }
  log_.append("guests", "guest_fault",
              {{"core", core.id.value},
               {"pc", faulting_pc},
               {"status", static_cast<Word>(status)},
               {"handler_pc", core.pc}});
  machine_.instruction_retired(core.id);
  return {StepKind::faulted, op};
}

StepResult Interpreter::step(CoreId id) {
  auto& core = machine_.mutable_core(id);
  if (!installed_ || core.role != machine::CoreRole::model) return {};
  if (core.run_state != machine::RunState::running &&
      core.run_state != machine::RunState::single_stepping) {
    return {};
  }

  if (auto taken = services_.drain_inbound(id); taken > 0) {
    core.registers["irqs"] += taken;
    core.registers["rx"] += taken;
  }

  auto fetched = machine_.guest_fetch(id, program_.instr_addr(core.pc), kInstrSize);
  if (!fetched) {
    if (fetched.error() == machine::AccessResult::watchpoint_halt) return {StepKind::watchpoint, Op::HALT};
    return fault(core, status_of(fetched.error()), true, Op::HALT);
  }
  auto decoded = decode(fetched.value());
  if (!decoded) return fault(core, GuestStatus::illegal_instruction, true, Op::HALT);
  const Instr in = *decoded;

  auto data_fault = [&](machine::AccessResult r) -> StepResult {
    if (r == machine::AccessResult::watchpoint_halt) return {StepKind::watchpoint, in.op};
    return fault(core, status_of(r), false, in.op);
  };

  switch (in.op) {
    case Op::LOAD: {
      auto v = machine_.guest_load(id, RegionId(in.r), in.b);
      if (!v) return data_fault(v.error());
      core.registers["acc"] = v.value();
      break;
    }
    case Op::STORE:
    case Op::WRITE_CODE: {
      const RegionId region = in.op == Op::STORE ? RegionId(in.r) : machine_.model_region();
      auto r = machine_.guest_store(id, region, in.b, static_cast<std::uint8_t>(in.a));
      if (r != machine::AccessResult::allowed) return data_fault(r);
      break;
    }
    case Op::PORT_WRITE: {
      crypto::Bytes payload;
      payload.reserve(in.a);
      for (std::uint32_t i = 0; i < in.a; ++i) {
        auto v = machine_.guest_load(id, machine_.model_region(), in.b + i);
        if (!v) return data_fault(v.error());
        payload.push_back(v.value());
      }
      core.registers["status"] = static_cast<Word>(services_.port_write(id, in.r, payload));
      core.pc += 1;
      machine_.instruction_retired(id);
      return {StepKind::executed, in.op};
    }
    case Op::MAP_PAGE: {
      auto r = machine_.configure_mmu_entry(id, in.b, in.perms(), machine::MmuOrigin::guest);
      if (r != machine::MmuResult::ok) return fault(core, GuestStatus::mmu_fault, false, in.op);
      break;
    }
    case Op::COVERT_SET: core.uarch_scratch = in.b; break;
    case Op::COVERT_GET: core.registers["acc"] = core.uarch_scratch; break;
    case Op::RAISE_IRQ: services_.raise_irq(id); break;
    case Op::SPIN: {
      if (core.spin_remaining == 0) core.spin_remaining = in.b == 0 ? 1 : in.b;
      core.spin_remaining -= 1;
      if (core.spin_remaining > 0) return {StepKind::spinning, in.op};
      break;
    }
    case Op::JUMP:
      core.pc = in.b;
      core.registers["status"] = static_cast<Word>(GuestStatus::ok);
      machine_.instruction_retired(id);
      return {StepKind::executed, in.op};
    case Op::HALT:
      core.guest_halted = true;
      core.run_state = machine::RunState::halted;
      machine_.instruction_retired(id);
      log_.append("guests", "guest_halt", {{"core", id.value}, {"pc", core.pc}});
      return {StepKind::guest_halted, in.op};
  }
  core.registers["status"] = static_cast<Word>(GuestStatus::ok);
  core.pc += 1;
  machine_.instruction_retired(id);
  return {StepKind::executed, in.op};
}

}  // namespace guillotine::guests
