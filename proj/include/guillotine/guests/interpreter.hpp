#pragma once

#include <cstdint>
#include <span>

#include "guillotine/guests/isa.hpp"
#include "guillotine/machine.hpp"

namespace guillotine::guests {

/// Values the guest sees in its `status` register after an instruction.
enum class GuestStatus : Word {
  ok = 0,
  bus_fault = 1,
  mmu_fault = 2,
  illegal_instruction = 3,
  ring_full = 10,
  revoked_port = 11,
  restricted_op = 12,
  no_such_port = 13,
  payload_too_large = 14,
};

/// The only services a guest can reach beyond its own memory: the port API
/// and the interrupt line. Implemented by the deployment.
class GuestServices {
 public:
  virtual ~GuestServices() = default;
  virtual GuestStatus port_write(CoreId core, std::uint8_t slot,
                                 std::span<const std::uint8_t> payload) = 0;
  virtual void raise_irq(CoreId core) = 0;
  /// Guest-local interrupt handling: consume responses the broker placed in
  /// shared IO DRAM for this core. Returns how many were taken.
  virtual std::size_t drain_inbound(CoreId core) = 0;
};

enum class StepKind { executed, faulted, guest_halted, watchpoint, spinning, not_running };

struct StepResult {
  StepKind kind = StepKind::not_running;
  Op op = Op::HALT;
};

/// Executes guest instructions one at a time. Faults are handled locally by
/// redirecting the core to the program's fault handler; the hypervisor is
/// never involved in that control transfer.
class Interpreter final : public machine::InstructionExecutor {
 public:
  Interpreter(machine::Machine& machine, EventLog& log, GuestServices& services);

  void install(const GuestProgram& program);
  [[nodiscard]] bool installed() const noexcept { return installed_; }
  [[nodiscard]] const GuestProgram& program() const noexcept { return program_; }

  StepResult step(CoreId core);
  void execute_one(CoreId core) override { step(core); }

  [[nodiscard]] std::uint64_t entry_point_for(CoreId core) const;

 private:
  StepResult fault(machine::CoreState& core, GuestStatus status, bool fetch_fault, Op op);

  machine::Machine& machine_;
  EventLog& log_;
  GuestServices& services_;
  GuestProgram program_;
  bool installed_ = false;
};

}  // namespace guillotine::guests
