#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "guillotine/common.hpp"
#include "guillotine/crypto.hpp"
#include "guillotine/event_log.hpp"
#include "guillotine/machine.hpp"

namespace guillotine::guests {

// The whole guest ISA. Nothing here names a device, a hypervisor register,
// or any hypervisor-only structure; LOAD/STORE take a bus-level region id and
// simply fault when the core has no bus to that region.
enum class Op : std::uint8_t {
  LOAD = 1,        // acc <- mem[region][addr]
  STORE,           // mem[region][addr] <- val
  PORT_WRITE,      // send mem[model_dram][addr .. addr+len) on port slot
  MAP_PAGE,        // request page permissions from the MMU
  WRITE_CODE,      // mem[model_dram][addr] <- val, aimed at code pages
  COVERT_SET,      // uarch_scratch <- val
  COVERT_GET,      // acc <- uarch_scratch
  RAISE_IRQ,       // interrupt a hypervisor core with no request attached
  SPIN,            // busy-wait n ticks
  JUMP,            // pc <- idx
  HALT,
};

inline constexpr std::size_t kOpCount = 11;
inline constexpr std::size_t kInstrSize = 16;

std::string to_string(Op op);
std::optional<Op> op_from_string(std::string_view s);

struct Instr {
  Op op = Op::HALT;
  std::uint8_t r = 0;   // region id, port slot, or permission bits
  std::uint32_t a = 0;  // value or length
  std::uint64_t b = 0;  // address, page, count, index, or value

  static Instr load(RegionId region, Address addr) { return {Op::LOAD, static_cast<std::uint8_t>(region.value), 0, addr}; }
  static Instr store(RegionId region, Address addr, std::uint8_t val) {
    return {Op::STORE, static_cast<std::uint8_t>(region.value), val, addr};
  }
  static Instr port_write(std::uint8_t slot, Address addr, std::uint32_t len) {
    return {Op::PORT_WRITE, slot, len, addr};
  }
  static Instr map_page(std::uint64_t page, machine::Permissions p);
  static Instr write_code(Address addr, std::uint8_t val) { return {Op::WRITE_CODE, 0, val, addr}; }
  static Instr covert_set(Word val) { return {Op::COVERT_SET, 0, 0, val}; }
  static Instr covert_get() { return {Op::COVERT_GET, 0, 0, 0}; }
  static Instr raise_irq() { return {Op::RAISE_IRQ, 0, 0, 0}; }
  static Instr spin(std::uint64_t n) { return {Op::SPIN, 0, 0, n}; }
  static Instr jump(std::uint64_t idx) { return {Op::JUMP, 0, 0, idx}; }
  static Instr halt() { return {Op::HALT, 0, 0, 0}; }

  [[nodiscard]] machine::Permissions perms() const noexcept {
    return {(r & 1) != 0, (r & 2) != 0, (r & 4) != 0};
  }

  friend bool operator==(const Instr&, const Instr&) = default;
};

std::array<std::uint8_t, kInstrSize> encode(const Instr& instr);
/// Fails on an unknown opcode (illegal instruction).
std::optional<Instr> decode(std::span<const std::uint8_t> bytes);

struct DataSegment {
  Address addr = 0;
  crypto::Bytes bytes;
  friend bool operator==(const DataSegment&, const DataSegment&) = default;
};

/// Where a faulting guest resumes. `next` models a handler that records the
/// fault and returns past the faulting instruction; fetch faults under `next`
/// return to the entry point.
struct FaultHandler {
  bool next = false;
  std::uint64_t index = 0;
  friend bool operator==(const FaultHandler&, const FaultHandler&) = default;
};

struct GuestProgram {
  std::string name;
  std::string expected_outcome;
  std::vector<Instr> instructions;
  machine::ExecRegion exec_region{0, 4096};
  std::uint64_t entry_point = 0;
  FaultHandler fault_handler;
  std::vector<DataSegment> data;
  /// Optional per-model-core entry points; cores without one use entry_point.
  std::vector<std::uint64_t> core_entry_points;

  [[nodiscard]] Address instr_addr(std::uint64_t index) const noexcept {
    return exec_region.base + index * kInstrSize;
  }
  /// Code image as laid out in the executable region.
  [[nodiscard]] crypto::Bytes code_image() const;

  friend bool operator==(const GuestProgram&, const GuestProgram&) = default;
};

/// Returns the first problem found, or nullopt when the program is well formed
/// for a model DRAM of `model_dram_size` bytes.
std::optional<std::string> validate(const GuestProgram& program, Address model_dram_size);

Json to_json(const GuestProgram& program);
/// Throws std::invalid_argument with a description on malformed input.
GuestProgram program_from_json(const Json& j);

}  // namespace guillotine::guests
