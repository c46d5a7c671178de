#pragma once

#include <optional>
#include <string>
#include <vector>

#include "guillotine/guests/isa.hpp"
#include "guillotine/ports.hpp"

namespace guillotine::guests {

struct WorkloadPort {
  ports::DeviceClass device_class = ports::DeviceClass::network;
  std::uint32_t device_instance = 0;
  std::uint8_t slot = 0;
};

struct Workload {
  GuestProgram program;
  std::vector<WorkloadPort> ports;
  /// Scenario fields this workload needs (merged under the scenario's own).
  Json scenario_overrides = Json::object();
  bool adversarial = true;
};

/// Number of RAISE_IRQ instructions in the interrupt flood.
inline constexpr std::size_t kFloodInterrupts = 10000;
/// Request pairs the benign echo sends before halting.
inline constexpr int kBenignRounds = 10;

/// The deterministic workload library, adversarial programs first and the
/// benign echo last.
std::vector<Workload> workload_library();
std::optional<Workload> find_workload(std::string_view name);

}  // namespace guillotine::guests
